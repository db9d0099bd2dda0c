"""Short-term episodic memory built from four collaborating components:

* a fixed random top-k projection that gives every study sample a
  near-orthogonal sparse code (separation),
* a graded Hopfield auto-associator that stores those codes as attractors
  (completion),
* a two-layer net trained against the sparse codes as self-generated labels,
  whose output cues the Hopfield net at recall (retrieval),
* a two-layer net mapping settled attractor states back to image space
  (grounding).

Everything learned here lives for exactly one study/recall episode; a fresh
instance is constructed per evaluation, which is what "reset" means.
"""

from dataclasses import dataclass, field

import numpy as np

from .nn import DenseNet2, topk_mask

CUE_EPS = 1e-12  # smallest admissible strictly-positive cue entry


class DegeneratePatternError(ValueError):
    """Raised when the pattern set cannot be stored (duplicate patterns)."""


class DegenerateCueError(ValueError):
    """Raised when a retrieval cue carries no signal at all."""


@dataclass(frozen=True)
class PsConfig:
    units: int = 225
    k: int = 10
    inhibition_decay: float = 0.95
    knockout: float = 0.25


@dataclass(frozen=True)
class PcConfig:
    units: int = 225
    gain: float = 2.7
    cells_per_step: int = 20
    iterations: int = 70


@dataclass(frozen=True)
class ConditioningParams:
    gain: float = 10.0
    k: int = 10


@dataclass(frozen=True)
class StmConfig:
    ps: PsConfig = field(default_factory=PsConfig)
    pc: PcConfig = field(default_factory=PcConfig)
    conditioning: ConditioningParams = field(default_factory=ConditioningParams)
    pr_hidden: int = 1000
    pr_lr: float = 0.01
    pr_l2: float = 2.5e-5
    pm_hidden: int = 100
    pm_lr: float = 0.01
    pm_l2: float = 4e-4
    train_steps: int = 60


# ---------------------------------------------------------------------------
# pattern separation

class PatternSeparator:
    """Fixed random projection with top-k competition and refractory
    inhibition.  The weights never train; separation comes from the random
    wiring, per-unit weight knockout and the rotation forced by inhibition.
    """

    def __init__(self, input_dim, cfg=PsConfig(), seed=0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.W = rng.random((cfg.units, input_dim))
        n_knock = int(cfg.knockout * input_dim)
        for unit in range(cfg.units):
            if n_knock:
                drop = rng.choice(input_dim, size=n_knock, replace=False)
                self.W[unit, drop] = 0.0
        self.inhibition = np.zeros(cfg.units)

    def reset_inhibition(self):
        self.inhibition[:] = 0.0

    def forward(self, features, sequential_inhibition=False):
        """Return (patterns, supports) for a batch, processed in order.

        With sequential inhibition, each sample's winners are refractory for
        the following samples: their gate drops to zero and recovers by the
        decay factor per presentation.
        """
        X = np.atleast_2d(np.asarray(features, dtype=float))
        n = X.shape[0]
        patterns = np.zeros((n, self.cfg.units))
        supports = np.zeros((n, self.cfg.units))
        for i in range(n):
            z = self.W @ X[i]
            gate = (1.0 - self.inhibition) * z
            m = topk_mask(gate, self.cfg.k)
            patterns[i] = m * z
            supports[i] = m
            if sequential_inhibition:
                self.inhibition[m > 0] = 1.0
                self.inhibition *= self.cfg.inhibition_decay
        return patterns, supports


# ---------------------------------------------------------------------------
# conditioning between components

def memorise_cue(patterns):
    """Map nonnegative sparse patterns to bipolar vectors: +1 on the support,
    -1 elsewhere."""
    X = np.asarray(patterns, dtype=float)
    if (X < 0).any():
        raise ValueError("sparse patterns must be nonnegative")
    return np.where(X > 0, 1.0, -1.0)


def retrieval_cue(outputs, params=ConditioningParams()):
    """Condition retrieval-net outputs into Hopfield cues in [-1, 1].

    Per sample: L1-normalise with a gain, map to [-1, 1], then shift so the
    k strongest entries (index tie-break) are the only strictly positive
    ones.  Everything negative acts as inhibition during convergence.
    """
    Y = np.atleast_2d(np.asarray(outputs, dtype=float))
    if params.k >= Y.shape[1]:
        raise ValueError(f"k={params.k} must be below the unit count {Y.shape[1]}")
    sums = Y.sum(axis=1)
    if (sums <= 0).any():
        raise DegenerateCueError("retrieval output sums to zero")
    V = 2.0 * (params.gain * Y / sums[:, None]) - 1.0
    order = np.argsort(-V, axis=1, kind="stable")
    ranked = np.take_along_axis(V, order, axis=1)
    theta = -(ranked[:, params.k - 1] + ranked[:, params.k]) / 2.0
    out = V + theta[:, None]
    # ties or rounding can collapse the k/k+1 gap; pin the sign structure
    top, rest = order[:, :params.k], order[:, params.k:]
    np.put_along_axis(out, top,
                      np.maximum(np.take_along_axis(out, top, axis=1), CUE_EPS), axis=1)
    np.put_along_axis(out, rest,
                      np.minimum(np.take_along_axis(out, rest, axis=1), 0.0), axis=1)
    out = np.clip(out, -1.0, 1.0)
    return out[0] if np.asarray(outputs).ndim == 1 else out


# ---------------------------------------------------------------------------
# pattern completion

class HopfieldMemory:
    """Graded Hopfield auto-associator with pseudoinverse storage.

    Neurons take values in [-1, 1] via tanh; a fixed random update order is
    walked round-robin, a small block of cells per iteration.
    """

    def __init__(self, cfg=PcConfig(), seed=0):
        self.cfg = cfg
        self.W = np.zeros((cfg.units, cfg.units))
        self.update_order = np.random.default_rng(seed).permutation(cfg.units)
        self.stored = None

    def store(self, patterns):
        """Learn recurrent weights making each bipolar pattern a fixed point.

        Pseudoinverse rule: W = X (X^T X)^-1 X^T over column-stacked
        patterns, diagonal zeroed.  A small ridge keeps near-duplicates
        invertible; exact duplicates are rejected.
        """
        P = np.asarray(patterns, dtype=float)
        if P.ndim != 2 or not (1 <= P.shape[0] <= self.cfg.units):
            raise ValueError(f"need 1..{self.cfg.units} patterns, got {P.shape}")
        if P.shape[1] != self.cfg.units:
            raise ValueError(f"pattern width {P.shape[1]} != {self.cfg.units}")
        if not np.all(np.abs(P) == 1.0):
            raise ValueError("patterns must be bipolar (+1/-1)")
        if np.unique(P, axis=0).shape[0] != P.shape[0]:
            raise DegeneratePatternError("duplicate patterns cannot be stored")
        X = P.T
        gram = X.T @ X + 1e-6 * np.eye(P.shape[0])
        self.W = X @ np.linalg.solve(gram, X.T)
        np.fill_diagonal(self.W, 0.0)
        self.stored = P.copy()

    def converge(self, cue, record_states=False):
        """Settle the network from a cue; returns the final graded state."""
        s = np.array(cue, dtype=float).copy()
        if s.shape != (self.cfg.units,):
            raise ValueError(f"cue shape {s.shape} != ({self.cfg.units},)")
        n = self.cfg.cells_per_step
        history = [s.copy()]
        for step in range(self.cfg.iterations):
            idx = self.update_order[(step * n + np.arange(n)) % self.cfg.units]
            s[idx] = np.tanh(self.cfg.gain * (self.W[idx] @ s))
            if record_states:
                history.append(s.copy())
        return (s, history) if record_states else s

    def energy(self, state):
        return -0.5 * state @ self.W @ state


# ---------------------------------------------------------------------------
# the assembled short-term memory

@dataclass
class RecallResult:
    pr_out: np.ndarray   # retrieval-net estimates in (0, 1), one row per cue
    pc_out: np.ndarray   # settled attractor states in [-1, 1]
    images: np.ndarray   # grounded reconstructions, flattened image space


class ShortTermMemory:
    """One-exposure episodic memory over feature vectors.

    Build a fresh instance per evaluation: construction *is* the reset, every
    learned parameter and optimiser moment starts from the seed.
    """

    def __init__(self, input_dim, image_dim, cfg=StmConfig(), seed=0):
        self.cfg = cfg
        s_ps, s_pr, s_pc, s_pm = np.random.SeedSequence(seed).spawn(4)
        self.ps = PatternSeparator(input_dim, cfg.ps, s_ps)
        self.pr = DenseNet2(input_dim, cfg.pr_hidden, cfg.ps.units,
                            act_hidden="leaky_relu", act_out="sigmoid",
                            lr=cfg.pr_lr, l2=cfg.pr_l2, seed=s_pr)
        self.pc = HopfieldMemory(cfg.pc, s_pc)
        self.pm = DenseNet2(cfg.ps.units, cfg.pm_hidden, image_dim,
                            act_hidden="leaky_relu", act_out="leaky_relu",
                            lr=cfg.pm_lr, l2=cfg.pm_l2, seed=s_pm)
        self.study_targets = None
        self.engrams = None
        self.study_images = None

    def study(self, features, images):
        """Memorise one episode: separate once (with inhibition), store the
        engrams, then train retrieval and grounding on the constant batch."""
        X = np.atleast_2d(np.asarray(features, dtype=float))
        imgs = np.atleast_2d(np.asarray(images, dtype=float))
        patterns, supports = self.ps.forward(X, sequential_inhibition=True)
        engrams = memorise_cue(patterns)
        self.pc.store(engrams)
        for _ in range(self.cfg.train_steps):
            self.pr.train_step(X, supports, "multilabel_xent")
        for _ in range(self.cfg.train_steps):
            self.pm.train_step(engrams, imgs, "mse")
        self.study_targets = supports
        self.engrams = engrams
        self.study_images = imgs

    def recall(self, features):
        """Retrieve for a batch of cue features; study must have happened."""
        if self.engrams is None:
            raise RuntimeError("recall before study")
        X = np.atleast_2d(np.asarray(features, dtype=float))
        _, pr_out = self.pr.forward(X)
        cues = retrieval_cue(pr_out, self.cfg.conditioning)
        pc_out = np.stack([self.pc.converge(c) for c in cues])
        _, images = self.pm.forward(pc_out)
        return RecallResult(pr_out=pr_out, pc_out=pc_out, images=images)
