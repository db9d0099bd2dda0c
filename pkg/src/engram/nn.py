"""Hand-rolled numerical substrate for the shallow networks used in this package.

Everything here is plain numpy: dense two-layer nets with Adam, the two loss
functions, 2-D convolution and pooling, top-k competition and Gaussian/DoG
kernels.  There is deliberately no general autodiff; every network in the
system backpropagates across at most two layers.
"""

from dataclasses import dataclass

import numpy as np

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
LEAKY_SLOPE = 0.01
XENT_CLAMP = 1e-7


class TrainingDivergedError(RuntimeError):
    """Raised when a training step produces a non-finite loss."""


# ---------------------------------------------------------------------------
# activations

def leaky_relu(x):
    return np.where(x >= 0, x, LEAKY_SLOPE * x)


def _d_leaky_relu(x):
    return np.where(x >= 0, 1.0, LEAKY_SLOPE)


def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _d_sigmoid(x):
    s = sigmoid(x)
    return s * (1.0 - s)


ACTIVATIONS = {
    "leaky_relu": (leaky_relu, _d_leaky_relu),
    "sigmoid": (sigmoid, _d_sigmoid),
    "linear": (lambda x: x, lambda x: np.ones_like(x)),
}


# ---------------------------------------------------------------------------
# losses

def loss_mse(a, b):
    """Mean squared elementwise difference."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    d = a - b
    return float(np.mean(d * d))


def loss_multilabel_xent(pred, target):
    """Mean binary cross-entropy over all elements, clamped away from log(0)."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    p = np.clip(pred, XENT_CLAMP, 1.0 - XENT_CLAMP)
    return float(np.mean(-(target * np.log(p) + (1.0 - target) * np.log(1.0 - p))))


# ---------------------------------------------------------------------------
# top-k

def topk_mask(v, k):
    """Binary mask selecting the k largest values of v, ties to the lowest index."""
    v = np.asarray(v)
    if k > v.shape[-1]:
        raise ValueError(f"k={k} exceeds vector length {v.shape[-1]}")
    # stable argsort of the negated values ranks ties by original position
    idx = np.argsort(-v, axis=-1, kind="stable")[..., :k]
    mask = np.zeros_like(v, dtype=float)
    np.put_along_axis(mask, idx, 1.0, axis=-1)
    return mask


# ---------------------------------------------------------------------------
# Adam

class Adam:
    """Adam optimiser over a dict of named parameter arrays, updated in place."""

    def __init__(self, lr, beta1=ADAM_BETA1, beta2=ADAM_BETA2, eps=ADAM_EPS):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params, grads):
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            p = params[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


# ---------------------------------------------------------------------------
# two-layer dense network

class DenseNet2:
    """Fully-connected net with exactly two trainable layers, trained with Adam.

    Weight gradients carry an extra decoupled L2 term ``l2 * w``; biases are
    not regularised.  ``reset`` re-draws the weights and zeroes the optimiser
    moments, which is how the short-term components forget between episodes.
    """

    def __init__(self, in_dim, hidden_dim, out_dim, act_hidden="leaky_relu",
                 act_out="sigmoid", lr=0.01, l2=0.0, seed=0, dtype=np.float64):
        if act_hidden not in ACTIVATIONS or act_out not in ACTIVATIONS:
            raise ValueError(f"unknown activation: {act_hidden!r}/{act_out!r}")
        self.in_dim = in_dim
        self.hidden_dim = hidden_dim
        self.out_dim = out_dim
        self.act_hidden = act_hidden
        self.act_out = act_out
        self.lr = lr
        self.l2 = l2
        self.dtype = np.dtype(dtype)
        self.reset(seed)

    def reset(self, seed):
        rng = np.random.default_rng(seed)
        s1 = 1.0 / np.sqrt(self.in_dim)
        s2 = 1.0 / np.sqrt(self.hidden_dim)
        self.W1 = rng.uniform(-s1, s1, size=(self.hidden_dim, self.in_dim)).astype(self.dtype)
        self.b1 = np.zeros(self.hidden_dim, dtype=self.dtype)
        self.W2 = rng.uniform(-s2, s2, size=(self.out_dim, self.hidden_dim)).astype(self.dtype)
        self.b2 = np.zeros(self.out_dim, dtype=self.dtype)
        self.opt = Adam(self.lr)

    def _params(self):
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}

    def forward(self, x):
        """Return (hidden, out) activations for a sample or a (batch, in) matrix."""
        x = np.asarray(x, dtype=self.dtype)
        single = x.ndim == 1
        X = np.atleast_2d(x)
        if X.shape[1] != self.in_dim:
            raise ValueError(f"input dim {X.shape[1]} != {self.in_dim}")
        fh = ACTIVATIONS[self.act_hidden][0]
        fo = ACTIVATIONS[self.act_out][0]
        H = fh(X @ self.W1.T + self.b1)
        O = fo(H @ self.W2.T + self.b2)
        if single:
            return H[0], O[0]
        return H, O

    def _gradients(self, inputs, targets, loss):
        X = np.atleast_2d(np.asarray(inputs, dtype=self.dtype))
        T = np.atleast_2d(np.asarray(targets, dtype=self.dtype))
        if X.shape[0] != T.shape[0]:
            raise ValueError(f"batch mismatch: {X.shape[0]} inputs vs {T.shape[0]} targets")
        if X.shape[1] != self.in_dim or T.shape[1] != self.out_dim:
            raise ValueError(f"dims ({X.shape[1]},{T.shape[1]}) != ({self.in_dim},{self.out_dim})")
        fh, dfh = ACTIVATIONS[self.act_hidden]
        fo, dfo = ACTIVATIONS[self.act_out]

        Hp = X @ self.W1.T + self.b1
        H = fh(Hp)
        Op = H @ self.W2.T + self.b2
        O = fo(Op)
        n = O.size

        if loss == "mse":
            value = float(np.mean((O - T) ** 2))
            dO = 2.0 * (O - T) / n
            dOp = dO * dfo(Op)
        elif loss == "multilabel_xent":
            P = np.clip(O, XENT_CLAMP, 1.0 - XENT_CLAMP)
            value = float(np.mean(-(T * np.log(P) + (1.0 - T) * np.log(1.0 - P))))
            if self.act_out == "sigmoid":
                # fused form: exact and stable where the generic chain
                # underflows for saturated units
                dOp = (O - T) / n
            else:
                dOp = (-(T / P) + (1.0 - T) / (1.0 - P)) / n * dfo(Op)
        else:
            raise ValueError(f"unknown loss: {loss!r}")
        gW2 = dOp.T @ H + self.l2 * self.W2
        gb2 = dOp.sum(axis=0)
        dH = dOp @ self.W2
        dHp = dH * dfh(Hp)
        gW1 = dHp.T @ X + self.l2 * self.W1
        gb1 = dHp.sum(axis=0)
        return value, {"W1": gW1, "b1": gb1, "W2": gW2, "b2": gb2}

    def train_step(self, inputs, targets, loss):
        """One backprop + Adam step; returns the pre-update batch-mean loss."""
        value, grads = self._gradients(inputs, targets, loss)
        if not np.isfinite(value):
            raise TrainingDivergedError(f"non-finite loss {value}")
        self.opt.step(self._params(), grads)
        return value


# ---------------------------------------------------------------------------
# convolution and pooling

@dataclass
class ConvLayer:
    """A bank of single-channel filters, shape (f, 1, f_h, f_w)."""

    filters: np.ndarray
    stride: int = 1
    tied_decode: bool = True
    trained: bool = False


def im2col(image, f_h, f_w, stride):
    """Extract valid-padding patches as rows of an (n_h * n_w, f_h * f_w) matrix."""
    image = np.asarray(image)
    h, w = image.shape
    if h < f_h or w < f_w:
        raise ValueError(f"image {image.shape} smaller than filter ({f_h},{f_w})")
    n_h = (h - f_h) // stride + 1
    n_w = (w - f_w) // stride + 1
    sh, sw = image.strides
    windows = np.lib.stride_tricks.as_strided(
        image, shape=(n_h, n_w, f_h, f_w),
        strides=(sh * stride, sw * stride, sh, sw), writeable=False)
    return windows.reshape(n_h * n_w, f_h * f_w), n_h, n_w


def conv2d(image, layer):
    """Valid-padding cross-correlation of a 2-D image with every filter.

    Returns an (f, H', W') volume with H' = (H - f_h) // stride + 1.
    """
    f, _, f_h, f_w = layer.filters.shape
    rows, n_h, n_w = im2col(image, f_h, f_w, layer.stride)
    bank = layer.filters.reshape(f, f_h * f_w)
    # unoptimised einsum accumulates the patch dot products in index order,
    # matching a naive loop bit for bit
    out = np.einsum("pk,fk->fp", rows, bank, optimize=False)
    return out.reshape(f, n_h, n_w)


def max_pool(volume, size, stride):
    """Per-channel max pooling; partial windows at the trailing edge are kept."""
    if size < 1 or stride < 1:
        raise ValueError("size and stride must be >= 1")
    volume = np.asarray(volume)
    f, h, w = volume.shape
    n_h = -(-h // stride)
    n_w = -(-w // stride)
    out = np.empty((f, n_h, n_w), dtype=volume.dtype)
    for i in range(n_h):
        ii = i * stride
        for j in range(n_w):
            jj = j * stride
            out[:, i, j] = volume[:, ii:ii + size, jj:jj + size].max(axis=(1, 2))
    return out


# ---------------------------------------------------------------------------
# kernels

@dataclass(frozen=True)
class KernelSpec:
    size: int
    std: float
    k_ratio: float = 1.6


def gaussian_kernel(size, std, normalize="sum"):
    """Square centro-symmetric Gaussian kernel.

    normalize="sum" scales to unit mass (for difference kernels),
    normalize="peak" scales the centre to 1 (for [0,1] mask smoothing).
    """
    if size % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {size}")
    r = size // 2
    d = np.arange(-r, r + 1, dtype=float)
    g1 = np.exp(-(d * d) / (2.0 * std * std))
    k = np.outer(g1, g1)
    if normalize == "sum":
        return k / k.sum()
    if normalize == "peak":
        return k / k[r, r]
    raise ValueError(f"unknown normalize mode {normalize!r}")


def dog_kernel(spec):
    """Difference of unit-sum Gaussians with stds (std, k_ratio * std); sums to ~0."""
    inner = gaussian_kernel(spec.size, spec.std, normalize="sum")
    outer = gaussian_kernel(spec.size, spec.k_ratio * spec.std, normalize="sum")
    return inner - outer
