"""Omniglot ingestion and episode sampling for the one-shot benchmarks.

The store keeps raw images exactly as on disk (ink is dark, paper bright);
polarity is normalised later by preprocessing.  Episode samplers are pure
functions of (run_index, seed) so sweeps are reproducible.
"""

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

RAW_SIDE = 105
BACKGROUND_DIR = "images_background"
EVALUATION_DIR = "images_evaluation"

_EPISODE_SALT = 0x0E15
_TASK_CODES = {"classification": 1, "instance": 2}


class IngestionError(RuntimeError):
    """Dataset could not be read; the message names the offending path."""


@dataclass
class ImageSample:
    image: np.ndarray
    alphabet: str
    character: str
    drawer: int
    corruption: str = "none"
    level: float = 0.0


@dataclass
class EpisodePair:
    study: list
    recall: list
    correspondence: np.ndarray
    task: str


@dataclass
class OmniglotStore:
    background: dict = field(default_factory=dict)
    evaluation: dict = field(default_factory=dict)

    def background_images(self):
        """All background images stacked into one (N, 105, 105) array."""
        imgs = [img for chars in self.background.values()
                for exemplars in chars.values() for _, img in exemplars]
        return np.stack(imgs)


def _load_image(path):
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("L"))
    except OSError as exc:
        raise IngestionError(f"unreadable image {path}: {exc}") from exc
    if arr.shape != (RAW_SIDE, RAW_SIDE):
        raise IngestionError(f"{path}: expected {RAW_SIDE}x{RAW_SIDE}, got {arr.shape}")
    return arr > 127  # ink False, paper True


def _load_split(split_dir):
    split = {}
    for alphabet_dir in sorted(p for p in split_dir.iterdir() if p.is_dir()):
        chars = {}
        for char_dir in sorted(p for p in alphabet_dir.iterdir() if p.is_dir()):
            exemplars = []
            for png in sorted(char_dir.glob("*.png")):
                m = re.search(r"_(\d+)$", png.stem)
                drawer = int(m.group(1)) if m else len(exemplars) + 1
                exemplars.append((drawer, _load_image(png)))
            if len(exemplars) != 20:
                raise IngestionError(
                    f"{char_dir}: expected 20 exemplars, found {len(exemplars)}")
            chars[char_dir.name] = exemplars
        if chars:
            split[alphabet_dir.name] = chars
    if not split:
        raise IngestionError(f"no alphabets under {split_dir}")
    return split


def load_omniglot(root):
    """Load the standard background/evaluation directory tree."""
    root = Path(root)
    for sub in (BACKGROUND_DIR, EVALUATION_DIR):
        if not (root / sub).is_dir():
            raise IngestionError(f"missing split directory {root / sub}")
    return OmniglotStore(
        background=_load_split(root / BACKGROUND_DIR),
        evaluation=_load_split(root / EVALUATION_DIR),
    )


# ---------------------------------------------------------------------------
# episode samplers

def _episode_rng(task, run_index, seed):
    return np.random.default_rng(
        np.random.SeedSequence([_EPISODE_SALT, _TASK_CODES[task], seed, run_index]))


def sample_run_classification(store, run_index, seed):
    """One 20-way within-alphabet run: for each of 20 characters a study
    exemplar and a recall exemplar by a different drawer."""
    rng = _episode_rng("classification", run_index, seed)
    eligible = sorted(a for a, chars in store.evaluation.items() if len(chars) >= 20)
    if not eligible:
        raise IngestionError("no evaluation alphabet has 20 characters")
    alphabet = eligible[rng.integers(len(eligible))]
    chars = sorted(store.evaluation[alphabet])
    picked = rng.choice(len(chars), size=20, replace=False)
    study, recall = [], []
    for ci in picked:
        name = chars[ci]
        exemplars = store.evaluation[alphabet][name]
        i, j = rng.choice(len(exemplars), size=2, replace=False)
        for bucket, (drawer, img) in ((study, exemplars[i]), (recall, exemplars[j])):
            bucket.append(ImageSample(image=img, alphabet=alphabet,
                                      character=name, drawer=drawer))
    return EpisodePair(study=study, recall=recall,
                       correspondence=np.arange(20), task="classification")


def sample_run_instance(store, run_index, seed):
    """One instance run: 20 exemplars of a single character; each recall item
    is the identical exemplar as its study counterpart."""
    rng = _episode_rng("instance", run_index, seed)
    alphabets = sorted(store.evaluation)
    alphabet = alphabets[rng.integers(len(alphabets))]
    chars = sorted(store.evaluation[alphabet])
    name = chars[rng.integers(len(chars))]
    exemplars = store.evaluation[alphabet][name]
    order = rng.permutation(len(exemplars))[:20]
    study = [ImageSample(image=exemplars[i][1], alphabet=alphabet,
                         character=name, drawer=exemplars[i][0]) for i in order]
    recall = [ImageSample(image=s.image, alphabet=s.alphabet,
                          character=s.character, drawer=s.drawer) for s in study]
    return EpisodePair(study=study, recall=recall,
                       correspondence=np.arange(20), task="instance")


# ---------------------------------------------------------------------------
# official run files (strict comparison with the published protocol)

def load_official_runs(path):
    """Load the published one-shot classification runs (run01..run20 with
    training/, test/ and class_labels.txt) as EpisodePairs."""
    path = Path(path)
    episodes = []
    run_dirs = sorted(p for p in path.iterdir() if p.is_dir() and p.name.startswith("run"))
    if not run_dirs:
        raise IngestionError(f"no run directories under {path}")
    for run_dir in run_dirs:
        labels = {}
        label_file = run_dir / "class_labels.txt"
        if not label_file.is_file():
            raise IngestionError(f"missing {label_file}")
        for line in label_file.read_text().split("\n"):
            if line.strip():
                test_rel, train_rel = line.split()
                labels[Path(test_rel).name] = Path(train_rel).name
        train_names = sorted(p.name for p in (run_dir / "training").glob("*.png"))
        test_names = sorted(p.name for p in (run_dir / "test").glob("*.png"))
        study = [ImageSample(image=_load_image(run_dir / "training" / n),
                             alphabet=run_dir.name, character=n, drawer=0)
                 for n in train_names]
        recall = [ImageSample(image=_load_image(run_dir / "test" / n),
                              alphabet=run_dir.name, character=labels[n], drawer=1)
                  for n in test_names]
        correspondence = np.array([train_names.index(labels[n]) for n in test_names])
        episodes.append(EpisodePair(study=study, recall=recall,
                                    correspondence=correspondence,
                                    task="classification"))
    return episodes
