import numpy as np
import pytest
from PIL import Image

from engram.omniglot import OmniglotStore

RAW = 105


def draw_glyph(seed, jitter=0):
    """Synthetic raw glyph: dark strokes on white paper, 105x105 bool.

    The same seed gives the same base strokes; the jitter index redraws them
    with enough positional and size variation that exemplars stay distinct
    after pooling.
    """
    rng = np.random.default_rng([seed, jitter])
    img = np.ones((RAW, RAW), dtype=bool)  # True = paper
    base = np.random.default_rng(seed)
    for _ in range(4):
        y, x = base.integers(15, RAW - 55, size=2)
        length = int(base.integers(25, 45))
        width = int(base.integers(3, 7))
        y += int(rng.integers(-8, 9))
        x += int(rng.integers(-8, 9))
        length = max(12, length + int(rng.integers(-8, 9)))
        width = max(2, width + int(rng.integers(-2, 3)))
        if base.random() < 0.5:
            img[y:y + width, x:x + length] = False
        else:
            img[y:y + length, x:x + width] = False
    return img


def build_store(n_alphabets=2, n_chars=22, n_exemplars=20):
    """In-memory store shaped like the real dataset."""
    split = {}
    for a in range(n_alphabets):
        chars = {}
        for c in range(n_chars):
            glyph_seed = a * 1000 + c
            chars[f"character{c:02d}"] = [
                (d + 1, draw_glyph(glyph_seed, jitter=d)) for d in range(n_exemplars)]
        split[f"Alphabet{a}"] = chars
    return OmniglotStore(background=split, evaluation=split)


def write_tree(root, alphabets=("Futurama", "Latin"), chars_per=2, exemplars=20,
               split="images_background"):
    base = root / split
    for a_i, alphabet in enumerate(alphabets):
        for c in range(chars_per):
            char_dir = base / alphabet / f"character{c + 1:02d}"
            char_dir.mkdir(parents=True)
            for d in range(exemplars):
                img = draw_glyph(a_i * 100 + c, jitter=d)
                Image.fromarray(img).save(char_dir / f"{c:04d}_{d + 1:02d}.png")
    return base


@pytest.fixture(scope="session")
def synthetic_store():
    return build_store()


@pytest.fixture
def omniglot_tree(tmp_path):
    write_tree(tmp_path, split="images_background")
    write_tree(tmp_path, alphabets=("Angelic",), split="images_evaluation")
    return tmp_path
