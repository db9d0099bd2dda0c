"""Baseline short-term memory: a single two-layer autoencoding net trained in
one exposure.  The first layer encodes the feature vector into a latent used
for matching, the second decodes to image space for recall.
"""

from dataclasses import dataclass

import numpy as np

from .nn import DenseNet2


@dataclass(frozen=True)
class FastNnConfig:
    hidden: int = 100
    lr: float = 0.01
    l2: float = 4e-5
    train_steps: int = 60
    match_on: str = "latent"  # "latent" or "output"


class FastNN:
    """Feature -> image reconstruction net; fresh instance per evaluation."""

    def __init__(self, input_dim, image_dim, cfg=FastNnConfig(), seed=0):
        self.cfg = cfg
        self.net = DenseNet2(input_dim, cfg.hidden, image_dim,
                             act_hidden="leaky_relu", act_out="leaky_relu",
                             lr=cfg.lr, l2=cfg.l2, seed=seed)
        self.study_latents = None
        self.study_images = None

    def study(self, features, images):
        X = np.atleast_2d(np.asarray(features, dtype=float))
        imgs = np.atleast_2d(np.asarray(images, dtype=float))
        for _ in range(self.cfg.train_steps):
            self.net.train_step(X, imgs, "mse")
        latents, outputs = self.net.forward(X)
        self.study_latents = outputs if self.cfg.match_on == "output" else latents
        self.study_images = imgs

    def recall(self, features):
        """Return (matching_states, reconstructed_images) for cue features."""
        if self.study_latents is None:
            raise RuntimeError("recall before study")
        X = np.atleast_2d(np.asarray(features, dtype=float))
        latents, images = self.net.forward(X)
        states = images if self.cfg.match_on == "output" else latents
        return states, images
