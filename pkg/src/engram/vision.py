"""Vision component: preprocessing, a winner-take-all sparse convolutional
autoencoder with tied weights, the interest-filter foreground mask, and the
pooled feature vector the memory components consume.

The autoencoder is the only part of the system trained on the background
split; after that everything here runs in inference mode.
"""

import struct
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .nn import (
    Adam,
    ConvLayer,
    KernelSpec,
    TrainingDivergedError,
    conv2d,
    dog_kernel,
    gaussian_kernel,
    max_pool,
)

RAW_SIDE = 105
FILTER_MAGIC = b"AHAF"


class UntrainedFiltersError(RuntimeError):
    """Raised when inference is attempted with freshly initialised filters."""


@dataclass(frozen=True)
class InterestConfig:
    dog: KernelSpec = KernelSpec(size=7, std=0.82, k_ratio=1.6)
    nms_size: int = 5
    nms_stride: int = 1
    smooth_size: int = 15
    smooth_std: float = 2.375
    k_features: int = 20


@dataclass(frozen=True)
class VcConfig:
    resize_factor: float = 0.5
    filters: int = 121
    filter_size: int = 10
    stride_pretrain: int = 5
    stride_eval: int = 1
    k_pretrain: int = 1
    k_eval: int = 4
    lr: float = 0.001
    pretrain_batches: int = 2000
    pretrain_batch_size: int = 128
    pool_size: int = 4
    pool_stride: int = 4
    interest: InterestConfig = field(default_factory=InterestConfig)


@dataclass
class FeatureVector:
    """Flattened pooled encoding of one image; the shared observational space."""

    values: np.ndarray
    shape: tuple


# ---------------------------------------------------------------------------
# preprocessing

def bilinear_resize(image, out_h, out_w):
    """Bilinear resampling via Pillow; its triangle filter averages when
    downsampling, so stroke mass is preserved instead of aliased away."""
    im = Image.fromarray(np.asarray(image, dtype=np.float32), mode="F")
    return np.asarray(im.resize((out_w, out_h), Image.BILINEAR), dtype=np.float32)


def preprocess(raw, invert=True, resize_factor=0.5, dtype=np.float32):
    """Map a raw 105x105 glyph to a [0,1] float image with strokes bright.

    Omniglot sources are black ink on white paper, so the default inverts.
    """
    a = np.asarray(raw)
    if a.shape != (RAW_SIDE, RAW_SIDE):
        raise ValueError(f"expected {RAW_SIDE}x{RAW_SIDE} image, got {a.shape}")
    if a.dtype == np.uint8:
        img = a.astype(dtype) / 255.0
    else:
        img = a.astype(dtype)
    if invert:
        img = 1.0 - img
    side = int(RAW_SIDE * resize_factor)
    out = bilinear_resize(img, side, side)
    return np.clip(out, 0.0, 1.0).astype(dtype)


# ---------------------------------------------------------------------------
# sparse convolutional autoencoder

def _im2col_batch(images, f_h, f_w, stride):
    b, h, w = images.shape
    n_h = (h - f_h) // stride + 1
    n_w = (w - f_w) // stride + 1
    sb, sh, sw = images.strides
    windows = np.lib.stride_tricks.as_strided(
        images, shape=(b, n_h, n_w, f_h, f_w),
        strides=(sb, sh * stride, sw * stride, sh, sw), writeable=False)
    return np.ascontiguousarray(windows.reshape(b, n_h * n_w, f_h * f_w)), n_h, n_w


def _col2im_batch(rows, n_h, n_w, f_h, f_w, stride, out_hw):
    b = rows.shape[0]
    out = np.zeros((b, out_hw[0], out_hw[1]), dtype=rows.dtype)
    grid = rows.reshape(b, n_h, n_w, f_h, f_w)
    for a in range(f_h):
        for c in range(f_w):
            out[:, a:a + n_h * stride:stride, c:c + n_w * stride:stride] += grid[:, :, :, a, c]
    return out


def _position_topk_mask(codes, k):
    """Per-(sample, position) mask of the k largest channels, ties to low index."""
    if k >= codes.shape[-1]:
        return np.ones_like(codes)
    idx = np.argsort(-codes, axis=-1, kind="stable")[..., :k]
    mask = np.zeros_like(codes)
    np.put_along_axis(mask, idx, 1.0, axis=-1)
    return mask


def _lifetime_grant(codes, mask):
    """Give every filter with zero wins its single strongest activation."""
    wins = mask.sum(axis=(0, 1))
    for f in np.flatnonzero(wins == 0):
        flat = np.argmax(codes[:, :, f])
        b, p = np.unravel_index(flat, codes.shape[:2])
        mask[b, p, f] = 1.0
    return mask


def scae_init(cfg, seed, dtype=np.float32):
    rng = np.random.default_rng(seed)
    fan_in = cfg.filter_size * cfg.filter_size
    scale = 1.0 / np.sqrt(fan_in)
    filt = rng.uniform(-scale, scale,
                       size=(cfg.filters, 1, cfg.filter_size, cfg.filter_size))
    return ConvLayer(filt.astype(dtype), stride=cfg.stride_pretrain)


def scae_encode(images, layer, k, stride=None, training=False):
    """Winner-take-all encoding: per spatial position only the k strongest
    filter responses survive.  During training every filter is additionally
    guaranteed one win per mini-batch (lifetime sparsity of one sample).

    Accepts one (H, W) image or a (B, H, W) batch.
    """
    single = np.asarray(images).ndim == 2
    batch = np.asarray(images)[None] if single else np.asarray(images)
    f, _, f_h, f_w = layer.filters.shape
    stride = layer.stride if stride is None else stride
    rows, n_h, n_w = _im2col_batch(batch, f_h, f_w, stride)
    bank = layer.filters.reshape(f, f_h * f_w)
    codes = rows @ bank.T
    mask = _position_topk_mask(codes, k)
    if training:
        mask = _lifetime_grant(codes, mask)
    codes *= mask
    vol = codes.transpose(0, 2, 1).reshape(batch.shape[0], f, n_h, n_w)
    return vol[0] if single else vol


def _scae_loss_and_grad(images, bank, k, stride, f_h, f_w):
    rows, n_h, n_w = _im2col_batch(images, f_h, f_w, stride)
    codes = rows @ bank.T
    mask = _lifetime_grant(codes, _position_topk_mask(codes, k))
    cm = codes * mask
    recon = _col2im_batch(cm @ bank, n_h, n_w, f_h, f_w, stride, images.shape[1:])
    diff = recon - images
    loss = float(np.mean(diff * diff))
    g_rows, _, _ = _im2col_batch(2.0 * diff / diff.size, f_h, f_w, stride)
    d_cm = (g_rows @ bank.T) * mask
    grad = np.einsum("bpf,bpk->fk", cm, g_rows) + np.einsum("bpf,bpk->fk", d_cm, rows)
    return loss, grad.astype(bank.dtype)


def scae_reconstruct(images, layer, k, stride):
    """Encode then decode with the transposed (tied) filters."""
    single = np.asarray(images).ndim == 2
    batch = np.asarray(images)[None] if single else np.asarray(images)
    f, _, f_h, f_w = layer.filters.shape
    bank = layer.filters.reshape(f, f_h * f_w)
    rows, n_h, n_w = _im2col_batch(batch, f_h, f_w, stride)
    cm = (rows @ bank.T)
    cm *= _position_topk_mask(cm, k)
    recon = _col2im_batch(cm @ bank, n_h, n_w, f_h, f_w, stride, batch.shape[1:])
    return recon[0] if single else recon


def reconstruction_mse(images, layer, k, stride):
    batch = np.asarray(images)
    if batch.ndim == 2:
        batch = batch[None]
    recon = scae_reconstruct(batch, layer, k, stride)
    return float(np.mean((recon - batch) ** 2))


def scae_pretrain(images, cfg, seed, log_every=0):
    """Train the autoencoder on preprocessed background images.

    images: (N, H, W) array.  Returns the trained ConvLayer.
    """
    images = np.asarray(images)
    rng = np.random.default_rng(seed)
    layer = scae_init(cfg, rng)
    bank = layer.filters.reshape(cfg.filters, cfg.filter_size ** 2)
    opt = Adam(cfg.lr)
    for step in range(cfg.pretrain_batches):
        idx = rng.integers(0, images.shape[0], size=cfg.pretrain_batch_size)
        batch = images[idx].astype(bank.dtype)
        loss, grad = _scae_loss_and_grad(batch, bank, cfg.k_pretrain,
                                         cfg.stride_pretrain, cfg.filter_size,
                                         cfg.filter_size)
        if not np.isfinite(loss):
            raise TrainingDivergedError(f"reconstruction loss {loss} at batch {step}")
        opt.step({"W": bank}, {"W": grad})
        if log_every and (step + 1) % log_every == 0:
            print(f"  batch {step + 1}/{cfg.pretrain_batches}  mse {loss:.5f}", flush=True)
    layer.filters = bank.reshape(cfg.filters, 1, cfg.filter_size, cfg.filter_size)
    layer.trained = True
    return layer


# ---------------------------------------------------------------------------
# interest filter

def conv2d_same(image, kernel):
    """Same-size cross-correlation with one 2-D kernel.

    Only the valid region is computed; the border ring the kernel cannot
    cover stays zero, so uniform regions never pick up padding artifacts.
    """
    image = np.asarray(image)
    kh, kw = kernel.shape
    valid = conv2d(image, ConvLayer(kernel[None, None].astype(image.dtype), stride=1))[0]
    out = np.zeros_like(image)
    out[kh // 2:kh // 2 + valid.shape[0], kw // 2:kw // 2 + valid.shape[1]] = valid
    return out


def _sliding_max(image, size):
    r = size // 2
    padded = np.pad(image, r, constant_values=-np.inf)
    h, w = image.shape
    sh, sw = padded.strides
    windows = np.lib.stride_tricks.as_strided(
        padded, shape=(h, w, size, size), strides=(sh, sw, sh, sw), writeable=False)
    return windows.max(axis=(2, 3))


RESPONSE_FLOOR = 1e-6  # rounding noise of a zero-sum kernel on flat regions


def _polarity_mask(response, nms_size, k_features):
    local_max = (response == _sliding_max(response, nms_size)) & (response > RESPONSE_FLOOR)
    vals = np.where(local_max, response, 0.0)
    flat = vals.ravel()
    candidates = np.flatnonzero(flat > 0)
    if candidates.size > k_features:
        order = np.argsort(-flat[candidates], kind="stable")
        candidates = candidates[order[:k_features]]
    mask = np.zeros_like(flat)
    mask[candidates] = 1.0
    return mask.reshape(response.shape)


def interest_points(image, cfg):
    """Pre-smoothing feature mask: top-k non-maxima-suppressed DoG responses
    of each polarity, summed."""
    if cfg.nms_stride != 1:
        raise ValueError("only nms_stride=1 is supported")
    dog = dog_kernel(cfg.dog).astype(np.asarray(image).dtype)
    response = conv2d_same(image, dog)
    return (_polarity_mask(response, cfg.nms_size, cfg.k_features)
            + _polarity_mask(-response, cfg.nms_size, cfg.k_features))


def interest_mask(image, cfg):
    """Foreground mask in [0,1]: feature points smoothed with a unit-sum
    Gaussian.  Background positions go to zero; foreground weights are small
    (the kernel mass spreads over its support), which also keeps the
    downstream shallow nets in their operating range."""
    image = np.asarray(image)
    points = interest_points(image, cfg)
    smooth = gaussian_kernel(cfg.smooth_size, cfg.smooth_std,
                             normalize="sum").astype(image.dtype)
    return np.clip(conv2d_same(points, smooth), 0.0, 1.0)


# ---------------------------------------------------------------------------
# full forward pass

def vc_forward(image, layer, cfg):
    """Image -> masked sparse encoding -> pooled nonnegative FeatureVector."""
    if not layer.trained:
        raise UntrainedFiltersError("filters have not been trained or loaded")
    image = np.asarray(image)
    codes = scae_encode(image, layer, cfg.k_eval, stride=cfg.stride_eval)
    np.maximum(codes, 0.0, out=codes)
    mask = interest_mask(image, cfg.interest)
    n_h, n_w = codes.shape[1:]
    off_h = (image.shape[0] - n_h) // 2
    off_w = (image.shape[1] - n_w) // 2
    codes *= mask[off_h:off_h + n_h, off_w:off_w + n_w][None]
    pooled = max_pool(codes, cfg.pool_size, cfg.pool_stride)
    return FeatureVector(values=pooled.reshape(-1).copy(), shape=pooled.shape)


# ---------------------------------------------------------------------------
# filter persistence

def save_filters(path, layer):
    f, _, f_h, f_w = layer.filters.shape
    with open(path, "wb") as fh:
        fh.write(FILTER_MAGIC)
        fh.write(struct.pack("<III", f, f_h, f_w))
        fh.write(layer.filters.astype("<f4").tobytes(order="C"))


def load_filters(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != FILTER_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        f, f_h, f_w = struct.unpack("<III", fh.read(12))
        data = np.frombuffer(fh.read(f * f_h * f_w * 4), dtype="<f4")
        if data.size != f * f_h * f_w:
            raise ValueError(f"{path}: truncated filter data")
    filters = data.reshape(f, 1, f_h, f_w).astype(np.float32)
    return ConvLayer(filters, stride=1, trained=True)
