"""A small convolutional classifier with most of its depth frozen.

Three fixed convolution blocks stand in for generic pretrained
features; training touches only the final convolution block, the
penultimate fully connected layer (whose width is the embedding
dimension), and the binary head. That split is the point: the
embedding layer is shaped by the cheap-vs-expensive task while the
backbone stays a stable, reusable image summary.

Everything is plain numpy in float64. Convolutions are valid (no
padding), pooling is 2x2 max with odd edges truncated. Images enter
as (n, side, side) grids in [0, 1] and are centered by 0.5 so the
first layer sees signed contrast.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .images import IMG_SIDE
from .manifest import rng_for

FROZEN_CHANNELS = (8, 16, 16)
HEAD_CHANNELS = 32
KERNEL = 3
BACKBONE_CHUNK = 64


def _im2col(x: np.ndarray, k: int = KERNEL) -> np.ndarray:
    n, h, w, c = x.shape
    oh, ow = h - k + 1, w - k + 1
    s = x.strides
    view = np.lib.stride_tricks.as_strided(
        x, (n, oh, ow, k, k, c), (s[0], s[1], s[2], s[1], s[2], s[3])
    )
    return view.reshape(n, oh, ow, k * k * c)


def _conv(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    return _im2col(x) @ w + b


def _pool2(x: np.ndarray) -> np.ndarray:
    n, h, w, c = x.shape
    h2, w2 = h // 2, w // 2
    return x[:, : h2 * 2, : w2 * 2].reshape(n, h2, 2, w2, 2, c).max(axis=(2, 4))


def init_frozen(seed: int) -> tuple:
    """Backbone filters, deterministic in the seed and never updated."""
    params = []
    c_in = 1
    for i, c_out in enumerate(FROZEN_CHANNELS):
        rng = rng_for(seed, "frozen", i)
        fan = KERNEL * KERNEL * c_in
        w = rng.normal(0.0, np.sqrt(2.0 / fan), size=(fan, c_out))
        params += [w, np.zeros(c_out)]
        c_in = c_out
    return tuple(params)


def init_head(seed: int, feat_dim: int) -> tuple:
    if feat_dim < 1:
        raise ConfigError(f"feat_dim must be >= 1, got {feat_dim}")
    c_in = FROZEN_CHANNELS[-1]
    fan4 = KERNEL * KERNEL * c_in
    w4 = rng_for(seed, "conv4").normal(0.0, np.sqrt(2.0 / fan4), size=(fan4, HEAD_CHANNELS))
    wf = rng_for(seed, "embed").normal(
        0.0, np.sqrt(2.0 / HEAD_CHANNELS), size=(HEAD_CHANNELS, feat_dim)
    )
    wh = rng_for(seed, "logit").normal(0.0, np.sqrt(1.0 / feat_dim), size=feat_dim)
    return (w4, np.zeros(HEAD_CHANNELS), wf, np.zeros(feat_dim), wh, 0.0)


def backbone_forward(x: np.ndarray, frozen: tuple) -> np.ndarray:
    """(n, side, side) images to (n, 4, 4, c) activation grids."""
    if x.ndim != 3 or x.shape[1] != IMG_SIDE or x.shape[2] != IMG_SIDE:
        raise DataError(f"backbone wants (n, {IMG_SIDE}, {IMG_SIDE}), got {x.shape}")
    outs = []
    for lo in range(0, x.shape[0], BACKBONE_CHUNK):
        h = x[lo : lo + BACKBONE_CHUNK, :, :, None] - 0.5
        for i in range(len(FROZEN_CHANNELS)):
            h = np.maximum(_conv(h, frozen[2 * i], frozen[2 * i + 1]), 0.0)
            h = _pool2(h)
        outs.append(h)
    return np.concatenate(outs) if outs else np.empty((0, 4, 4, FROZEN_CHANNELS[-1]))


def head_forward(acts: np.ndarray, head: tuple) -> dict:
    """Trainable layers; returns every intermediate backward needs."""
    w4, b4, wf, bf, wh, bh = head
    cols = _im2col(acts)
    z4 = cols @ w4 + b4
    a4 = np.maximum(z4, 0.0)
    g = a4.mean(axis=(1, 2))
    zf = g @ wf + bf
    feat = np.maximum(zf, 0.0)
    logit = feat @ wh + bh
    return {"cols": cols, "z4": z4, "g": g, "zf": zf, "feat": feat, "logit": logit}


def bce_loss(logit: np.ndarray, y: np.ndarray) -> float:
    # softplus form is stable for both signs of the logit
    return float(np.mean(np.logaddexp(0.0, logit) - y * logit))


def head_backward(cache: dict, head: tuple, y: np.ndarray) -> tuple:
    w4, b4, wf, bf, wh, bh = head
    n = y.shape[0]
    p = 1.0 / (1.0 + np.exp(-cache["logit"]))
    dlogit = (p - y) / n
    dwh = cache["feat"].T @ dlogit
    dbh = float(dlogit.sum())
    dzf = np.outer(dlogit, wh) * (cache["zf"] > 0.0)
    dwf = cache["g"].T @ dzf
    dbf = dzf.sum(axis=0)
    dg = dzf @ wf.T
    spread = cache["z4"].shape[1] * cache["z4"].shape[2]
    dz4 = (dg[:, None, None, :] / spread) * (cache["z4"] > 0.0)
    k = cache["cols"].shape[-1]
    dw4 = cache["cols"].reshape(-1, k).T @ dz4.reshape(-1, HEAD_CHANNELS)
    db4 = dz4.sum(axis=(0, 1, 2))
    return (dw4, db4, dwf, dbf, dwh, dbh)


def sgd_step(head: tuple, grads: tuple, lr: float) -> tuple:
    return tuple(p - lr * g for p, g in zip(head, grads))


@dataclass(frozen=True)
class Checkpoint:
    zoom: int
    feat_dim: int
    seed: int
    frozen: tuple
    head: tuple


def embed(ckpt: Checkpoint, images: np.ndarray) -> np.ndarray:
    """Penultimate-layer embeddings, one row per image."""
    acts = backbone_forward(images, ckpt.frozen)
    return head_forward(acts, ckpt.head)["feat"]


def classify(ckpt: Checkpoint, images: np.ndarray) -> np.ndarray:
    acts = backbone_forward(images, ckpt.frozen)
    return head_forward(acts, ckpt.head)["logit"] > 0.0


_CKPT_KEYS = ("zoom", "feat_dim", "seed", "w1", "b1", "w2", "b2", "w3", "b3",
              "w4", "b4", "wf", "bf", "wh", "bh")


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    f = ckpt.frozen
    h = ckpt.head
    np.savez(
        path,
        zoom=np.int64(ckpt.zoom),
        feat_dim=np.int64(ckpt.feat_dim),
        seed=np.int64(ckpt.seed),
        w1=f[0], b1=f[1], w2=f[2], b2=f[3], w3=f[4], b3=f[5],
        w4=h[0], b4=h[1], wf=h[2], bf=h[3], wh=h[4], bh=np.float64(h[5]),
    )


def load_checkpoint(path) -> Checkpoint:
    try:
        with np.load(path) as z:
            missing = [k for k in _CKPT_KEYS if k not in z]
            if missing:
                raise DataError(f"{path}: not a checkpoint, missing {missing[:3]}")
            return Checkpoint(
                zoom=int(z["zoom"]),
                feat_dim=int(z["feat_dim"]),
                seed=int(z["seed"]),
                frozen=(z["w1"], z["b1"], z["w2"], z["b2"], z["w3"], z["b3"]),
                head=(z["w4"], z["b4"], z["wf"], z["bf"], z["wh"], float(z["bh"])),
            )
    except (OSError, ValueError) as exc:
        raise DataError(f"{path}: unreadable checkpoint: {exc}") from None
