"""Fine-tuning and embedding export, manifest in, feature file out.

finetune trains one classifier for one zoom level on the manifest's
train rows and reports held-out accuracy; extract runs a trained
checkpoint over images and writes the embeddings in the feature store
text format the pricing pipeline reads:

    #GEOFEAT v1 zoom=<z> dim=<d>
    <id>,<v1>,<v2>,...

Floats are written with repr so a load gives back the same bits.
Unreadable images never abort a run; they are skipped and returned so
the caller can account for every input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .images import load_batch
from .manifest import LABELS, TrainManifest
from .network import (
    Checkpoint,
    backbone_forward,
    bce_loss,
    head_backward,
    head_forward,
    init_frozen,
    init_head,
    sgd_step,
)

DEFAULT_EPOCHS = 800


@dataclass(frozen=True)
class FinetuneReport:
    checkpoint: Checkpoint
    accuracy: float
    train_accuracy: float
    loss: float
    collapsed: bool
    n_train: int
    n_test: int
    skipped: tuple


def _labels_to_y(rows) -> np.ndarray:
    return np.array([1.0 if r.label == "expensive" else 0.0 for r in rows])


def finetune(
    manifest: TrainManifest,
    zoom: int,
    lr: float = 0.001,
    feat_dim: int = 256,
    epochs: int = DEFAULT_EPOCHS,
    seed: int = 0,
) -> FinetuneReport:
    """Train the unfrozen layers on the manifest's train rows.

    zoom must match the manifest; mixing levels in one network is
    refused outright. Collapse (every train prediction in one class)
    is reported, not raised, since the caller may still want the
    checkpoint for inspection.
    """
    if zoom != manifest.zoom:
        raise ConfigError(f"manifest is zoom {manifest.zoom}, asked to train zoom {zoom}")
    if lr <= 0.0:
        raise ConfigError(f"lr must be > 0, got {lr!r}")
    if epochs < 1:
        raise ConfigError(f"epochs must be >= 1, got {epochs}")

    tr_imgs, tr_rows, skipped_tr = load_batch(manifest.subset("train"))
    te_imgs, te_rows, skipped_te = load_batch(manifest.subset("test"))
    skipped = tuple(skipped_tr + skipped_te)
    for role, rows in (("train", tr_rows), ("test", te_rows)):
        for label in LABELS:
            k = sum(1 for r in rows if r.label == label)
            if k < (2 if role == "train" else 1):
                raise DataError(
                    f"{role} side has {k} readable {label!r} images, need more"
                )

    frozen = init_frozen(seed)
    head = init_head(seed, feat_dim)
    tr_acts = backbone_forward(tr_imgs, frozen)
    te_acts = backbone_forward(te_imgs, frozen)
    y_tr = _labels_to_y(tr_rows)
    y_te = _labels_to_y(te_rows)

    loss = float("nan")
    for _ in range(epochs):
        cache = head_forward(tr_acts, head)
        loss = bce_loss(cache["logit"], y_tr)
        head = sgd_step(head, head_backward(cache, head, y_tr), lr)

    pred_tr = head_forward(tr_acts, head)["logit"] > 0.0
    pred_te = head_forward(te_acts, head)["logit"] > 0.0
    ckpt = Checkpoint(zoom=zoom, feat_dim=feat_dim, seed=seed, frozen=frozen, head=head)
    return FinetuneReport(
        checkpoint=ckpt,
        accuracy=float(np.mean(pred_te == (y_te > 0.5))),
        train_accuracy=float(np.mean(pred_tr == (y_tr > 0.5))),
        loss=loss,
        collapsed=bool(np.all(pred_tr) or not np.any(pred_tr)),
        n_train=len(tr_rows),
        n_test=len(te_rows),
        skipped=skipped,
    )


@dataclass(frozen=True)
class ExtractReport:
    path: str
    ids: tuple[str, ...]
    dim: int
    skipped: tuple


@dataclass(frozen=True)
class _Item:
    listing_id: str
    path: str


def extract(ckpt: Checkpoint, items, out_path) -> ExtractReport:
    """Embed each (listing_id, image_path) pair and write the store.

    Rows come out in input order, one per readable image. Ids must be
    unique; the feature format requires it.
    """
    rows = [_Item(listing_id=str(i), path=str(p)) for i, p in items]
    if not rows:
        raise DataError("nothing to extract")
    ids = [r.listing_id for r in rows]
    if len(set(ids)) != len(ids):
        raise DataError("duplicate listing ids in extract input")
    imgs, ok_rows, skipped = load_batch(rows)
    if not ok_rows:
        raise DataError("every image was unreadable")

    acts = backbone_forward(imgs, ckpt.frozen)
    feat = head_forward(acts, ckpt.head)["feat"]
    out_path = str(out_path)
    with open(out_path, "w") as fh:
        fh.write(f"#GEOFEAT v1 zoom={ckpt.zoom} dim={ckpt.feat_dim}\n")
        for i, row in enumerate(ok_rows):
            vals = ",".join(repr(float(v)) for v in feat[i])
            fh.write(f"{row.listing_id},{vals}\n")
    return ExtractReport(
        path=out_path,
        ids=tuple(r.listing_id for r in ok_rows),
        dim=ckpt.feat_dim,
        skipped=tuple(skipped),
    )
