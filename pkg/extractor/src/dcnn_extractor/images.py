"""Tile image loading: bytes on disk to a fixed-size float grid.

Every image becomes a grayscale IMG_SIDE x IMG_SIDE array in [0, 1],
whatever size or mode the file had, so the network sees one shape.
Decode failures raise DataError for the caller to skip and record.
"""

from __future__ import annotations

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DataError

IMG_SIDE = 48


def load_image(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im = im.convert("L")
            if im.size != (IMG_SIDE, IMG_SIDE):
                im = im.resize((IMG_SIDE, IMG_SIDE), Image.BILINEAR)
            arr = np.asarray(im, dtype=np.float64)
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise DataError(f"unreadable image {path}: {exc}") from None
    return arr / 255.0


def load_batch(rows) -> tuple[np.ndarray, list, list]:
    """Load (row, image) pairs, splitting off rows whose file is bad.

    Returns the stacked (n, side, side) array, the rows that loaded,
    and (row, reason) pairs for the ones that did not.
    """
    ok_rows = []
    skipped = []
    imgs = []
    for row in rows:
        try:
            imgs.append(load_image(row.path))
        except DataError as exc:
            skipped.append((row, str(exc)))
            continue
        ok_rows.append(row)
    if imgs:
        batch = np.stack(imgs)
    else:
        batch = np.empty((0, IMG_SIDE, IMG_SIDE))
    return batch, ok_rows, skipped
