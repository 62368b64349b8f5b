"""Image I/O, augmentation, and batching.

Images live in memory as float32 3xHxW arrays in [-1, 1].  Dataset layout on
disk is ``<root>/train/*.png`` and ``<root>/test/*.png``.
"""
from __future__ import annotations

import queue
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np
from PIL import Image

from .core import Tensor

TRAIN_RESIZE = (144, 432)
CROP = (128, 256)


class ImageError(ValueError):
    pass


@dataclass
class ImageBatch:
    pixels: Tensor
    paths: list
    seeds: list

    def __len__(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class DatasetIndex:
    root: Path
    files: tuple
    split: str

    @classmethod
    def scan(cls, root, split: str = "train") -> "DatasetIndex":
        root = Path(root)
        files = tuple(sorted(str(p) for p in (root / split).glob("*.png")))
        if not files:
            raise ImageError(f"no PNG images under {root / split}")
        return cls(root, files, split)

    def __len__(self) -> int:
        return len(self.files)


# -- I/O --------------------------------------------------------------------------------


def to_unit(pixels: np.ndarray) -> np.ndarray:
    return pixels.astype(np.float32) / np.float32(127.5) - np.float32(1.0)


def to_bytes(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint((np.asarray(image, dtype=np.float64) + 1.0) * 127.5), 0, 255).astype(np.uint8)


_PNG_SIG = b"\x89PNG\r\n\x1a\n"


def _png_bit_depth(path) -> Optional[int]:
    with open(path, "rb") as fh:
        head = fh.read(26)
    if len(head) < 26 or head[:8] != _PNG_SIG or head[12:16] != b"IHDR":
        return None
    return head[24]


def load_image(path) -> np.ndarray:
    """Decode an 8-bit PNG into a 3xHxW float32 array in [-1, 1]."""
    try:
        depth = _png_bit_depth(path)
        if depth is not None and depth > 8:
            raise ImageError(f"{path}: unsupported bit depth {depth}; need 8-bit RGB or grayscale")
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode in ("I", "I;16", "I;16B", "I;16L", "F"):
                raise ImageError(f"{path}: unsupported bit depth (mode {mode}); need 8-bit RGB or grayscale")
            if mode == "L":
                arr = np.asarray(im)[..., None].repeat(3, axis=2)
            else:
                arr = np.asarray(im.convert("RGB"))
    except ImageError:
        raise
    except (OSError, ValueError) as exc:
        raise ImageError(f"cannot read image {path}: {exc}") from exc
    return np.ascontiguousarray(to_unit(arr).transpose(2, 0, 1))


def save_image(image, path) -> None:
    """Write a 3xHxW array in [-1, 1] as an 8-bit RGB PNG."""
    arr = image.data if isinstance(image, Tensor) else np.asarray(image)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ImageError(f"expected a 3xHxW image, got {arr.shape}")
    Image.fromarray(to_bytes(arr).transpose(1, 2, 0), mode="RGB").save(path, format="PNG")


# -- resampling and augmentation ----------------------------------------------------------


def _axis_weights(n_in: int, n_out: int):
    # half-pixel centers: output i samples input coordinate (i + 0.5) * n_in / n_out - 0.5
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0.0, n_in - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    return lo, hi, frac


def resize_bilinear(image: np.ndarray, height: int, width: int) -> np.ndarray:
    """Separable bilinear resampling of a CxHxW array."""
    _, h, w = image.shape
    out = np.asarray(image, dtype=np.float64)
    if (h, w) == (height, width):
        return out.astype(np.float32)
    lo, hi, f = _axis_weights(h, height)
    out = out[:, lo, :] * (1 - f)[None, :, None] + out[:, hi, :] * f[None, :, None]
    lo, hi, f = _axis_weights(w, width)
    out = out[:, :, lo] * (1 - f) + out[:, :, hi] * f
    return np.ascontiguousarray(out, dtype=np.float32)


def augment_params(seed) -> tuple[int, int, bool]:
    """(top, left, flip) for one training crop; offsets uniform over every valid position."""
    rng = np.random.default_rng(seed)
    top = int(rng.integers(0, TRAIN_RESIZE[0] - CROP[0] + 1))
    left = int(rng.integers(0, TRAIN_RESIZE[1] - CROP[1] + 1))
    return top, left, bool(rng.random() < 0.5)


def augment_train(image: np.ndarray, seed) -> np.ndarray:
    """Resize to 144x432, then a uniformly placed 128x256 crop of it or its mirror image."""
    top, left, flip = augment_params(seed)
    big = resize_bilinear(image, *TRAIN_RESIZE)
    if flip:
        big = big[:, :, ::-1]
    return np.ascontiguousarray(big[:, top : top + CROP[0], left : left + CROP[1]])


def augment_test(image: np.ndarray, size: Sequence[int] = CROP) -> np.ndarray:
    return resize_bilinear(image, size[0], size[1])


# -- batching --------------------------------------------------------------------------------


def epoch_order(n: int, epoch_seed) -> np.ndarray:
    return np.random.default_rng(epoch_seed).permutation(n)


def batch_stream(
    index: DatasetIndex,
    batch_size: int,
    epoch_seed,
    *,
    train: bool = True,
    image_size: Sequence[int] = CROP,
    start_batch: int = 0,
    prefetch: int = 2,
) -> Iterator[ImageBatch]:
    """One epoch of shuffled batches; the trailing partial batch is dropped.

    ``epoch_seed`` fixes both the order and every augmentation draw.  With
    ``prefetch > 0`` decoding runs ahead in a thread through a bounded queue.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if not index.files:
        raise ImageError("empty dataset")
    order = epoch_order(len(index.files), epoch_seed)
    n_batches = len(order) // batch_size
    size = tuple(image_size)

    def make(b: int) -> ImageBatch:
        ids = order[b * batch_size : (b + 1) * batch_size]
        paths = [index.files[i] for i in ids]
        seeds = [[int(s) for s in np.atleast_1d(epoch_seed)] + [b * batch_size + k] for k in range(len(ids))]
        imgs = []
        for p, s in zip(paths, seeds):
            img = load_image(p)
            img = augment_train(img, s) if train else augment_test(img, size)
            if img.shape[1:] != size:
                img = resize_bilinear(img, *size)
            imgs.append(img)
        return ImageBatch(Tensor._wrap(np.stack(imgs).astype(np.float32)), paths, seeds)

    batches = range(start_batch, n_batches)
    if prefetch <= 0:
        for b in batches:
            yield make(b)
        return
    yield from _prefetched(make, batches, prefetch)


_DONE = object()


def _prefetched(make, batches, capacity: int) -> Iterator[ImageBatch]:
    q: queue.Queue = queue.Queue(maxsize=capacity)
    stop = threading.Event()

    def worker():
        try:
            for b in batches:
                if stop.is_set():
                    return
                q.put(make(b))
        except BaseException as exc:  # surfaced on the consumer side
            q.put(exc)
            return
        q.put(_DONE)

    t = threading.Thread(target=worker, daemon=True)
    t.start()
    try:
        while True:
            item = q.get()
            if item is _DONE:
                return
            if isinstance(item, BaseException):
                raise item
            yield item
    finally:
        stop.set()
        while not q.empty():
            try:
                q.get_nowait()
            except queue.Empty:
                break
        t.join(timeout=5)
