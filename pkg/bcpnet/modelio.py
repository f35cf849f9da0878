"""
Persistence and exchange: weights files, PNG images and label maps, reports.

Weights file layout (all little-endian)::

    "BCPW"  u16 version  u32 count
    count x ( u16 name_len | name (UTF-8) | u8 dtype {0: f32, 1: f64}
              | u8 rank | rank x u32 dims | raw scalars )

Loads validate every byte before returning; any fault raises
:class:`~bcpnet.exceptions.FormatError` carrying the byte offset, and no
partial store escapes. Saves go through a temporary file in the target
directory followed by an atomic rename.

Example::

    from bcpnet.modelio import save_weights, load_weights, read_image, write_label_png, palette

    save_weights(weights, "model.bcpw")
    weights = load_weights("model.bcpw")
    write_label_png(labels, palette(19), "pred.png")
"""

from __future__ import annotations

import logging
import math
import os
import struct
import tempfile
from pathlib import Path
from typing import Dict, List, Mapping, Sequence, Tuple, Union

import numpy as np
from PIL import Image, ImageColor, UnidentifiedImageError

from .exceptions import FormatError, ImageIOError, InvalidShapeError, LabelError, ShapeError
from .nnops import IGNORE_INDEX
from .tensor import Tensor4, check_shape
from .train import SynthSample

logger = logging.getLogger("bcpnet.modelio")

PathLike = Union[str, Path]
Colour = Tuple[int, int, int]

MAGIC = b"BCPW"
VERSION = 1
DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}

CITYSCAPES_PALETTE: List[Colour] = [
    (128, 64, 128),
    (244, 35, 232),
    (70, 70, 70),
    (102, 102, 156),
    (190, 153, 153),
    (153, 153, 153),
    (250, 170, 30),
    (220, 220, 0),
    (107, 142, 35),
    (152, 251, 152),
    (70, 130, 180),
    (220, 20, 60),
    (255, 0, 0),
    (0, 0, 142),
    (0, 0, 70),
    (0, 60, 100),
    (0, 80, 100),
    (0, 0, 230),
    (119, 11, 32),
]


# ============================================================================
# Weights
# ============================================================================


def encode_weights(store: Mapping[str, Tensor4]) -> bytes:
    chunks = [MAGIC, struct.pack("<HI", VERSION, len(store))]
    for name, tensor in store.items():
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise FormatError(f"weight name {name[:32]!r}... too long", 0)
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<BB", DTYPE_CODES[tensor.dtype], len(tensor.shape)))
        chunks.append(struct.pack(f"<{len(tensor.shape)}I", *tensor.shape))
        chunks.append(tensor.data.astype(tensor.dtype.newbyteorder("<"), copy=False).tobytes())
    return b"".join(chunks)


def write_bytes_atomic(path: PathLike, payload: bytes) -> None:
    target = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{target.name}.", dir=target.parent)
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_weights(store: Mapping[str, Tensor4], path: PathLike) -> None:
    write_bytes_atomic(path, encode_weights(store))
    logger.debug("saved %d tensors to %s", len(store), path)


class _Reader:
    def __init__(self, payload: bytes):
        self.payload = payload
        self.offset = 0

    def take(self, size: int, what: str) -> bytes:
        end = self.offset + size
        if end > len(self.payload):
            raise FormatError(f"truncated {what}: need {size} bytes, {len(self.payload) - self.offset} left", self.offset)
        chunk = self.payload[self.offset : end]
        self.offset = end
        return chunk

    def unpack(self, fmt: str, what: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_weights(payload: bytes) -> Dict[str, Tensor4]:
    r = _Reader(payload)
    if r.take(4, "magic") != MAGIC:
        raise FormatError("bad magic, not a BCPW weights file", 0)
    version_at = r.offset
    version, count = r.unpack("<HI", "header")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", version_at)
    store: Dict[str, Tensor4] = {}
    for _ in range(count):
        entry_at = r.offset
        (name_len,) = r.unpack("<H", "name length")
        try:
            name = r.take(name_len, "name").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("entry name is not UTF-8", entry_at + 2)
        if name in store:
            raise FormatError(f"duplicate entry {name!r}", entry_at)
        code_at = r.offset
        code, rank = r.unpack("<BB", "entry header")
        if code not in CODE_DTYPES:
            raise FormatError(f"entry {name!r} has unknown dtype code {code}", code_at)
        if rank != 4:
            raise FormatError(f"entry {name!r} has rank {rank}, expected 4", code_at + 1)
        dims_at = r.offset
        dims = r.unpack(f"<{rank}I", "dims")
        try:
            check_shape(dims)
        except InvalidShapeError as e:
            raise FormatError(f"entry {name!r}: {e.detail}", dims_at)
        dtype = CODE_DTYPES[code]
        raw = r.take(math.prod(dims) * dtype.itemsize, f"data of {name!r}")
        data = np.frombuffer(raw, dtype=dtype).reshape(dims).astype(dtype.newbyteorder("="))
        store[name] = Tensor4(data)
    if r.offset != len(payload):
        raise FormatError(f"{len(payload) - r.offset} trailing bytes after {count} entries", r.offset)
    return store


def load_weights(path: PathLike) -> Dict[str, Tensor4]:
    try:
        payload = Path(path).read_bytes()
    except OSError as e:
        raise FormatError(f"cannot read weights file {path}: {e.strerror}", 0)
    store = decode_weights(payload)
    logger.debug("loaded %d tensors from %s", len(store), path)
    return store


# ============================================================================
# Images
# ============================================================================

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
# signature (8) + chunk length (4) + "IHDR" (4) + width (4) + height (4)
BIT_DEPTH_AT = 24
UNSUPPORTED_MODES = {"I", "I;16", "I;16B", "I;16L", "I;16N", "F"}


def png_bit_depth(path: PathLike) -> int:
    """Sample bit depth from the IHDR chunk; Pillow narrows 16-bit RGB on load."""
    with open(path, "rb") as fh:
        head = fh.read(BIT_DEPTH_AT + 1)
    if len(head) <= BIT_DEPTH_AT or head[:8] != PNG_SIGNATURE or head[12:16] != b"IHDR":
        raise ImageIOError(f"{path}: missing PNG header")
    return head[BIT_DEPTH_AT]


def open_png(path: PathLike) -> Image.Image:
    try:
        img = Image.open(path)
        img.load()
    except (FileNotFoundError, UnidentifiedImageError, OSError, SyntaxError) as e:
        raise ImageIOError(f"cannot read image {path}: {e}")
    if img.format != "PNG":
        raise ImageIOError(f"{path} is {img.format}, only PNG is supported")
    depth = png_bit_depth(path)
    if depth > 8:
        raise ImageIOError(f"{path} has {depth}-bit samples; only 8-bit PNG is supported")
    if img.mode in UNSUPPORTED_MODES:
        raise ImageIOError(f"{path} uses {img.mode!r} samples; only 8-bit PNG is supported")
    return img


def read_image(path: PathLike) -> Tensor4:
    """8-bit RGB or grayscale PNG -> ``(1, 3, h, w)`` float32 in ``[0, 1]``."""
    img = open_png(path).convert("RGB")
    arr = np.asarray(img, dtype=np.float32) / np.float32(255.0)
    return Tensor4(np.ascontiguousarray(arr.transpose(2, 0, 1)[None]))


def read_label_png(path: PathLike) -> np.ndarray:
    img = open_png(path)
    if img.mode not in ("P", "L"):
        raise ImageIOError(f"{path}: label maps must be indexed or grayscale, got {img.mode!r}")
    return np.asarray(img, dtype=np.int64)


def read_pair(image_path: PathLike, label_path: PathLike) -> SynthSample:
    image = read_image(image_path)
    labels = read_label_png(label_path)
    if labels.shape != (image.h, image.w):
        raise ShapeError(f"label map {labels.shape} does not match image {(image.h, image.w)}")
    return SynthSample(image, labels)


def palette(num_classes: int) -> List[Colour]:
    """Cityscapes colours for 19 classes, evenly spaced hues otherwise."""
    if num_classes == len(CITYSCAPES_PALETTE):
        return list(CITYSCAPES_PALETTE)
    return [ImageColor.getrgb(f"hsv({round(360 * i / num_classes)},100%,100%)")[:3] for i in range(num_classes)]


def check_label_map(labels: np.ndarray, colours: Sequence[Colour]) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ShapeError(f"label map must be (h, w), got shape {labels.shape}")
    if len(colours) > IGNORE_INDEX:
        raise LabelError(f"indexed PNG holds at most {IGNORE_INDEX} classes, palette has {len(colours)}")
    bad = (labels != IGNORE_INDEX) & ((labels < 0) | (labels >= len(colours)))
    if np.any(bad):
        raise LabelError(f"labels outside the {len(colours)}-entry palette: {np.unique(labels[bad])[:8].tolist()}")
    return labels.astype(np.uint8)


def write_label_png(labels: np.ndarray, colours: Sequence[Colour], path: PathLike) -> None:
    """Write an indexed-colour PNG; the ignore index renders black."""
    img = Image.fromarray(check_label_map(labels, colours))
    flat = [0] * (256 * 3)
    for idx, colour in enumerate(colours):
        flat[3 * idx : 3 * idx + 3] = colour
    img.putpalette(flat)
    img.save(path, format="PNG")


def colorize(labels: np.ndarray, colours: Sequence[Colour]) -> np.ndarray:
    """``(h, w)`` labels -> ``(h, w, 3)`` uint8 RGB; ignore pixels are black."""
    lut = np.zeros((256, 3), dtype=np.uint8)
    lut[: len(colours)] = np.asarray(colours, dtype=np.uint8).reshape(-1, 3)
    return lut[check_label_map(labels, colours)]


def write_overlay(image: Tensor4, labels: np.ndarray, colours: Sequence[Colour], path: PathLike, alpha: float = 0.5) -> None:
    if labels.shape != (image.h, image.w):
        raise ShapeError(f"label map {labels.shape} does not match image {(image.h, image.w)}")
    rgb = np.clip(np.round(image.data[0].transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)
    base = Image.fromarray(np.ascontiguousarray(rgb))
    blended = Image.blend(base, Image.fromarray(colorize(labels, colours)), alpha)
    blended.save(path, format="PNG")


def write_text(path: PathLike, text: str) -> None:
    write_bytes_atomic(path, text.encode("utf-8"))


__all__ = [
    "CITYSCAPES_PALETTE",
    "MAGIC",
    "VERSION",
    "colorize",
    "decode_weights",
    "encode_weights",
    "load_weights",
    "palette",
    "png_bit_depth",
    "read_image",
    "read_label_png",
    "read_pair",
    "save_weights",
    "write_label_png",
    "write_overlay",
    "write_text",
]
