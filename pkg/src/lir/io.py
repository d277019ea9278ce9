"""LIRC checkpoints, JSON configs and 8-bit PNG images.

LIRC layout (all integers little-endian)::

    b"LIRC" | u32 version=1 | u32 n | n bytes UTF-8 JSON config
    u32 tensor_count
    per tensor: u16 name_len | name (UTF-8) | u8 dtype | u8 ndim | u32 dims[ndim] | payload

dtype codes: 0 = float32, 1 = float64.  Payloads are row-major.
"""
from __future__ import annotations

import json
import os
import struct
from collections import OrderedDict
from typing import Dict, Mapping, Optional, Tuple

import numpy as np
from PIL import Image

MAGIC = b"LIRC"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


class CheckpointError(ValueError):
    pass


class ImageFormatError(ValueError):
    pass


def write_lirc(path: str, tensors: Mapping[str, np.ndarray], config: dict) -> None:
    blob = json.dumps(config, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(blob)), blob, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        code = _CODES.get(arr.dtype)
        if code is None:
            raise CheckpointError(f"tensor {name!r}: unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise CheckpointError(f"tensor name too long: {name[:40]}...")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<BB", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(b"".join(parts))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, buf: bytes, path: str):
        self.buf, self.pos, self.path = buf, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"{self.path}: truncated file (wanted {n} bytes at offset {self.pos})")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_lirc(path: str) -> Tuple["OrderedDict[str, np.ndarray]", dict]:
    with open(path, "rb") as fh:
        r = _Reader(fh.read(), path)
    magic = r.take(4)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}, not a LIRC checkpoint")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported LIRC version {version} (expected {VERSION})")
    (n,) = r.unpack("<I")
    try:
        config = json.loads(r.take(n).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: malformed config blob: {exc}") from None
    (count,) = r.unpack("<I")
    tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8")
        code, ndim = r.unpack("<BB")
        if code not in _DTYPES:
            raise CheckpointError(f"{path}: tensor {name!r} has unknown dtype code {code}")
        dims = r.unpack(f"<{ndim}I") if ndim else ()
        dt = _DTYPES[code]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
        arr = np.frombuffer(r.take(nbytes), dtype=dt).reshape(dims)
        if name in tensors:
            raise CheckpointError(f"{path}: duplicate tensor name {name!r}")
        tensors[name] = arr.astype(dt.newbyteorder("="))
    if r.pos != len(r.buf):
        raise CheckpointError(f"{path}: {len(r.buf) - r.pos} trailing bytes")
    return tensors, config


# ---------------------------------------------------------------------------
# model-level helpers
# ---------------------------------------------------------------------------

def save_checkpoint(path: str, model, state=None, metadata: Optional[dict] = None) -> None:
    """Write model tensors (plus optimizer moments when ``state`` is given)."""
    tensors = OrderedDict(model.state_dict())
    config = {"model": model.cfg.to_dict(), "fused": model.is_fused,
              "dtype": str(model.head.weight.dtype)}
    if metadata:
        config["meta"] = metadata
    if state is not None:
        for name, arr in state.tensors().items():
            key = f"optim.{name}"
            if key in tensors:
                raise CheckpointError(f"name collision on {key}")
            tensors[key] = arr
        config["train_state"] = state.to_dict()
    write_lirc(path, tensors, config)


def load_checkpoint(path: str, with_state: bool = False):
    """Rebuild the model stored at ``path``; optionally its TrainState too."""
    from .model import LIR, ModelConfig
    from .training import TrainState

    tensors, config = read_lirc(path)
    try:
        cfg = ModelConfig.from_dict(config["model"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: bad model config: {exc}") from None
    dtype = np.dtype(config.get("dtype", "float32"))
    model = LIR(cfg, dtype=dtype)
    if config.get("fused") and not model.is_fused:
        model.fuse()
    model_tensors = OrderedDict((k, v) for k, v in tensors.items() if not k.startswith("optim."))
    model.load_state_dict(model_tensors)
    if not with_state:
        return model
    state = None
    if "train_state" in config:
        optim = {k[len("optim."):]: v for k, v in tensors.items() if k.startswith("optim.")}
        state = TrainState.from_dict(config["train_state"], optim)
    return model, state, config


def load_json(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# PNG
# ---------------------------------------------------------------------------

def read_png(path: str) -> np.ndarray:
    """Decode an 8-bit PNG to a float32 ``(3, H, W)`` array in [0, 1]."""
    try:
        img = Image.open(path)
        img.load()
    except (OSError, SyntaxError) as exc:
        raise ImageFormatError(f"{path}: cannot decode image: {exc}") from None
    if img.format != "PNG":
        raise ImageFormatError(f"{path}: not a PNG file ({img.format})")
    mode = img.mode
    if mode in ("I", "I;16", "I;16B", "I;16L", "F", "1") or mode.startswith("I;"):
        raise ImageFormatError(f"{path}: unsupported bit depth (mode {mode}); only 8-bit PNGs are read")
    if mode in ("L", "LA", "P", "PA", "RGBA"):
        img = img.convert("RGB")
    elif mode != "RGB":
        raise ImageFormatError(f"{path}: unsupported PNG mode {mode}")
    arr = np.asarray(img, dtype=np.uint8)
    return (arr.astype(np.float32) / 255.0).transpose(2, 0, 1).copy()


def to_bytes(image: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and round half up to uint8."""
    return np.floor(np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_png(image: np.ndarray, path: str) -> None:
    """Write a ``(3, H, W)`` (RGB) or ``(1, H, W)``/``(H, W)`` (grayscale) array."""
    image = np.asarray(image)
    if image.ndim == 3 and image.shape[0] == 3:
        Image.fromarray(to_bytes(image.transpose(1, 2, 0)), "RGB").save(path, format="PNG")
    elif image.ndim == 2 or (image.ndim == 3 and image.shape[0] == 1):
        Image.fromarray(to_bytes(image.reshape(image.shape[-2:])), "L").save(path, format="PNG")
    else:
        raise ImageFormatError(f"cannot write array of shape {image.shape} as PNG")


def list_pngs(directory: str) -> Dict[str, str]:
    if not os.path.isdir(directory):
        raise FileNotFoundError(f"not a directory: {directory}")
    return {f: os.path.join(directory, f) for f in sorted(os.listdir(directory)) if f.lower().endswith(".png")}
