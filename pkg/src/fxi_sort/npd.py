"""NPD on-disk dataset container.

An NPD directory holds three files:

``manifest.json``
    UTF-8 JSON with ``version``, ``count``, ``shape`` ([rows, cols]),
    ``dtype`` ("f32" or "u32"), a ``geometry`` block, optional processing
    and provenance fields, and a per-frame ``meta`` array.
``patterns.bin``
    All frames concatenated in manifest order, row-major, little-endian,
    no padding.
``mask.bin``
    One byte per pixel, 0 or 1; the mask shared by every frame.

Round-trips are bit-exact for both supported dtypes.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ContractError
from .geometry import DetectorGeometry
from .pattern import Dataset, PatternMeta

FORMAT_VERSION = 1

_DTYPES = {"f32": np.dtype("<f4"), "u32": np.dtype("<u4")}


def _dtype_name(dt: np.dtype) -> str:
    for name, ref in _DTYPES.items():
        if dt == ref:
            return name
    raise ContractError(f"unsupported storage dtype {dt}; use f32 or u32")


def save_dataset(ds: Dataset, path: str | Path, dtype: str = "f32") -> Path:
    """Write a dataset as an NPD directory; returns the directory path."""
    if dtype not in _DTYPES:
        raise ContractError(f"unknown dtype {dtype!r}; use 'f32' or 'u32'")
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    frames = np.ascontiguousarray(ds.frames, dtype=_DTYPES[dtype])
    manifest = {
        "version": FORMAT_VERSION,
        "count": len(ds),
        "shape": [int(s) for s in ds.shape],
        "dtype": dtype,
        "geometry": ds.geometry.to_dict(),
        "processing": {"crop": ds.crop, "bin": ds.binning},
        "recipe": ds.recipe,
        "seed": ds.seed,
        "photon_budget": ds.photon_budget,
        "meta": [m.to_dict() for m in ds.meta],
    }
    (out / "manifest.json").write_text(json.dumps(manifest), encoding="utf-8")
    frames.tofile(out / "patterns.bin")
    ds.mask.astype(np.uint8).tofile(out / "mask.bin")
    return out


def load_manifest(path: str | Path) -> dict:
    return json.loads((Path(path) / "manifest.json").read_text(encoding="utf-8"))


def load_dataset(path: str | Path, mmap: bool = False) -> Dataset:
    """Read an NPD directory back into a :class:`Dataset`.

    With ``mmap=True`` the frame stack is memory-mapped read-only, so peak
    memory stays independent of the dataset size.
    """
    root = Path(path)
    manifest = load_manifest(root)
    if manifest.get("version") != FORMAT_VERSION:
        raise ContractError(f"unsupported NPD version {manifest.get('version')!r}")
    count = int(manifest["count"])
    shape = tuple(int(s) for s in manifest["shape"])
    dt = _DTYPES.get(manifest["dtype"])
    if dt is None:
        raise ContractError(f"unknown dtype {manifest['dtype']!r} in manifest")

    mask = np.fromfile(root / "mask.bin", dtype=np.uint8)
    if mask.size != shape[0] * shape[1]:
        raise ContractError("mask.bin size does not match manifest shape")
    mask = mask.reshape(shape).astype(bool)

    full_shape = (count, *shape)
    if mmap:
        frames = np.memmap(root / "patterns.bin", dtype=dt, mode="r", shape=full_shape)
    else:
        frames = np.fromfile(root / "patterns.bin", dtype=dt)
        if frames.size != count * shape[0] * shape[1]:
            raise ContractError("patterns.bin size does not match manifest")
        frames = frames.reshape(full_shape)

    processing = manifest.get("processing") or {}
    return Dataset(
        frames=frames,
        mask=mask,
        meta=[PatternMeta.from_dict(m) for m in manifest["meta"]],
        geometry=DetectorGeometry.from_dict(manifest["geometry"]),
        crop=processing.get("crop"),
        binning=processing.get("bin") or 1,
        recipe=manifest.get("recipe"),
        seed=manifest.get("seed"),
        photon_budget=manifest.get("photon_budget"),
    )


def frame_as_float64(frames: np.ndarray, i: int) -> np.ndarray:
    """Load one stored frame as a fresh float64 array (copies out of mmaps)."""
    return np.asarray(frames[i], dtype=np.float64)
