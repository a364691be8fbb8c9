"""Detector frames, frame collections, and the shared frame operations.

A :class:`Pattern` holds one frame (expected intensities or photon counts)
together with its validity mask and provenance metadata.  Masked-out pixels
always hold the value 0, so plain sums and inner products over whole arrays
already restrict themselves to valid pixels.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterator, Optional, Sequence

import numpy as np

from .errors import ContractError, DimensionError
from .geometry import DetectorGeometry

LABEL_ICOSAHEDRON = "icosahedron"
LABEL_SPHEROID = "spheroid"
LABEL_SPHERE = "sphere"
LABEL_UNKNOWN = "unknown"
LABELS = (LABEL_ICOSAHEDRON, LABEL_SPHEROID, LABEL_SPHERE, LABEL_UNKNOWN)


@dataclass(frozen=True)
class PatternMeta:
    """Per-frame provenance; fields are None when not applicable."""

    label: str = LABEL_UNKNOWN
    orientation: Optional[tuple[float, float, float, float]] = None
    true_fluence: Optional[float] = None
    true_diameter_nm: Optional[float] = None
    aspect_ratio: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "orientation": list(self.orientation) if self.orientation else None,
            "true_fluence": self.true_fluence,
            "true_diameter_nm": self.true_diameter_nm,
            "aspect_ratio": self.aspect_ratio,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PatternMeta":
        quat = d.get("orientation")
        return cls(
            label=d.get("label", LABEL_UNKNOWN),
            orientation=tuple(quat) if quat else None,
            true_fluence=d.get("true_fluence"),
            true_diameter_nm=d.get("true_diameter_nm"),
            aspect_ratio=d.get("aspect_ratio"),
        )


def _freeze(a: np.ndarray) -> np.ndarray:
    if a.flags.writeable:
        a = a.copy() if a.base is not None else a
        a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Pattern:
    """One detector frame: values, validity mask, metadata.

    Invariants enforced at construction: data is finite and non-negative,
    data and mask share one shape, masked pixels hold 0.
    """

    data: np.ndarray
    mask: np.ndarray
    meta: PatternMeta = field(default_factory=PatternMeta)

    def __post_init__(self) -> None:
        data = np.asarray(self.data)
        mask = np.asarray(self.mask, dtype=bool)
        if data.shape != mask.shape or data.ndim != 2:
            raise DimensionError(
                f"data {data.shape} and mask {mask.shape} must be equal 2-d shapes"
            )
        if not np.all(np.isfinite(data)):
            raise ContractError("pattern data must be finite everywhere")
        if data.size and data.min() < 0:
            raise ContractError("pattern data must be non-negative")
        if np.any(data[~mask] != 0):
            data = data.copy()
            data[~mask] = 0
        object.__setattr__(self, "data", _freeze(data))
        object.__setattr__(self, "mask", _freeze(mask))

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def n_valid(self) -> int:
        """Number of unmasked pixels."""
        return int(self.mask.sum())

    def with_data(self, data: np.ndarray, **meta_updates) -> "Pattern":
        meta = replace(self.meta, **meta_updates) if meta_updates else self.meta
        return Pattern(data=data, mask=self.mask, meta=meta)


def crop_center(p: Pattern, side: int) -> Pattern:
    """Return the centred ``side x side`` sub-frame, mask cropped identically.

    ``side`` must be even and no larger than either frame dimension.
    """
    rows, cols = p.shape
    if side > min(rows, cols):
        raise DimensionError(f"crop side {side} exceeds frame shape {p.shape}")
    if side <= 0 or side % 2:
        raise DimensionError("crop side must be positive and even")
    r0 = (rows - side) // 2
    c0 = (cols - side) // 2
    return Pattern(
        data=p.data[r0 : r0 + side, c0 : c0 + side].copy(),
        mask=p.mask[r0 : r0 + side, c0 : c0 + side].copy(),
        meta=p.meta,
    )


def bin_mask(mask: np.ndarray, b: int) -> tuple[np.ndarray, np.ndarray]:
    """Bin a mask by ``b``; returns (binned mask, unmasked count per block).

    A binned pixel stays valid as long as at least one contributing pixel is
    valid; fully masked blocks are masked.
    """
    rows, cols = mask.shape
    if rows % b or cols % b:
        raise DimensionError(f"bin factor {b} does not divide shape {mask.shape}")
    counts = mask.reshape(rows // b, b, cols // b, b).sum(axis=(1, 3))
    return counts > 0, counts


def bin_frame(p: Pattern, b: int) -> Pattern:
    """Average each ``b x b`` block over its unmasked members.

    Blocks with no unmasked member become masked zeros.  Averaging over the
    unmasked members only avoids pulling intensities down at the edge of the
    missing-data disc.
    """
    if b == 1:
        return p
    rows, cols = p.shape
    if rows % b or cols % b:
        raise DimensionError(f"bin factor {b} does not divide shape {p.shape}")
    binned_mask, counts = bin_mask(p.mask, b)
    sums = p.data.reshape(rows // b, b, cols // b, b).sum(axis=(1, 3), dtype=np.float64)
    out = np.zeros_like(sums)
    np.divide(sums, counts, out=out, where=binned_mask)
    return Pattern(data=out, mask=binned_mask, meta=p.meta)


def masked_sum(p: Pattern) -> float:
    """Sum of frame values over unmasked pixels."""
    return float(p.data.sum(dtype=np.float64))


@dataclass
class Dataset:
    """Ordered frame collection sharing one geometry, crop and binning.

    Frames are stored stacked as ``(count, rows, cols)``; element access
    yields :class:`Pattern` views against the one shared mask.
    """

    frames: np.ndarray
    mask: np.ndarray
    meta: list[PatternMeta]
    geometry: DetectorGeometry
    crop: Optional[int] = None
    binning: int = 1
    recipe: Optional[str] = None
    seed: Optional[int] = None
    photon_budget: Optional[float] = None

    def __post_init__(self) -> None:
        if self.frames.ndim != 3 or self.frames.shape[0] < 1:
            raise ContractError("dataset needs at least one frame, stacked 3-d")
        if self.frames.shape[1:] != self.mask.shape:
            raise ContractError("frame and mask shapes differ")
        if len(self.meta) != self.frames.shape[0]:
            raise ContractError("metadata count does not match frame count")

    def __len__(self) -> int:
        return self.frames.shape[0]

    def __getitem__(self, i: int) -> Pattern:
        return Pattern(data=np.asarray(self.frames[i]), mask=self.mask, meta=self.meta[i])

    def __iter__(self) -> Iterator[Pattern]:
        for i in range(len(self)):
            yield self[i]

    @property
    def shape(self) -> tuple[int, int]:
        return self.frames.shape[1:]

    @classmethod
    def from_patterns(
        cls,
        patterns: Sequence[Pattern],
        geometry: DetectorGeometry,
        **kwargs,
    ) -> "Dataset":
        if not patterns:
            raise ContractError("empty pattern list")
        mask = patterns[0].mask
        for p in patterns[1:]:
            if p.shape != patterns[0].shape or not np.array_equal(p.mask, mask):
                raise ContractError("all frames must share one shape and mask")
        frames = np.stack([p.data for p in patterns])
        return cls(
            frames=frames,
            mask=mask.copy(),
            meta=[p.meta for p in patterns],
            geometry=geometry,
            **kwargs,
        )
