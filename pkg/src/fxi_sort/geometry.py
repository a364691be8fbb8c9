"""Detector geometry and the central missing-data mask.

The default geometry is a 960x960 pixel detector with 75 um pixels placed
0.74 m downstream of the interaction region, illuminated at 1 nm, with a
circular missing-data disc of 80 pixels diameter centred on the beam axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class DetectorGeometry:
    """Pixel grid and physical placement of the detector.

    ``n_slow`` counts rows, ``n_fast`` counts columns of a row-major frame.
    ``missing_diameter`` is the diameter (in full-resolution pixels) of the
    central disc that carries no valid data.
    """

    n_fast: int = 960
    n_slow: int = 960
    pixel_pitch: float = 75e-6
    distance: float = 0.74
    wavelength: float = 1e-9
    missing_diameter: int = 80
    bad_pixels: tuple[tuple[int, int], ...] = field(default=())

    def __post_init__(self) -> None:
        if self.n_fast <= 0 or self.n_slow <= 0:
            raise DomainError("detector dimensions must be positive")
        if min(self.pixel_pitch, self.distance, self.wavelength) <= 0:
            raise DomainError("pixel_pitch, distance and wavelength must be positive")
        if self.missing_diameter >= min(self.n_fast, self.n_slow):
            raise DomainError("missing-data disc must be smaller than the frame")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_slow, self.n_fast)

    @property
    def beam_center(self) -> tuple[float, float]:
        """Beam axis position in (row, col) pixel-centre coordinates."""
        return ((self.n_slow - 1) / 2.0, (self.n_fast - 1) / 2.0)

    def make_mask(self) -> np.ndarray:
        """Boolean mask, True where a pixel participates in computations.

        False on the centred missing-data disc plus any registered bad pixels.
        """
        rc, cc = self.beam_center
        rows = np.arange(self.n_slow)[:, None] - rc
        cols = np.arange(self.n_fast)[None, :] - cc
        mask = rows * rows + cols * cols >= (self.missing_diameter / 2.0) ** 2
        for r, c in self.bad_pixels:
            mask[r, c] = False
        mask.setflags(write=False)
        return mask

    def pixel_q(self) -> tuple[np.ndarray, np.ndarray]:
        """Transverse scattering-vector components (qy, qx) per pixel, in 1/m.

        Small-angle map q = (2*pi/lambda) * (x, y) / L, with the incident
        beam along +z and the axial component dropped (flat-Ewald
        approximation).  This is the exact q grid the forward model
        evaluates on, so simulated and analytic intensities share one q
        convention.
        """
        rc, cc = self.beam_center
        y = (np.arange(self.n_slow) - rc) * self.pixel_pitch
        x = (np.arange(self.n_fast) - cc) * self.pixel_pitch
        yy, xx = np.meshgrid(y, x, indexing="ij")
        k = 2.0 * np.pi / self.wavelength
        return k * yy / self.distance, k * xx / self.distance

    def to_dict(self) -> dict:
        return {
            "n_fast": self.n_fast,
            "n_slow": self.n_slow,
            "pixel_pitch": self.pixel_pitch,
            "distance": self.distance,
            "wavelength": self.wavelength,
            "missing_diameter": self.missing_diameter,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DetectorGeometry":
        return cls(
            n_fast=int(d["n_fast"]),
            n_slow=int(d["n_slow"]),
            pixel_pitch=float(d["pixel_pitch"]),
            distance=float(d["distance"]),
            wavelength=float(d["wavelength"]),
            missing_diameter=int(d["missing_diameter"]),
        )
