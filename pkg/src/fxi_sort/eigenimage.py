"""Eigen-image classifier: eigenbasis training and nearest-projection matching.

Training normalizes every frame to unit L2 norm over unmasked pixels,
subtracts the pixel mean, and eigendecomposes the small frame-by-frame
Gram matrix instead of the huge pixel covariance.  A test frame is
normalized the same way, projected onto the basis, and matched to the
training frame with the nearest projection vector.

The frame normalization makes matching insensitive to per-frame signal
strength; fluence is recovered downstream against the matched template.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .errors import ContractError, DegenerateTrainingError
from .metrics import TemplateMatch
from .npd import load_dataset, save_dataset
from .pattern import Dataset, Pattern

MODEL_VERSION = 1
# Relative eigenvalue floor.  Directions with lambda below this carry no
# usable variance, and rescaling them to unit norm amplifies float64
# round-off until the basis stops being orthonormal (the 1e-8 basis
# orthonormality guarantee fails below roughly this floor).
RANK_TOLERANCE = 1e-8


@dataclass
class EiModel:
    """Trained eigen-image state.

    ``basis`` has orthonormal columns (one per retained eigenvalue) in
    pixel space; ``projections`` holds each training frame's coordinates
    in that basis, column per frame.  ``templates`` keeps the raw training
    frames for downstream residual scoring and fluence recovery.
    """

    mean_image: np.ndarray
    basis: np.ndarray
    projections: np.ndarray
    eigenvalues: np.ndarray
    templates: Dataset

    @property
    def rank(self) -> int:
        return self.basis.shape[1]

    @property
    def n_train(self) -> int:
        return len(self.templates)

    @property
    def frame_shape(self) -> tuple[int, int]:
        return self.templates.shape

    def labels(self) -> list[str]:
        return [m.label for m in self.templates.meta]


def _normalized_rows(frames: np.ndarray) -> np.ndarray:
    x = frames.reshape(frames.shape[0], -1).astype(np.float64)
    norms = np.linalg.norm(x, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    return x / safe[:, None]


def ei_train(train: Dataset, rank: Union[int, str] = "all") -> EiModel:
    """Train the eigen-image model from a preprocessed dataset.

    ``rank`` keeps the leading eigen-directions ("all" keeps every one
    above the relative rank tolerance).  Raises
    :class:`DegenerateTrainingError` when all frames coincide.
    """
    if len(train) < 1:
        raise ContractError("empty training dataset")
    if isinstance(rank, str):
        if rank != "all":
            raise ContractError(f"rank must be an integer or 'all', got {rank!r}")
        requested = None
    else:
        requested = int(rank)
        if requested < 1 or requested > len(train):
            raise ContractError("rank must lie in [1, n_train]")

    xn = _normalized_rows(np.asarray(train.frames))
    mean = xn.mean(axis=0)
    centered = xn - mean

    gram = centered @ centered.T
    eigvals, eigvecs = np.linalg.eigh(gram)
    order = np.argsort(eigvals)[::-1]
    eigvals = eigvals[order]
    eigvecs = eigvecs[:, order]

    lam_max = float(eigvals[0]) if eigvals.size else 0.0
    if lam_max <= 0:
        raise DegenerateTrainingError("training frames are identical; rank is zero")
    if float(eigvals[-1]) < -1e-10 * lam_max:
        raise DegenerateTrainingError(
            "Gram matrix is not numerically positive semidefinite"
        )
    eigvals = np.clip(eigvals, 0.0, None)
    numerical_rank = int((eigvals > RANK_TOLERANCE * lam_max).sum())
    keep = numerical_rank
    if requested is not None:
        if requested > numerical_rank:
            warnings.warn(
                f"requested rank {requested} exceeds numerical rank "
                f"{numerical_rank}; model truncated",
                RuntimeWarning,
                stacklevel=2,
            )
        keep = min(requested, numerical_rank)

    basis = centered.T @ eigvecs[:, :keep]
    basis /= np.linalg.norm(basis, axis=0)[None, :]
    projections = basis.T @ centered.T
    return EiModel(
        mean_image=mean,
        basis=basis,
        projections=projections,
        eigenvalues=eigvals[:keep],
        templates=train,
    )


def ei_classify(model: EiModel, p: Pattern) -> TemplateMatch:
    """Match a preprocessed frame to the nearest training projection.

    The score is the Euclidean distance between projection vectors; ties
    break toward the smallest template index.
    """
    if p.shape != model.frame_shape:
        raise ContractError(
            f"frame shape {p.shape} does not match model {model.frame_shape}"
        )
    x = p.data.ravel().astype(np.float64)
    norm = np.linalg.norm(x)
    if norm > 0:
        x = x / norm
    w = model.basis.T @ (x - model.mean_image)
    distances = np.linalg.norm(model.projections - w[:, None], axis=0)
    k = int(np.argmin(distances))
    meta = model.templates.meta[k]
    return TemplateMatch(
        matched_id=k,
        matched_label=meta.label,
        score=float(distances[k]),
        phi_hat=float("nan"),
        template_meta=meta,
    )


def save_ei_model(model: EiModel, path: Union[str, Path]) -> Path:
    """Serialize to a directory: model.json, four float64 arrays, templates/."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    model.mean_image.astype("<f8").tofile(out / "mean.bin")
    np.ascontiguousarray(model.basis, dtype="<f8").tofile(out / "basis.bin")
    np.ascontiguousarray(model.projections, dtype="<f8").tofile(out / "omega.bin")
    model.eigenvalues.astype("<f8").tofile(out / "eigvals.bin")
    save_dataset(model.templates, out / "templates", dtype="f32")
    info = {
        "version": MODEL_VERSION,
        "kind": "eigen-image",
        "n_train": model.n_train,
        "rank": model.rank,
        "frame_shape": list(model.frame_shape),
        "preprocessing": {
            "crop": model.templates.crop,
            "bin": model.templates.binning,
            "normalized": True,
        },
        "files": {
            "mean": "mean.bin",
            "basis": "basis.bin",
            "omega": "omega.bin",
            "eigvals": "eigvals.bin",
            "templates": "templates",
        },
    }
    (out / "model.json").write_text(json.dumps(info), encoding="utf-8")
    return out


def load_ei_model(path: Union[str, Path]) -> EiModel:
    root = Path(path)
    info = json.loads((root / "model.json").read_text(encoding="utf-8"))
    if info.get("version") != MODEL_VERSION or info.get("kind") != "eigen-image":
        raise ContractError(f"not a supported eigen-image model: {root}")
    n_pix = int(np.prod(info["frame_shape"]))
    n_train = int(info["n_train"])
    rank = int(info["rank"])
    mean = np.fromfile(root / "mean.bin", dtype="<f8")
    basis = np.fromfile(root / "basis.bin", dtype="<f8").reshape(n_pix, rank)
    omega = np.fromfile(root / "omega.bin", dtype="<f8").reshape(rank, n_train)
    eigvals = np.fromfile(root / "eigvals.bin", dtype="<f8")
    if mean.size != n_pix or eigvals.size != rank:
        raise ContractError("model arrays do not match the manifest")
    templates = load_dataset(root / "templates")
    return EiModel(
        mean_image=mean,
        basis=basis,
        projections=omega,
        eigenvalues=eigvals,
        templates=templates,
    )
