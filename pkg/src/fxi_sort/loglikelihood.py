"""Poisson log-likelihood classifier.

For each template the per-frame fluence is estimated as the ratio of
masked sums, then the joint log-likelihood (constant terms dropped)

    L = sum(P * log T) + sum(P) * log(phi) - phi * sum(T)

is evaluated over the pixels unmasked in both frames, and the template
maximizing L wins.  Template logs come from a floored cache so zero
template pixels cannot produce infinities; counts may be real-valued
(binned frames average counts), in which case L is a quasi-likelihood.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .backend import kernels
from .errors import ContractError, DegenerateTemplateError, DomainError
from .metrics import TemplateMatch
from .pattern import Dataset, Pattern

LOG_FLOOR_RELATIVE = 1e-12


def _log_floor(data: np.ndarray, mask: np.ndarray) -> float:
    peak = float(data.max(initial=0.0, where=mask)) if data.size else 0.0
    if peak <= 0:
        raise DegenerateTemplateError("template carries no intensity")
    return LOG_FLOOR_RELATIVE * peak


def _floored_log(data: np.ndarray, mask: np.ndarray) -> np.ndarray:
    floor = _log_floor(data, mask)
    return np.log(np.maximum(np.asarray(data, dtype=np.float64), floor))


def estimate_fluence(p: Pattern, template: Pattern) -> float:
    """Ratio of frame to template masked sums over the shared mask."""
    if p.shape != template.shape:
        raise ContractError("frame and template shapes differ")
    s_p, s_t = kernels().pair_sums(
        np.ascontiguousarray(p.data, dtype=np.float64),
        np.ascontiguousarray(template.data, dtype=np.float64),
        np.ascontiguousarray(p.mask, dtype=np.uint8),
        np.ascontiguousarray(template.mask, dtype=np.uint8),
    )
    if s_t <= 0:
        raise DegenerateTemplateError("template sum over the shared mask is zero")
    return s_p / s_t


def log_likelihood(p: Pattern, template: Pattern, phi: float) -> float:
    """Joint log-likelihood of the counts given a fluence-scaled template.

    ``phi = 0`` is only admissible for an all-zero frame (returns 0 by
    convention); otherwise ``phi`` must be positive.
    """
    if p.shape != template.shape:
        raise ContractError("frame and template shapes differ")
    logt = _floored_log(template.data, template.mask)
    return _log_likelihood_cached(
        np.ascontiguousarray(p.data, dtype=np.float64),
        np.ascontiguousarray(p.mask, dtype=np.uint8),
        np.ascontiguousarray(template.data, dtype=np.float64),
        np.ascontiguousarray(template.mask, dtype=np.uint8),
        logt,
        phi,
    )


def _log_likelihood_cached(p64, pmask8, t64, tmask8, logt, phi: float) -> float:
    s_plogt, s_p, s_t = kernels().loglik_sums(p64, t64, logt, pmask8, tmask8)
    if phi < 0:
        raise DomainError("fluence must be non-negative")
    if phi == 0.0:
        if s_p > 0:
            raise DomainError("zero fluence is inconsistent with observed counts")
        return 0.0
    return s_plogt + s_p * math.log(phi) - phi * s_t


@dataclass
class LlModel:
    """Template set plus the per-template caches the matcher needs.

    Templates hold noiseless expected intensities; every template must
    carry positive total intensity on its mask.
    """

    templates: Dataset
    _t64: np.ndarray = field(init=False, repr=False)
    _logt: np.ndarray = field(init=False, repr=False)
    _tmask8: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if len(self.templates) < 1:
            raise ContractError("empty template set")
        t64 = np.ascontiguousarray(self.templates.frames, dtype=np.float64)
        mask = self.templates.mask
        logt = np.empty_like(t64)
        for k in range(t64.shape[0]):
            logt[k] = _floored_log(t64[k], mask)
        self._t64 = t64
        self._logt = logt
        self._tmask8 = np.ascontiguousarray(mask, dtype=np.uint8)

    @property
    def n_templates(self) -> int:
        return len(self.templates)

    @property
    def frame_shape(self) -> tuple[int, int]:
        return self.templates.shape


def ll_classify(model: LlModel, p: Pattern) -> TemplateMatch:
    """Maximize the per-template log-likelihood at the fitted fluence.

    Every template gets its own fluence estimate and likelihood pass;
    ties break toward the smallest template index.
    """
    if p.shape != model.frame_shape:
        raise ContractError(
            f"frame shape {p.shape} does not match model {model.frame_shape}"
        )
    p64 = np.ascontiguousarray(p.data, dtype=np.float64)
    pmask8 = np.ascontiguousarray(p.mask, dtype=np.uint8)

    best_k = -1
    best_l = -math.inf
    best_phi = 0.0
    for k in range(model.n_templates):
        t64 = model._t64[k]
        s_p, s_t = kernels().pair_sums(p64, t64, pmask8, model._tmask8)
        if s_t <= 0:
            raise DegenerateTemplateError(f"template {k} sums to zero on the shared mask")
        phi = s_p / s_t
        lk = _log_likelihood_cached(p64, pmask8, t64, model._tmask8, model._logt[k], phi)
        if lk > best_l:
            best_k, best_l, best_phi = k, lk, phi
    meta = model.templates.meta[best_k]
    return TemplateMatch(
        matched_id=best_k,
        matched_label=meta.label,
        score=best_l,
        phi_hat=best_phi,
        template_meta=meta,
    )
