"""Kernel transfer of survey weights to the cohort, plus registry poststratification.

Step 1 distributes each survey unit's sampling weight across cohort units
proportionally to a Gaussian kernel of the propensity linear-predictor
distance.  Step 2 rescales weights within post-strata so weighted event
(and optionally non-event) totals match registry counts.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .data_model import RegistrySummary, Sample
from .errors import CellError, ValidationError

log = logging.getLogger(__name__)

KW_ONLY = "kw_only"
POST_RG = "post_rg"
POST_POP = "post_pop"

_CHUNK = 4096


@dataclass(frozen=True)
class WeightSet:
    """KW pseudoweights, poststratification factors, and final weights."""

    kw: np.ndarray
    post_factor: np.ndarray
    final: np.ndarray
    bandwidth: float | None
    variant: str


def silverman_bandwidth(q_cohort: np.ndarray) -> float | None:
    """Rule-of-thumb bandwidth 0.9 * min(sd, IQR/1.34) * n^(-1/5).

    Quantiles use linear interpolation.  Returns None when the inputs have
    zero spread (degenerate case: kw_weights falls back to uniform shares).
    """
    q = np.asarray(q_cohort, dtype=float)
    if q.size < 2:
        raise ValidationError("bandwidth needs at least 2 cohort units")
    sd = float(np.std(q, ddof=1))
    q75, q25 = np.percentile(q, [75.0, 25.0])
    iqr = float(q75 - q25)
    spread = min(sd, iqr / 1.34)
    if spread <= 0.0:
        return None
    return 0.9 * spread * q.size ** (-0.2)


def kw_weights(q_cohort: np.ndarray, q_survey: np.ndarray, w_survey: np.ndarray,
               h: float | None, cohort_base_weights: np.ndarray | None = None) -> np.ndarray:
    """Kernel-weighting transfer: cohort pseudoweights from survey weights.

    Each survey unit's weight is split across cohort units with standard
    normal kernel shares; shares are computed with per-survey-unit max
    subtraction so columns never underflow wholesale.  Mass is conserved:
    sum(kw) == sum(w_survey) up to rounding.
    """
    qc = np.asarray(q_cohort, dtype=float)
    qs = np.asarray(q_survey, dtype=float)
    w = np.asarray(w_survey, dtype=float)
    if np.any(w <= 0):
        raise ValidationError("survey weights must be positive")
    c = np.ones(qc.size) if cohort_base_weights is None \
        else np.asarray(cohort_base_weights, dtype=float)
    if h is None:
        # degenerate spread: pointwise limit of the kernel shares
        return c * (w.sum() / c.sum())
    if h <= 0:
        raise ValidationError("bandwidth must be positive")

    # pass 1: per-survey-unit log-kernel max (nearest cohort q)
    order = np.argsort(qc)
    pos = np.searchsorted(qc[order], qs)
    left = qc[order][np.clip(pos - 1, 0, qc.size - 1)]
    right = qc[order][np.clip(pos, 0, qc.size - 1)]
    nearest = np.where(np.abs(qs - left) <= np.abs(right - qs), left, right)
    lmax = -0.5 * ((nearest - qs) / h) ** 2

    # pass 2: stabilized denominators; pass 3: accumulate pseudoweights
    denom = np.zeros(qs.size)
    for lo in range(0, qc.size, _CHUNK):
        u = (qc[lo:lo + _CHUNK, None] - qs[None, :]) / h
        denom += c[lo:lo + _CHUNK] @ np.exp(-0.5 * u * u - lmax[None, :])
    share_scale = w / denom
    out = np.empty(qc.size)
    for lo in range(0, qc.size, _CHUNK):
        u = (qc[lo:lo + _CHUNK, None] - qs[None, :]) / h
        out[lo:lo + _CHUNK] = c[lo:lo + _CHUNK] * (np.exp(-0.5 * u * u - lmax[None, :]) @ share_scale)
    return out


def _calibrate(kw: np.ndarray, mask: np.ndarray, cells: np.ndarray,
               registry_cells, factor: np.ndarray, collapse: bool, label: str):
    """Fill calibration factors for units under ``mask`` toward registry counts."""
    reg = dict(registry_cells)
    present = set(np.unique(cells[mask]))
    unmatched = present - set(reg)
    if unmatched:
        raise CellError(f"{label} cell(s) {sorted(unmatched)} absent from registry")
    order = sorted(reg)
    counts = {g: reg[g] for g in order}
    if collapse:
        # merge registry cells with no cohort units into the nearest declared neighbor
        for i, g in enumerate(order):
            if counts[g] > 0 and g not in present:
                neighbors = [order[j] for j in
                             sorted(range(len(order)), key=lambda j: abs(j - i)) if order[j] != g]
                target = next((t for t in neighbors if t in present), None)
                if target is None:
                    raise CellError(f"no {label} cohort cell available to absorb {g!r}")
                log.warning("collapsing empty %s cell %r into %r", label, g, target)
                counts[target] += counts[g]
                counts[g] = 0.0
    for g in order:
        m_g = counts[g]
        in_cell = mask & (cells == g)
        total = float(kw[in_cell].sum())
        if m_g > 0 and total == 0.0:
            raise CellError(
                f"registry {label} cell {g!r} has count {m_g} but no matching cohort unit"
            )
        if m_g == 0 and in_cell.any():
            raise CellError(
                f"registry {label} cell {g!r} has count 0 but cohort units fall in it"
            )
        if in_cell.any():
            factor[in_cell] = m_g / total


def poststratify(kw: np.ndarray, cohort: Sample, registry: RegistrySummary,
                 variant: str, cells: np.ndarray, collapse: bool = False,
                 bandwidth: float | None = None) -> WeightSet:
    """Rescale KW pseudoweights so cell totals match registry counts.

    ``post_rg`` calibrates events only (non-events keep factor 1);
    ``post_pop`` also calibrates non-events, so the final weights sum to the
    registry population size.
    """
    kw = np.asarray(kw, dtype=float)
    if variant not in (POST_RG, POST_POP):
        raise ValidationError(f"unknown poststratification variant {variant!r}")
    cells = np.asarray(cells, dtype=object)
    if len(cells) != cohort.n or len(kw) != cohort.n:
        raise ValidationError("kw/cells length mismatch with cohort")
    events = cohort.d == 1
    factor = np.ones(cohort.n)
    _calibrate(kw, events, cells, registry.event_cells, factor, collapse, "event")
    if variant == POST_POP:
        if registry.nonevent_cells is None:
            raise CellError("post_pop requires non-event registry cells")
        _calibrate(kw, ~events, cells, registry.nonevent_cells, factor, collapse, "non-event")
    final = factor * kw
    if np.any(~np.isfinite(final)) or np.any(final <= 0):
        raise ValidationError("poststratified weights must be finite and positive")
    return WeightSet(kw=kw, post_factor=factor, final=final,
                     bandwidth=bandwidth, variant=variant)


def kw_only_weights(kw: np.ndarray, bandwidth: float | None) -> WeightSet:
    """Wrap raw KW pseudoweights as a WeightSet without poststratification."""
    kw = np.asarray(kw, dtype=float)
    return WeightSet(kw=kw, post_factor=np.ones_like(kw), final=kw.copy(),
                     bandwidth=bandwidth, variant=KW_ONLY)


def balance_diagnostics(cohort: Sample, cohort_weights: np.ndarray,
                        survey: Sample, covariates, flag_threshold: float = 0.1):
    """Weighted covariate means and standardized differences, cohort vs survey.

    Returns a list of dicts (covariate, survey_mean, cohort_mean, std_diff,
    flag); |std diff| above the threshold is flagged.
    """
    import pandas as pd

    wc = np.asarray(cohort_weights, dtype=float)
    rows = []
    for name in covariates:
        if name not in cohort.covariates or name not in survey.covariates:
            raise ValidationError(f"covariate {name!r} missing from cohort or survey")
        vc, vs = cohort.covariates[name], survey.covariates[name]
        mc = float(np.average(vc, weights=wc))
        ms = float(np.average(vs, weights=survey.w))
        var_c = float(np.average((vc - mc) ** 2, weights=wc))
        var_s = float(np.average((vs - ms) ** 2, weights=survey.w))
        pooled = np.sqrt((var_c + var_s) / 2.0)
        sd = (mc - ms) / pooled if pooled > 0 else 0.0
        rows.append({
            "covariate": name, "survey_mean": ms, "cohort_mean": mc,
            "std_diff": sd, "flag": bool(abs(sd) > flag_threshold),
        })
    return pd.DataFrame(rows)
