"""
Post hoc bounds V-bar(H) = min_k (|H \\ R_k| + zeta_k) ^ |H| for the reference
family R_k(lambda) = {p <= t_k(lambda)}, the Simes and ARI calibrations,
BH selection and top-k confidence curves.

A p-value equal to a threshold counts as rejected (inside R_k).
"""

import logging
from typing import List, Optional, Sequence

import numpy as np

from models.bounds import BoundReport, CurvePoint, HypothesisSet, Method
from models.dataset import StatField
from models.template import TemplateFamily

logger = logging.getLogger(__name__)

_CURVE_BLOCK = 256


def _flat_p(p_values) -> np.ndarray:
    if isinstance(p_values, StatField):
        if not p_values.is_p_values:
            raise ValueError("bounds need p-values, got t-statistics")
        return p_values.flat()
    values = np.asarray(p_values, dtype=float).ravel()
    if np.any(np.isnan(values)) or np.any((values < 0) | (values > 1)):
        raise ValueError("p-values must lie in [0, 1]")
    return values


def _check_unit(name: str, value: float, open_interval: bool = False) -> None:
    if open_interval and not 0.0 < value < 1.0:
        raise ValueError(f"{name} must lie in (0, 1), got {value}")
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value}")


def resolve_zeta(family: TemplateFamily, zeta: Optional[Sequence[int]] = None) -> np.ndarray:
    """zeta_k, defaulting to k - 1; must be nonnegative and nondecreasing"""
    if zeta is None:
        return np.arange(family.size)
    zeta = np.asarray(zeta, dtype=int)
    if zeta.shape != (family.size,):
        raise ValueError(f"zeta needs {family.size} entries, got {zeta.size}")
    if np.any(zeta < 0) or np.any(np.diff(zeta) < 0):
        raise ValueError("zeta must be nonnegative and nondecreasing")
    return zeta


def order_by_p(p: np.ndarray) -> np.ndarray:
    """Hypothesis ids sorted by p-value, ties by id ascending"""
    return np.lexsort((np.arange(p.size), p))


def vbar_count(
        subset_p: np.ndarray,
        family: TemplateFamily,
        lam: float,
        zeta: Optional[Sequence[int]] = None
) -> int:
    """V-bar for a raw vector of p-values (the set's members)"""
    size = subset_p.size
    if size == 0:
        return 0
    zeta = resolve_zeta(family, zeta)
    sorted_p = np.sort(subset_p)
    thresholds = family.thresholds(lam)
    rejected = np.searchsorted(sorted_p, thresholds, side='right')
    return int(min(np.min(size - rejected + zeta), size))


def vbar(
        p_values,
        subset: HypothesisSet,
        family: TemplateFamily,
        lam: float,
        zeta: Optional[Sequence[int]] = None,
        method: Method = Method.FIXED
) -> BoundReport:
    """
    V-bar(H) in O(|H| log |H| + K log |H|): one sort of the set's p-values,
    then every threshold is located in the sorted vector.
    """
    _check_unit("lambda", lam)
    p = _flat_p(p_values)
    subset.check_within(p.size)
    bound = vbar_count(p[subset.indices], family, lam, zeta)
    return BoundReport(
        label=subset.label,
        set_size=len(subset),
        false_positive_bound=bound,
        lambda_used=lam,
        method=method
    )


def vbar_reference(
        p_values,
        subset: HypothesisSet,
        family: TemplateFamily,
        lam: float,
        zeta: Optional[Sequence[int]] = None
) -> int:
    """Direct O(|H| K) evaluation of V-bar, kept as a test oracle"""
    p = _flat_p(p_values)
    zeta = resolve_zeta(family, zeta)
    size = len(subset)
    best = size
    for k in range(1, family.size + 1):
        t_k = family.threshold(k, lam)
        outside = sum(1 for h in subset.indices if p[h] > t_k)
        best = min(best, outside + int(zeta[k - 1]))
    return best


def simes_lambda(alpha: float) -> float:
    """The Simes post hoc bound is V-bar at lambda = alpha (linear template)"""
    _check_unit("alpha", alpha, open_interval=True)
    return alpha


def hommel_factor(p_values, alpha: float) -> int:
    """
    h(alpha) = max{i : p_(m-i+j) > alpha j / i for all j <= i}, 0 if none.
    Scans i downward from m and stops at the first qualifying i.
    """
    _check_unit("alpha", alpha, open_interval=True)
    p = np.sort(_flat_p(p_values))
    m = p.size
    for i in range(m, 0, -1):
        tail = p[m - i:]
        if np.all(tail > alpha * np.arange(1, i + 1) / i):
            return i
    return 0


def ari_lambda(p_values, alpha: float) -> float:
    """alpha-bar = alpha m / h(alpha), clamped to 1; 1 when h = 0"""
    m = _flat_p(p_values).size
    h = hommel_factor(p_values, alpha)
    if h == 0:
        return 1.0
    return min(1.0, alpha * m / h)


def bh_rejection_set(p_values, q: float, label: Optional[str] = "bh") -> HypothesisSet:
    """Benjamini-Hochberg step-up set at level q"""
    _check_unit("q", q, open_interval=True)
    p = _flat_p(p_values)
    m = p.size
    order = order_by_p(p)
    passing = np.nonzero(p[order] <= q * np.arange(1, m + 1) / m)[0]
    if passing.size == 0:
        return HypothesisSet(indices=[], label=label)
    k = int(passing[-1]) + 1
    return HypothesisSet(indices=order[:k], label=label)


def p_threshold_set(p_values, threshold: float = 0.05, label: Optional[str] = "p05") -> HypothesisSet:
    """{h : p_h <= threshold}"""
    p = _flat_p(p_values)
    return HypothesisSet(indices=np.nonzero(p <= threshold)[0], label=label)


def volcano_set(
        p_values,
        estimates: np.ndarray,
        p_threshold: float,
        effect_threshold: float,
        label: Optional[str] = "volcano"
) -> HypothesisSet:
    """Double selection {h : p_h <= p_threshold and |estimate_h| >= effect_threshold}"""
    p = _flat_p(p_values)
    effect = np.abs(np.asarray(estimates, dtype=float).ravel())
    if effect.size != p.size:
        raise ValueError(f"{effect.size} estimates for {p.size} p-values")
    selected = (p <= p_threshold) & (effect >= effect_threshold)
    return HypothesisSet(indices=np.nonzero(selected)[0], label=label)


def topk_curves(
        p_values,
        family: TemplateFamily,
        lam: float,
        k_max: int,
        zeta: Optional[Sequence[int]] = None
) -> List[CurvePoint]:
    """
    Bounds for H_k = the k smallest p-values, k = 1..k_max.

    With c_j = #{p <= t_j(lambda)} over all hypotheses, the prefix H_k holds
    min(k, c_j) members of R_j, so V-bar(H_k) = min_j (max(0, k - c_j) + zeta_j) ^ k.
    """
    _check_unit("lambda", lam)
    p = _flat_p(p_values)
    m = p.size
    if not 1 <= k_max <= m:
        raise ValueError(f"k_max must lie in [1, {m}], got {k_max}")
    zeta = resolve_zeta(family, zeta)
    sorted_p = p[order_by_p(p)]
    counts = np.searchsorted(sorted_p, family.thresholds(lam), side='right')

    points = []
    for start in range(1, k_max + 1, _CURVE_BLOCK):
        ks = np.arange(start, min(start + _CURVE_BLOCK, k_max + 1))
        outside = np.maximum(ks[:, None] - counts[None, :], 0) + zeta[None, :]
        bounds = np.minimum(outside.min(axis=1), ks)
        for k, v in zip(ks, bounds):
            k, v = int(k), int(v)
            points.append(CurvePoint(k=k, v_bar=v, tp_lower=k - v, fdp_upper=v / k))
    return points


def parametric_lambda(method: Method, p_values, alpha: float) -> float:
    """lambda for the Simes and ARI calibrations"""
    if method == Method.SIMES:
        return simes_lambda(alpha)
    if method == Method.ARI:
        return ari_lambda(p_values, alpha)
    raise ValueError(f"{method.value} is not a parametric method")
