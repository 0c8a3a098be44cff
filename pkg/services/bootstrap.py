"""
Residual bootstrap engine and lambda* calibration.

Replicate b resamples the n residual rows with replacement using a
generator seeded by SeedSequence(seed, spawn_key=(b,)), so every replicate
is reproducible on its own, independent of thread count and order.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterator, Optional, Tuple, Union

import numpy as np

from models.bounds import HypothesisSet, Method
from models.calibration import BootstrapSample, CalibrationResult
from models.dataset import Dataset, ModelFit, Sidedness, StatField
from models.template import TemplateFamily
from services.linear_model import (
    contrast_products,
    contrast_scale,
    p_value_array,
    residual_scale,
    studentize,
    zero_exact_fits,
)
from utils.errors import CalibrationError

logger = logging.getLogger(__name__)

_BLOCK = 64


def _child_rng(seed: int, b: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(b,)))


def bootstrap_replicate(fit: ModelFit, dataset: Dataset, seed: int, b: int) -> np.ndarray:
    """
    T^b for one replicate: Y^b = X beta-hat + E^b refitted with the original
    factorization. beta^b - beta-hat = S E^b and the refit residuals are
    E^b - X S E^b, so both are computed from E^b directly. Refit residuals
    at rounding level of Y^b are zeroed as in the original fit.
    """
    n = dataset.n_subjects
    rng = _child_rng(seed, b)
    rows = rng.integers(0, n, size=n)
    e_b = fit.residuals[rows]
    delta = fit.solver @ e_b
    refit_residuals = e_b - dataset.design @ delta
    y_b = dataset.response - fit.residuals + e_b
    refit_residuals = zero_exact_fits(refit_residuals, y_b, y_b - refit_residuals)
    sigma_b = residual_scale(refit_residuals, fit.dof)
    scale = contrast_scale(dataset.contrasts, fit.gram_inverse)
    return studentize(contrast_products(dataset.contrasts, delta, n), scale, sigma_b)


def draw_bootstrap(
        fit: ModelFit,
        dataset: Dataset,
        B: int,
        seed: int,
        sidedness: Sidedness = Sidedness.TWO_SIDED,
        threads: int = 1,
        max_cached_cells: Optional[int] = None
) -> BootstrapSample:
    """Generate B bootstrap t-fields (or a streaming handle when too large to cache)"""
    if B < 1:
        raise ValueError(f"number of bootstraps must be at least 1, got {B}")
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")

    common = dict(
        B=B,
        seed=seed,
        dof=fit.dof,
        sidedness=sidedness,
        n_contrasts=dataset.n_contrasts,
        n_points=dataset.n_points,
    )
    cells = B * dataset.n_hypotheses
    if max_cached_cells is not None and cells > max_cached_cells:
        logger.info(
            f"Bootstrap of {cells} cells exceeds the cache limit; "
            f"replicates will be regenerated on demand"
        )
        return BootstrapSample(fit=fit, dataset=dataset, **common)

    logger.debug(f"Drawing {B} bootstrap replicates with {threads} thread(s)")
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        fields = list(pool.map(lambda b: bootstrap_replicate(fit, dataset, seed, b), range(B)))
    return BootstrapSample(stat_fields=np.stack(fields), **common)


def iter_field_blocks(
        sample: BootstrapSample,
        block: int = _BLOCK
) -> Iterator[Tuple[int, np.ndarray]]:
    """Yield (first replicate index, block of t-fields)"""
    for start in range(0, sample.B, block):
        stop = min(start + block, sample.B)
        if sample.is_cached:
            yield start, sample.stat_fields[start:stop]
        else:
            yield start, np.stack([
                bootstrap_replicate(sample.fit, sample.dataset, sample.seed, b)
                for b in range(start, stop)
            ])


def _f_from_p(p_rows: np.ndarray, family: TemplateFamily) -> np.ndarray:
    """min_k t_k^{-1}(p_(k)) row by row, k up to K ^ |H|"""
    if p_rows.shape[-1] == 0:
        return np.full(p_rows.shape[:-1], math.inf)
    n_k = min(family.size, p_rows.shape[-1])
    if n_k < p_rows.shape[-1]:
        smallest = np.partition(p_rows, n_k - 1, axis=-1)[..., :n_k]
    else:
        smallest = p_rows
    ordered = np.sort(smallest, axis=-1)
    return family.inverse_thresholds(ordered).min(axis=-1)


def f_statistic(
        field: Union[StatField, np.ndarray],
        subset: HypothesisSet,
        family: TemplateFamily,
        dof: Optional[int] = None,
        sidedness: Sidedness = Sidedness.TWO_SIDED
) -> float:
    """
    f_H(T) = min over k <= K ^ |H| of t_k^{-1}(p_(k:H)); +inf for an empty H.
    Accepts a t-field (converted with Student dof) or a p-value field.
    """
    if isinstance(field, StatField):
        if field.is_p_values:
            p = field.flat()
        else:
            p = p_value_array(field.flat(), dof or field.dof, sidedness)
    else:
        if dof is None:
            raise ValueError("dof is required for raw t-statistic arrays")
        p = p_value_array(np.asarray(field, dtype=float).ravel(), dof, sidedness)
    subset.check_within(p.size)
    return float(_f_from_p(p[subset.indices], family))


def lower_quantile(samples: np.ndarray, alpha: float) -> float:
    """
    inf{lambda : #{f <= lambda} / B >= alpha}, i.e. the ceil(alpha B)-th
    ascending order statistic.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    samples = np.asarray(samples, dtype=float)
    B = samples.size
    # round first so that e.g. 0.3 * 10 does not become 4
    rank = math.ceil(round(alpha * B, 9))
    rank = min(max(rank, 1), B)
    return float(np.sort(samples)[rank - 1])


def _f_sampler(sample: BootstrapSample, family: TemplateFamily) -> Callable[[np.ndarray], np.ndarray]:
    """Return ids -> f values over all B replicates, reusing cached p-values"""
    if sample.is_cached:
        p_all = p_value_array(sample.stat_fields.reshape(sample.B, -1), sample.dof, sample.sidedness)
        return lambda ids: _f_from_p(p_all[:, ids], family)

    def streamed(ids: np.ndarray) -> np.ndarray:
        out = np.empty(sample.B)
        for start, fields in iter_field_blocks(sample):
            p = p_value_array(fields.reshape(len(fields), -1)[:, ids], sample.dof, sample.sidedness)
            out[start:start + len(fields)] = _f_from_p(p, family)
        return out

    return streamed


def _check_family(sample: BootstrapSample, family: TemplateFamily) -> None:
    if family.total_hypotheses != sample.n_hypotheses:
        raise CalibrationError(
            f"template built for m={family.total_hypotheses}, sample has {sample.n_hypotheses}"
        )


def calibrate_single_step(
        sample: BootstrapSample,
        family: TemplateFamily,
        alpha: float,
        subset: Optional[HypothesisSet] = None
) -> CalibrationResult:
    """lambda* = alpha-quantile of f_H over the bootstrap fields (H = all by default)"""
    _check_family(sample, family)
    if subset is None:
        subset = HypothesisSet.full(sample.n_hypotheses)
    subset.check_within(sample.n_hypotheses)
    f_samples = _f_sampler(sample, family)(np.asarray(subset.indices, dtype=int))
    lam = lower_quantile(f_samples, alpha)
    logger.debug(f"Single-step calibration: lambda*={lam:.6g} over {len(subset)} hypotheses")
    return CalibrationResult(
        lambda_star=lam,
        alpha=alpha,
        B=sample.B,
        method=Method.SINGLE_STEP,
        f_samples=f_samples,
        iterations=1
    )


def calibrate_step_down(
        sample: BootstrapSample,
        p_values: StatField,
        family: TemplateFamily,
        alpha: float,
        max_iterations: int = 100
) -> CalibrationResult:
    """
    Shrink the working set to the hypotheses surviving the k = 1 threshold,
    {h : p_h >= t_1(lambda_j)}, recalibrating on the same bootstrap fields
    until the set stops changing or max_iterations lambdas were computed.
    """
    if max_iterations < 1:
        raise ValueError(f"max_iterations must be at least 1, got {max_iterations}")
    _check_family(sample, family)
    if not p_values.is_p_values:
        raise CalibrationError("step-down needs observed p-values")
    p = p_values.flat()
    if p.size != sample.n_hypotheses:
        raise CalibrationError(f"{p.size} observed p-values for {sample.n_hypotheses} hypotheses")

    sampler = _f_sampler(sample, family)
    current = np.arange(p.size)
    f_samples = sampler(current)
    lam = lower_quantile(f_samples, alpha)
    iterations = 1
    empty = False

    while iterations < max_iterations:
        t_1 = family.threshold(1, min(max(lam, 0.0), 1.0))
        survivors = np.nonzero(p >= t_1)[0]
        if survivors.size == 0:
            logger.warning("Step-down removed every hypothesis; keeping the last nonempty set")
            empty = True
            break
        if np.array_equal(survivors, current):
            break
        current = survivors
        f_samples = sampler(current)
        lam = lower_quantile(f_samples, alpha)
        iterations += 1
        logger.debug(f"Step-down iteration {iterations}: |H|={current.size}, lambda={lam:.6g}")

    logger.debug(
        f"Step-down calibration: lambda*={lam:.6g} after {iterations} iteration(s), "
        f"|H|={current.size}"
    )
    return CalibrationResult(
        lambda_star=lam,
        alpha=alpha,
        B=sample.B,
        method=Method.STEP_DOWN,
        surviving_set=HypothesisSet(indices=current, label="step_down_survivors"),
        f_samples=f_samples,
        iterations=iterations,
        empty_survivors=empty
    )


def fwer_threshold(
        sample: BootstrapSample,
        alpha: float,
        p_values: Optional[StatField] = None
) -> CalibrationResult:
    """
    lambda' = alpha-quantile of the bootstrap min-p; with observed p-values
    the rejection set {h : p_h <= lambda'} is attached.
    """
    min_p = np.empty(sample.B)
    for start, fields in iter_field_blocks(sample):
        p = p_value_array(fields.reshape(len(fields), -1), sample.dof, sample.sidedness)
        min_p[start:start + len(fields)] = p.min(axis=1)
    lam = lower_quantile(min_p, alpha)

    rejection = None
    if p_values is not None:
        observed = p_values.flat()
        rejection = HypothesisSet(indices=np.nonzero(observed <= lam)[0], label="fwer")
    logger.debug(f"min-p FWER threshold: {lam:.6g}")
    return CalibrationResult(
        lambda_star=lam,
        alpha=alpha,
        B=sample.B,
        method=Method.FWER_MINP,
        rejection_set=rejection,
        f_samples=min_p,
        iterations=1
    )
