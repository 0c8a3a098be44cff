"""
Point-wise linear model Y(v) = X beta(v) + E(v), fitted for every point at
once, with contrast t-statistics, F-statistics and Student p-values.
"""

import logging
from typing import Optional

import numpy as np
from scipy import linalg
from scipy.special import betainc

from models.dataset import Dataset, ModelFit, Sidedness, StatField, StatKind

logger = logging.getLogger(__name__)


def _factorize(design: np.ndarray):
    """Pivoted QR of the design; returns (solver, gram_inverse, rank)"""
    n, p = design.shape
    q, r, piv = linalg.qr(design, mode='economic', pivoting=True)
    r_diag = np.abs(np.diag(r))
    tol = n * np.finfo(float).eps * (r_diag[0] if r_diag.size else 0.0)
    rank = int(np.sum(r_diag > tol))

    if rank == 0:
        raise ValueError("design matrix has rank 0")

    if rank == p:
        # beta = P R^{-1} Q^T Y
        r_inv_qt = linalg.solve_triangular(r, q.T)
        solver = np.empty_like(r_inv_qt)
        solver[piv] = r_inv_qt
        r_inv = linalg.solve_triangular(r, np.eye(p))
        gram_perm = r_inv @ r_inv.T
        gram_inverse = np.empty_like(gram_perm)
        gram_inverse[np.ix_(piv, piv)] = gram_perm
    else:
        logger.warning(
            f"Design is rank deficient (rank {rank} < {p} columns); "
            f"using the minimum-norm solution"
        )
        solver = np.linalg.pinv(design)
        gram_inverse = np.linalg.pinv(design.T @ design)

    return solver, gram_inverse, rank


def fit(dataset: Dataset) -> ModelFit:
    """Least-squares fit of every response column with one factorization"""
    design, response = dataset.design, dataset.response
    n = dataset.n_subjects

    solver, gram_inverse, rank = _factorize(design)
    if n - rank < 1:
        raise ValueError(
            f"no residual degrees of freedom: n={n}, rank={rank}"
        )

    beta_hat = solver @ response
    fitted = design @ beta_hat
    residuals = zero_exact_fits(response - fitted, response, fitted)
    sigma_hat = residual_scale(residuals, n - rank)

    logger.debug(
        f"Fitted linear model: n={n}, p={design.shape[1]}, rank={rank}, "
        f"points={dataset.n_points}"
    )
    return ModelFit(
        beta_hat=beta_hat,
        residuals=residuals,
        sigma_hat=sigma_hat,
        rank=rank,
        gram_inverse=gram_inverse,
        solver=solver
    )


def zero_exact_fits(residuals: np.ndarray, response: np.ndarray, fitted: np.ndarray) -> np.ndarray:
    """
    Set residual columns to 0 when their norm is at rounding level, i.e. at
    most n * eps * max(|Y(v)|, |X beta-hat(v)|), so exact fits get sigma = 0.
    """
    n = residuals.shape[0]
    tol = n * np.finfo(float).eps * np.maximum(
        np.linalg.norm(response, axis=0), np.linalg.norm(fitted, axis=0)
    )
    exact = np.linalg.norm(residuals, axis=0) <= tol
    if np.any(exact):
        residuals = residuals.copy()
        residuals[:, exact] = 0.0
    return residuals


def residual_scale(residuals: np.ndarray, dof: int) -> np.ndarray:
    """sigma-hat(v) with divisor n - rank"""
    return np.sqrt(np.sum(residuals ** 2, axis=0) / dof)


def contrast_scale(contrasts: np.ndarray, gram_inverse: np.ndarray) -> np.ndarray:
    """sqrt(c_l^T (X^T X)^{-1} c_l) for every contrast row"""
    return np.sqrt(np.einsum('lp,pq,lq->l', contrasts, gram_inverse, contrasts))


def studentize(numerator: np.ndarray, scale: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """
    numerator / (scale_l * sigma_v), with sigma = 0 mapped to +-inf for a
    nonzero numerator and 0 for a zero numerator.
    """
    denom = scale[:, None] * sigma[None, :]
    with np.errstate(divide='ignore', invalid='ignore'):
        values = numerator / denom
    degenerate = denom == 0
    if np.any(degenerate):
        values = np.where(degenerate, np.sign(numerator) * np.inf, values)
        values = np.where(degenerate & (numerator == 0), 0.0, values)
    return values


def contrast_products(contrasts: np.ndarray, coefficients: np.ndarray, n: int) -> np.ndarray:
    """c_l^T b(v), with values at most n * eps * |c_l| |b(v)| set to 0"""
    values = contrasts @ coefficients
    tol = n * np.finfo(float).eps * np.outer(
        np.linalg.norm(contrasts, axis=1), np.linalg.norm(coefficients, axis=0)
    )
    return np.where(np.abs(values) <= tol, 0.0, values)


def contrast_estimates(fit: ModelFit, dataset: Dataset) -> np.ndarray:
    """L x m_pts matrix of c_l^T beta-hat(v)"""
    return contrast_products(dataset.contrasts, fit.beta_hat, dataset.n_subjects)


def t_statistics(
        fit: ModelFit,
        dataset: Dataset,
        null_offsets: Optional[np.ndarray] = None
) -> StatField:
    """Contrast t-statistics T_l(v)"""
    numerator = contrast_estimates(fit, dataset)
    if null_offsets is not None:
        null_offsets = np.asarray(null_offsets, dtype=float)
        if null_offsets.shape != numerator.shape:
            raise ValueError(
                f"null_offsets shape {null_offsets.shape} != {numerator.shape}"
            )
        numerator = numerator - null_offsets

    scale = contrast_scale(dataset.contrasts, fit.gram_inverse)
    if np.any(fit.sigma_hat == 0):
        logger.warning(f"{int(np.sum(fit.sigma_hat == 0))} points have zero residual scale")
    values = studentize(numerator, scale, fit.sigma_hat)
    return StatField(values=values, dof=fit.dof, kind=StatKind.T_STATISTIC)


def f_statistics(fit: ModelFit, dataset: Dataset) -> np.ndarray:
    """
    F(v) = (C b)^T (C G C^T)^{-1} (C b) / (rank(C) sigma^2) for every point,
    with the sigma = 0 conventions of t_statistics.
    """
    contrasts = dataset.contrasts
    middle = contrasts @ fit.gram_inverse @ contrasts.T
    if np.linalg.matrix_rank(middle) < middle.shape[0]:
        raise ValueError("C (X^T X)^{-1} C^T is singular")

    estimates = contrast_estimates(fit, dataset)
    quad = np.einsum('lv,lv->v', estimates, linalg.solve(middle, estimates, assume_a='sym'))
    rank_c = np.linalg.matrix_rank(contrasts)

    variance = rank_c * fit.sigma_hat ** 2
    with np.errstate(divide='ignore', invalid='ignore'):
        values = quad / variance
    degenerate = variance == 0
    values = np.where(degenerate, np.where(quad == 0, 0.0, np.inf), values)
    return values


def _half_tail(x, dof: float) -> np.ndarray:
    """P(T > |x|) for T ~ t_dof"""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide='ignore', invalid='ignore'):
        z = dof / (dof + x ** 2)
    z = np.where(np.isinf(x), 0.0, z)
    return 0.5 * betainc(dof / 2.0, 0.5, z)


def _check_dof(dof: float) -> None:
    if dof < 1:
        raise ValueError(f"degrees of freedom must be at least 1, got {dof}")


def student_cdf(x, dof: float) -> np.ndarray:
    """Student t CDF via the regularized incomplete beta function"""
    _check_dof(dof)
    tail = _half_tail(x, dof)
    return np.where(np.asarray(x) >= 0, 1.0 - tail, tail)


def p_value_array(t_values: np.ndarray, dof: int, sidedness: Sidedness) -> np.ndarray:
    """Array version of p_values used by the bootstrap hot path"""
    _check_dof(dof)
    t_values = np.asarray(t_values, dtype=float)
    tail = _half_tail(t_values, dof)
    if sidedness == Sidedness.TWO_SIDED:
        p = 2.0 * tail
    else:
        # 1 - Phi(t) without cancellation in the upper tail
        p = np.where(t_values >= 0, tail, 1.0 - tail)
    return np.clip(p, 0.0, 1.0)


def p_values(stats: StatField, sidedness: Sidedness = Sidedness.TWO_SIDED) -> StatField:
    """
    two-sided: 2 (1 - Phi_dof(|t|)); one-sided: 1 - Phi_dof(t).
    """
    if stats.kind != StatKind.T_STATISTIC:
        raise ValueError(f"expected t-statistics, got {stats.kind.value}")
    kind = (
        StatKind.P_VALUE_TWO_SIDED if sidedness == Sidedness.TWO_SIDED
        else StatKind.P_VALUE_ONE_SIDED
    )
    values = p_value_array(stats.values, stats.dof, sidedness)
    return StatField(values=values, dof=stats.dof, kind=kind)
