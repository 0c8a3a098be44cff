"""
Data workflow shared by the command line and the HTTP API: fit the model,
calibrate lambda, then bound the requested sets, the BH set and the
optional volcano selection.
"""

import logging
import secrets
from typing import Any, Dict, List, Optional, Sequence, Tuple

from starlette.concurrency import run_in_threadpool

from app.config import settings
from models.bounds import CurvePoint, HypothesisSet, Method
from models.calibration import AnalysisOptions, CalibrationResult
from models.dataset import Dataset, ModelFit, StatField
from models.template import TemplateFamily, TemplateKind
from services import bootstrap, bounds, linear_model

logger = logging.getLogger(__name__)


class AnalysisService:
    """Runs the post hoc bound workflow and assembles the JSON report"""

    def __init__(
            self,
            default_bootstraps: Optional[int] = None,
            max_cached_cells: Optional[int] = None
    ):
        self.default_bootstraps = default_bootstraps or settings.bootstraps
        self.max_cached_cells = max_cached_cells or settings.max_cached_cells

    def analyze(
            self,
            dataset: Dataset,
            options: AnalysisOptions,
            subsets: Optional[Sequence[HypothesisSet]] = None
    ) -> Dict[str, Any]:
        """
        Fit, calibrate and bound.

        Args:
            dataset: Design, response and contrasts
            options: Calibration and selection knobs
            subsets: Query sets; defaults to the full hypothesis set

        Returns:
            Report dict: method, alpha, lambda, sets[...] and, when
            options.k_max is set, curves[...]
        """
        m = dataset.n_hypotheses
        model = linear_model.fit(dataset)
        logger.info(
            f"Fitted model: n={dataset.n_subjects}, rank={model.rank}, "
            f"L={dataset.n_contrasts}, points={dataset.n_points}, dof={model.dof}"
        )

        t_field = linear_model.t_statistics(model, dataset)
        p_field = linear_model.p_values(t_field, options.sidedness)
        family = TemplateFamily.by_name(options.template, m, options.template_size)

        calibration, family, seed = self.calibrate(model, dataset, p_field, family, options)
        lam = calibration.lambda_for_bounds

        queries = list(subsets) if subsets is not None else [HypothesisSet.full(m)]
        queries.append(bounds.bh_rejection_set(p_field, options.bh_q))
        if options.wants_volcano:
            estimates = linear_model.contrast_estimates(model, dataset)
            queries.append(bounds.volcano_set(
                p_field,
                estimates,
                1.0 if options.select_p is None else options.select_p,
                0.0 if options.select_effect is None else options.select_effect
            ))

        report: Dict[str, Any] = {
            'method': calibration.method.value,
            'alpha': options.alpha,
            'lambda': calibration.lambda_star,
            'lambda_used': lam,
            'B': calibration.B or None,
            'seed': seed,
            'iterations': calibration.iterations,
            'template': family.kind.value,
            'K': family.size,
            'm': m,
            'dof': model.dof,
            'sidedness': options.sidedness.value,
        }
        if calibration.method == Method.STEP_DOWN:
            report['surviving_size'] = len(calibration.surviving_set)
            report['empty_survivors'] = calibration.empty_survivors
        if calibration.rejection_set is not None:
            report['fwer_rejections'] = len(calibration.rejection_set)
        if family.size <= settings.max_reported_thresholds:
            report['thresholds'] = calibration.thresholds(family).tolist()

        report['sets'] = [
            bounds.vbar(p_field, query, family, lam, method=calibration.method).to_summary()
            for query in queries
        ]
        if options.k_max:
            curves = bounds.topk_curves(p_field, family, lam, min(options.k_max, m))
            report['curves'] = [point.model_dump() for point in curves]

        logger.info(
            f"Bounds computed for {len(queries)} set(s) with {calibration.method.value}, "
            f"lambda={lam:.6g}"
        )
        return report

    def calibrate(
            self,
            model: ModelFit,
            dataset: Dataset,
            p_field: StatField,
            family: TemplateFamily,
            options: AnalysisOptions
    ) -> Tuple[CalibrationResult, TemplateFamily, Optional[int]]:
        """
        Returns the calibration, the family the bounds are read from (the
        identity template for min-p FWER) and the seed actually used.
        """
        method = options.method
        if not method.is_bootstrap:
            if options.bootstraps is not None:
                logger.warning(f"--bootstraps ignored: {method.value} needs no resampling")
            lam = bounds.parametric_lambda(method, p_field, options.alpha)
            return CalibrationResult(lambda_star=lam, alpha=options.alpha, method=method), family, None

        seed = options.seed
        if seed is None:
            seed = secrets.randbits(63)
            logger.info(f"No seed given; drawing bootstrap replicates with seed {seed}")

        sample = bootstrap.draw_bootstrap(
            model,
            dataset,
            options.bootstraps or self.default_bootstraps,
            seed,
            sidedness=options.sidedness,
            threads=options.threads,
            max_cached_cells=options.max_cached_cells or self.max_cached_cells
        )
        if method == Method.SINGLE_STEP:
            result = bootstrap.calibrate_single_step(sample, family, options.alpha)
        elif method == Method.STEP_DOWN:
            result = bootstrap.calibrate_step_down(
                sample, p_field, family, options.alpha, options.max_iterations
            )
        else:
            result = bootstrap.fwer_threshold(sample, options.alpha, p_field)
            family = TemplateFamily.identity(dataset.n_hypotheses)

        logger.info(
            f"Calibrated lambda*={result.lambda_star:.6g} with {method.value} "
            f"(B={sample.B}, iterations={result.iterations})"
        )
        return result, family, seed

    def bound_p_values(
            self,
            p_field: StatField,
            subsets: Optional[Sequence[HypothesisSet]] = None,
            method: Method = Method.SIMES,
            alpha: float = 0.1,
            lam: Optional[float] = None,
            bh_q: float = 0.05,
            k_max: Optional[int] = None,
            template_size: Optional[int] = None,
            template: TemplateKind = TemplateKind.LINEAR
    ) -> Dict[str, Any]:
        """
        Bounds from precomputed p-values: Simes, ARI or a caller-supplied
        lambda (method FIXED). Bootstrap methods need the raw data.
        """
        m = p_field.n_hypotheses
        family = TemplateFamily.by_name(template, m, template_size)
        if lam is not None:
            method = Method.FIXED
        elif method.is_bootstrap or method == Method.FIXED:
            raise ValueError(f"{method.value} cannot be computed from p-values alone")
        else:
            lam = bounds.parametric_lambda(method, p_field, alpha)

        queries: List[HypothesisSet] = list(subsets) if subsets is not None else [HypothesisSet.full(m)]
        queries.append(bounds.bh_rejection_set(p_field, bh_q))

        report: Dict[str, Any] = {
            'method': method.value,
            'alpha': None if method == Method.FIXED else alpha,
            'lambda': lam,
            'template': family.kind.value,
            'K': family.size,
            'm': m,
            'sets': [
                bounds.vbar(p_field, query, family, lam, method=method).to_summary()
                for query in queries
            ],
        }
        if k_max:
            curves: List[CurvePoint] = bounds.topk_curves(p_field, family, lam, min(k_max, m))
            report['curves'] = [point.model_dump() for point in curves]
        return report

    async def analyze_async(self, *args, **kwargs) -> Dict[str, Any]:
        """analyze() on a worker thread, for async callers"""
        return await run_in_threadpool(self.analyze, *args, **kwargs)

    async def bound_p_values_async(self, *args, **kwargs) -> Dict[str, Any]:
        return await run_in_threadpool(self.bound_p_values, *args, **kwargs)
