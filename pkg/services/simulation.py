"""
Monte-Carlo harness for the joint error rate and power experiments:
three groups, two contrasts (G2 - G1, G3 - G2), smoothed Gaussian noise and
unit effects at the non-null hypotheses.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Tuple

import numpy as np

from models.bounds import HypothesisSet, Method
from models.dataset import Dataset
from models.simulation import MethodSummary, RChoice, RepRecord, ScenarioConfig, SimReport
from models.template import TemplateFamily
from services import bootstrap, bounds, linear_model
from services.random_field import generate_grf
from utils.errors import ScenarioError

logger = logging.getLogger(__name__)

SIM_METHODS = (Method.SINGLE_STEP, Method.STEP_DOWN, Method.SIMES, Method.ARI)
CONTRASTS = np.array([[-1.0, 1.0, 0.0], [0.0, -1.0, 1.0]])
P05_THRESHOLD = 0.05


def validate_scenario(config: ScenarioConfig) -> None:
    if config.n_subjects < 3:
        raise ScenarioError(
            f"n_subjects={config.n_subjects}: three non-empty groups need at least 3 subjects"
        )
    unsupported = [m.value for m in config.methods if m not in SIM_METHODS]
    if unsupported:
        raise ScenarioError(f"methods not supported in simulations: {', '.join(unsupported)}")
    if not config.methods:
        raise ScenarioError("at least one method is required")


def assign_groups(n_subjects: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform group labels 0, 1, 2, redrawn whole until no group is empty"""
    while True:
        groups = rng.integers(0, 3, size=n_subjects)
        if np.unique(groups).size == 3:
            return groups


def scenario_signal(groups: np.ndarray, null_mask: np.ndarray) -> np.ndarray:
    """
    n x V mean field: G2 gets 1 where (1, v) is non-null, G3 gets that plus
    1 where (2, v) is non-null. null_mask has shape (2, V).
    """
    active = (~null_mask).astype(float)
    signal = np.zeros((groups.size, null_mask.shape[1]))
    signal[groups == 1] += active[0]
    signal[groups == 2] += active[0] + active[1]
    return signal


def _rep_streams(config: ScenarioConfig, rep: int):
    root = np.random.SeedSequence(config.seed, spawn_key=(rep,))
    groups_ss, nulls_ss, noise_ss, boot_ss = root.spawn(4)
    return (
        np.random.default_rng(groups_ss),
        np.random.default_rng(nulls_ss),
        np.random.default_rng(noise_ss),
        int(boot_ss.generate_state(1)[0]),
    )


def build_scenario(config: ScenarioConfig, rep: int) -> Tuple[Dataset, HypothesisSet]:
    """Dataset for one repetition and its true null set"""
    validate_scenario(config)
    groups_rng, nulls_rng, noise_rng, _ = _rep_streams(config, rep)
    n, n_points = config.n_subjects, config.grf.n_points
    m = config.n_hypotheses

    groups = assign_groups(n, groups_rng)
    null_ids = nulls_rng.choice(m, size=config.n_nulls, replace=False)
    null_mask = np.zeros(m, dtype=bool)
    null_mask[null_ids] = True

    noise_config = config.grf.model_copy(update={'n_fields': n})
    noise = generate_grf(noise_config, noise_rng).reshape(n, n_points)
    response = scenario_signal(groups, null_mask.reshape(2, n_points)) + noise

    dataset = Dataset(design=np.eye(3)[groups], response=response, contrasts=CONTRASTS)
    return dataset, HypothesisSet(indices=null_ids, label="true_nulls")


def _power(report_size: int, v_bar: int, true_hits: int) -> Optional[float]:
    if true_hits == 0:
        return None
    return (report_size - v_bar) / true_hits


def run_repetition(config: ScenarioConfig, rep: int) -> List[RepRecord]:
    """Calibrate every configured method on one simulated dataset"""
    dataset, nulls = build_scenario(config, rep)
    *_, boot_seed = _rep_streams(config, rep)

    model = linear_model.fit(dataset)
    p_field = linear_model.p_values(linear_model.t_statistics(model, dataset))
    p = p_field.flat()
    m = dataset.n_hypotheses
    family = TemplateFamily.linear(m)
    f_null = bootstrap.f_statistic(p_field, nulls, family)

    non_null = np.ones(m, dtype=bool)
    non_null[nulls.indices] = False
    selections = {
        RChoice.FULL: HypothesisSet.full(m),
        RChoice.BH: bounds.bh_rejection_set(p_field, config.bh_q),
        RChoice.P05: bounds.p_threshold_set(p_field, P05_THRESHOLD),
    }

    sample = None
    if any(method.is_bootstrap for method in config.methods):
        sample = bootstrap.draw_bootstrap(model, dataset, config.bootstraps, boot_seed)

    records = []
    for method in config.methods:
        if method == Method.SINGLE_STEP:
            lam = bootstrap.calibrate_single_step(sample, family, config.alpha).lambda_for_bounds
        elif method == Method.STEP_DOWN:
            lam = bootstrap.calibrate_step_down(
                sample, p_field, family, config.alpha, config.max_iterations
            ).lambda_for_bounds
        else:
            lam = bounds.parametric_lambda(method, p_field, config.alpha)

        fields = {'method': method, 'rep': rep, 'violated': f_null <= lam, 'lambda_used': lam}
        for choice, selected in selections.items():
            ids = selected.indices
            v_bar = bounds.vbar_count(p[ids], family, lam)
            fields[f"tp_lower_{choice.value}"] = len(ids) - v_bar
            fields[f"power_{choice.value}"] = _power(len(ids), v_bar, int(non_null[ids].sum()))
        records.append(RepRecord(**fields))
    return records


def summarize(config: ScenarioConfig, records: List[RepRecord]) -> SimReport:
    """Aggregate per-rep records by method (order independent)"""
    by_method: Dict[Method, List[RepRecord]] = {}
    for record in records:
        by_method.setdefault(record.method, []).append(record)

    summaries = {}
    for method, rows in by_method.items():
        power = {}
        mean_tp = {}
        for choice in RChoice:
            defined = [r.power_for(choice) for r in rows if r.power_for(choice) is not None]
            power[choice] = float(np.mean(defined)) if defined else None
            mean_tp[choice] = float(np.mean([r.tp_lower_for(choice) for r in rows]))
        summaries[method] = MethodSummary(
            method=method,
            reps_used=len(rows),
            violations=sum(r.violated for r in rows),
            power=power,
            mean_tp_lower=mean_tp
        )
    return SimReport(config=config, methods=summaries)


def run_simulation(config: ScenarioConfig, threads: int = 1) -> Tuple[SimReport, List[RepRecord]]:
    """Run all repetitions (in parallel when threads > 1) and aggregate"""
    validate_scenario(config)
    logger.info(
        f"Simulating {config.reps} reps: dims={config.grf.dims}, fwhm={config.grf.fwhm}, "
        f"n={config.n_subjects}, pi0={config.pi0}, "
        f"methods={[m.value for m in config.methods]}"
    )
    step = max(1, config.reps // 10)
    records: List[RepRecord] = []
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        for done, rep_records in enumerate(
                pool.map(lambda rep: run_repetition(config, rep), range(config.reps)), start=1
        ):
            records.extend(rep_records)
            if done % step == 0 or done == config.reps:
                logger.info(f"Simulation progress: {done}/{config.reps} reps")
    return summarize(config, records), records


def empirical_jer(config: ScenarioConfig, method: Method, threads: int = 1) -> float:
    """Fraction of repetitions with f_N(T) <= lambda"""
    report, _ = run_simulation(config.model_copy(update={'methods': [method]}), threads)
    return report.methods[method].empirical_jer


def power(
        config: ScenarioConfig,
        method: Method,
        r_choice: RChoice,
        threads: int = 1
) -> Optional[float]:
    """Mean of (|R| - V-bar(R)) / |R n non-nulls| over reps where the denominator is positive"""
    report, _ = run_simulation(config.model_copy(update={'methods': [method]}), threads)
    return report.methods[method].power[r_choice]
