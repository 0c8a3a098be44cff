import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from models.bounds import HypothesisSet, Method
from models.dataset import Dataset, Sidedness, StatField
from models.template import TemplateFamily
from services import bootstrap, bounds, linear_model
from tests.conftest import make_dataset
from utils.errors import CalibrationError


def prepare(dataset):
    fit = linear_model.fit(dataset)
    p = linear_model.p_values(linear_model.t_statistics(fit, dataset))
    return fit, p


@pytest.mark.unit
class TestDrawBootstrap:
    def test_shape_and_metadata(self, small_dataset):
        fit, _ = prepare(small_dataset)
        sample = bootstrap.draw_bootstrap(fit, small_dataset, B=25, seed=3)
        assert sample.stat_fields.shape == (25, 1, 30)
        assert sample.dof == 18
        assert sample.is_cached
        assert sample.n_hypotheses == 30

    def test_deterministic_across_threads(self, three_group_dataset):
        fit, _ = prepare(three_group_dataset)
        one = bootstrap.draw_bootstrap(fit, three_group_dataset, B=40, seed=99, threads=1)
        many = bootstrap.draw_bootstrap(fit, three_group_dataset, B=40, seed=99, threads=8)
        assert np.array_equal(one.stat_fields, many.stat_fields)

    def test_replicate_independent_of_position(self, small_dataset):
        fit, _ = prepare(small_dataset)
        sample = bootstrap.draw_bootstrap(fit, small_dataset, B=10, seed=5)
        alone = bootstrap.bootstrap_replicate(fit, small_dataset, seed=5, b=7)
        assert np.array_equal(sample.stat_fields[7], alone)

    def test_seed_changes_fields(self, small_dataset):
        fit, _ = prepare(small_dataset)
        a = bootstrap.draw_bootstrap(fit, small_dataset, B=5, seed=1)
        b = bootstrap.draw_bootstrap(fit, small_dataset, B=5, seed=2)
        assert not np.array_equal(a.stat_fields, b.stat_fields)

    def test_replicate_matches_direct_refit(self, small_dataset):
        """T^b equals refitting Y^b = X beta-hat + E^b and centring at beta-hat"""
        fit, _ = prepare(small_dataset)
        rng = np.random.default_rng(np.random.SeedSequence(11, spawn_key=(3,)))
        rows = rng.integers(0, small_dataset.n_subjects, size=small_dataset.n_subjects)
        y_b = small_dataset.design @ fit.beta_hat + fit.residuals[rows]
        refit = linear_model.fit(Dataset(
            design=small_dataset.design, response=y_b, contrasts=small_dataset.contrasts
        ))
        expected = linear_model.t_statistics(
            refit, small_dataset, null_offsets=linear_model.contrast_estimates(fit, small_dataset)
        ).values
        replicate = bootstrap.bootstrap_replicate(fit, small_dataset, seed=11, b=3)
        assert np.allclose(replicate, expected, rtol=1e-8, atol=1e-10)

    def test_streaming_matches_cached(self, small_dataset):
        fit, p = prepare(small_dataset)
        family = TemplateFamily.linear(30)
        cached = bootstrap.draw_bootstrap(fit, small_dataset, B=100, seed=8)
        streamed = bootstrap.draw_bootstrap(fit, small_dataset, B=100, seed=8, max_cached_cells=10)
        assert not streamed.is_cached

        assert (
            bootstrap.calibrate_single_step(cached, family, 0.1).lambda_star
            == bootstrap.calibrate_single_step(streamed, family, 0.1).lambda_star
        )
        assert (
            bootstrap.calibrate_step_down(cached, p, family, 0.1).lambda_star
            == bootstrap.calibrate_step_down(streamed, p, family, 0.1).lambda_star
        )
        assert bootstrap.fwer_threshold(cached, 0.1).lambda_star == bootstrap.fwer_threshold(streamed, 0.1).lambda_star

    def test_exact_fit_gives_zero_fields(self):
        design = np.column_stack([np.ones(6), np.arange(6.0)])
        response = np.column_stack([design @ [1.0, 2.0], np.full(6, 4.0)])
        dataset = Dataset(design=design, response=response, contrasts=[[0, 1]])
        fit, _ = prepare(dataset)
        sample = bootstrap.draw_bootstrap(fit, dataset, B=5, seed=1)
        assert np.all(sample.stat_fields == 0.0)

    def test_replicates_are_centred(self):
        dataset = make_dataset(n=200, n_points=5, n_signal=5, effect=2.0, seed=31)
        fit, _ = prepare(dataset)
        sample = bootstrap.draw_bootstrap(fit, dataset, B=400, seed=13)
        fields = sample.stat_fields[:, 0, :]
        z = fields.mean(axis=0) / (fields.std(axis=0, ddof=1) / np.sqrt(sample.B))
        assert np.all(np.abs(z) < 4.0)

    def test_rejects_bad_arguments(self, small_dataset):
        fit, _ = prepare(small_dataset)
        with pytest.raises(ValueError, match="at least 1"):
            bootstrap.draw_bootstrap(fit, small_dataset, B=0, seed=1)
        with pytest.raises(ValueError, match="non-negative"):
            bootstrap.draw_bootstrap(fit, small_dataset, B=5, seed=-1)


@pytest.mark.unit
class TestQuantile:
    def test_order_statistic(self):
        samples = np.array([0.5, 0.1, 0.4, 0.2, 0.3, 0.9, 0.8, 0.7, 0.6, 1.0])
        assert bootstrap.lower_quantile(samples, 0.1) == 0.1
        assert bootstrap.lower_quantile(samples, 0.3) == 0.3
        assert bootstrap.lower_quantile(samples, 0.25) == 0.3
        assert bootstrap.lower_quantile(samples, 1.0) == 1.0

    def test_single_sample(self):
        assert bootstrap.lower_quantile(np.array([0.42]), 0.05) == 0.42

    @pytest.mark.parametrize("alpha", [0.01, 0.1, 0.5, 1.0])
    def test_constant_samples(self, alpha):
        assert bootstrap.lower_quantile(np.full(50, 0.37), alpha) == 0.37

    def test_rejects_alpha(self):
        with pytest.raises(ValueError, match="alpha"):
            bootstrap.lower_quantile(np.ones(3), 0.0)

    @given(
        samples=st.lists(st.floats(0, 10, allow_nan=False), min_size=1, max_size=200),
        alpha=st.floats(0.001, 1.0)
    )
    @settings(max_examples=200, deadline=None)
    def test_quantile_definition(self, samples, alpha):
        samples = np.array(samples)
        lam = bootstrap.lower_quantile(samples, alpha)
        B = samples.size
        assert np.sum(samples <= lam) / B >= alpha - 1e-9
        below = samples[samples < lam]
        if below.size:
            assert np.sum(samples <= below.max()) / B < alpha + 1e-9


@pytest.mark.unit
class TestFStatistic:
    def test_min_over_order_statistics(self):
        p = StatField.from_p_values([0.02, 0.5, 0.03, 0.9])
        family = TemplateFamily.linear(4)
        # min(0.02 * 4 / 1, 0.03 * 4 / 2, 0.5 * 4 / 3, 0.9 * 4 / 4)
        assert bootstrap.f_statistic(p, HypothesisSet.full(4), family) == pytest.approx(0.06)
        assert bootstrap.f_statistic(p, HypothesisSet(indices=[1, 3]), family) == pytest.approx(0.9 * 4 / 2)

    def test_empty_set_is_infinite(self):
        p = StatField.from_p_values([0.1, 0.2])
        assert bootstrap.f_statistic(p, HypothesisSet(indices=[]), TemplateFamily.linear(2)) == np.inf

    def test_truncated_family(self):
        p = StatField.from_p_values([0.9, 0.8, 0.01, 0.7])
        family = TemplateFamily.linear(4, size=1)
        assert bootstrap.f_statistic(p, HypothesisSet.full(4), family) == pytest.approx(0.04)

    def test_t_field_input(self):
        t = StatField(values=[[3.0, -0.5, 1.0]], dof=12)
        p = linear_model.p_values(t)
        family = TemplateFamily.linear(3)
        subset = HypothesisSet.full(3)
        assert bootstrap.f_statistic(t, subset, family) == bootstrap.f_statistic(p, subset, family)
        raw = bootstrap.f_statistic(np.array([3.0, -0.5, 1.0]), subset, family, dof=12)
        assert raw == bootstrap.f_statistic(p, subset, family)
        with pytest.raises(ValueError, match="dof"):
            bootstrap.f_statistic(np.array([3.0]), HypothesisSet.full(1), TemplateFamily.linear(1))

    def test_subset_monotonicity(self, rng):
        for _ in range(100):
            m = int(rng.integers(2, 40))
            p = StatField.from_p_values(rng.uniform(size=m))
            family = TemplateFamily.linear(m)
            outer = rng.choice(m, size=int(rng.integers(1, m + 1)), replace=False)
            inner = rng.choice(outer, size=int(rng.integers(1, outer.size + 1)), replace=False)
            assert (
                bootstrap.f_statistic(p, HypothesisSet(indices=inner), family)
                >= bootstrap.f_statistic(p, HypothesisSet(indices=outer), family)
            )


@pytest.mark.unit
class TestCalibration:
    def test_single_step_is_quantile_of_f(self, small_dataset):
        fit, _ = prepare(small_dataset)
        family = TemplateFamily.linear(30)
        sample = bootstrap.draw_bootstrap(fit, small_dataset, B=50, seed=4)
        result = bootstrap.calibrate_single_step(sample, family, 0.1)

        f_values = [
            bootstrap.f_statistic(
                StatField(values=field, dof=sample.dof), HypothesisSet.full(30), family
            )
            for field in sample.stat_fields
        ]
        assert np.allclose(np.sort(result.f_samples), np.sort(f_values))
        assert result.lambda_star == np.sort(result.f_samples)[4]
        assert result.method == Method.SINGLE_STEP
        assert result.B == 50

    def test_single_step_on_subset(self, small_dataset):
        fit, _ = prepare(small_dataset)
        family = TemplateFamily.linear(30)
        sample = bootstrap.draw_bootstrap(fit, small_dataset, B=50, seed=4)
        full = bootstrap.calibrate_single_step(sample, family, 0.1)
        part = bootstrap.calibrate_single_step(sample, family, 0.1, HypothesisSet(indices=range(10, 30)))
        assert part.lambda_star >= full.lambda_star

    def test_family_size_must_match(self, small_dataset):
        fit, _ = prepare(small_dataset)
        sample = bootstrap.draw_bootstrap(fit, small_dataset, B=5, seed=4)
        with pytest.raises(CalibrationError, match="m=29"):
            bootstrap.calibrate_single_step(sample, TemplateFamily.linear(29), 0.1)

    def test_step_down_fixed_point_without_signal(self):
        dataset = make_dataset(n_signal=0, seed=21)
        fit, p = prepare(dataset)
        family = TemplateFamily.linear(dataset.n_hypotheses)
        sample = bootstrap.draw_bootstrap(fit, dataset, B=100, seed=9)
        single = bootstrap.calibrate_single_step(sample, family, 0.1)
        if np.all(p.flat() >= family.threshold(1, min(single.lambda_star, 1.0))):
            step = bootstrap.calibrate_step_down(sample, p, family, 0.1)
            assert step.iterations == 1
            assert step.lambda_star == single.lambda_star
            assert len(step.surviving_set) == dataset.n_hypotheses

    def test_step_down_removes_strong_signals(self):
        dataset = make_dataset(n=30, n_points=40, n_signal=10, effect=4.0, seed=5)
        fit, p = prepare(dataset)
        family = TemplateFamily.linear(40)
        sample = bootstrap.draw_bootstrap(fit, dataset, B=100, seed=10)
        step = bootstrap.calibrate_step_down(sample, p, family, 0.1)
        assert step.method == Method.STEP_DOWN
        assert step.iterations >= 2
        assert len(step.surviving_set) < 40
        assert not step.empty_survivors

    def test_step_down_iterates_shrink(self, monkeypatch):
        dataset = make_dataset(n=30, n_points=40, n_signal=10, effect=4.0, seed=5)
        fit, p = prepare(dataset)
        family = TemplateFamily.linear(40)
        sample = bootstrap.draw_bootstrap(fit, dataset, B=100, seed=10)

        lambdas, working_sets = [], []
        quantile, sampler = bootstrap.lower_quantile, bootstrap._f_sampler

        def recording_quantile(samples, alpha):
            value = quantile(samples, alpha)
            lambdas.append(value)
            return value

        def recording_sampler(sample, family):
            inner = sampler(sample, family)

            def f(ids):
                working_sets.append(set(ids.tolist()))
                return inner(ids)
            return f

        monkeypatch.setattr(bootstrap, "lower_quantile", recording_quantile)
        monkeypatch.setattr(bootstrap, "_f_sampler", recording_sampler)
        step = bootstrap.calibrate_step_down(sample, p, family, 0.1)

        assert len(lambdas) == step.iterations >= 2
        assert all(a <= b for a, b in zip(lambdas, lambdas[1:]))
        assert all(later < earlier for earlier, later in zip(working_sets, working_sets[1:]))
        assert step.lambda_star == lambdas[-1]
        assert working_sets[-1] == set(step.surviving_set.indices)

    def test_step_down_iteration_cap(self):
        dataset = make_dataset(n=30, n_points=40, n_signal=10, effect=4.0, seed=5)
        fit, p = prepare(dataset)
        family = TemplateFamily.linear(40)
        sample = bootstrap.draw_bootstrap(fit, dataset, B=50, seed=10)
        capped = bootstrap.calibrate_step_down(sample, p, family, 0.1, max_iterations=1)
        single = bootstrap.calibrate_single_step(sample, family, 0.1)
        assert capped.iterations == 1
        assert capped.lambda_star == single.lambda_star
        with pytest.raises(ValueError, match="max_iterations"):
            bootstrap.calibrate_step_down(sample, p, family, 0.1, max_iterations=0)

    def test_step_down_needs_p_values(self, small_dataset):
        fit, _ = prepare(small_dataset)
        t = linear_model.t_statistics(fit, small_dataset)
        sample = bootstrap.draw_bootstrap(fit, small_dataset, B=5, seed=1)
        with pytest.raises(CalibrationError, match="p-values"):
            bootstrap.calibrate_step_down(sample, t, TemplateFamily.linear(30), 0.1)

    def test_step_down_dominance(self):
        rng = np.random.default_rng(12)
        violations = 0
        for i in range(200):
            dataset = make_dataset(
                n=16, n_points=20, n_signal=int(rng.integers(0, 12)),
                effect=float(rng.uniform(0.5, 3.0)), seed=1000 + i
            )
            fit, p = prepare(dataset)
            family = TemplateFamily.linear(20)
            sample = bootstrap.draw_bootstrap(fit, dataset, B=40, seed=i)
            single = bootstrap.calibrate_single_step(sample, family, 0.1)
            step = bootstrap.calibrate_step_down(sample, p, family, 0.1)
            violations += step.lambda_star < single.lambda_star
            for _ in range(50):
                ids = rng.choice(20, size=int(rng.integers(0, 21)), replace=False)
                subset = HypothesisSet(indices=ids)
                v_step = bounds.vbar(p, subset, family, step.lambda_for_bounds).false_positive_bound
                v_single = bounds.vbar(p, subset, family, single.lambda_for_bounds).false_positive_bound
                violations += v_step > v_single
        assert violations == 0

    def test_fwer_matches_identity_template(self, three_group_dataset):
        fit, p = prepare(three_group_dataset)
        m = three_group_dataset.n_hypotheses
        sample = bootstrap.draw_bootstrap(fit, three_group_dataset, B=60, seed=17)
        fwer = bootstrap.fwer_threshold(sample, 0.1, p)
        single = bootstrap.calibrate_single_step(sample, TemplateFamily.identity(m), 0.1)
        assert fwer.lambda_star == pytest.approx(single.lambda_star, abs=1e-15)
        assert fwer.method == Method.FWER_MINP
        assert fwer.rejection_set.indices == np.nonzero(p.flat() <= fwer.lambda_star)[0].tolist()

    def test_fwer_single_replicate(self, small_dataset):
        fit, _ = prepare(small_dataset)
        sample = bootstrap.draw_bootstrap(fit, small_dataset, B=1, seed=2)
        expected = linear_model.p_value_array(sample.stat_fields[0], sample.dof, Sidedness.TWO_SIDED).min()
        assert bootstrap.fwer_threshold(sample, 0.1).lambda_star == expected

    def test_one_sided_sample(self, small_dataset):
        fit, _ = prepare(small_dataset)
        two = bootstrap.draw_bootstrap(fit, small_dataset, B=30, seed=6)
        one = bootstrap.draw_bootstrap(fit, small_dataset, B=30, seed=6, sidedness=Sidedness.ONE_SIDED)
        assert np.array_equal(two.stat_fields, one.stat_fields)
        family = TemplateFamily.linear(30)
        assert (
            bootstrap.calibrate_single_step(one, family, 0.1).lambda_star
            != bootstrap.calibrate_single_step(two, family, 0.1).lambda_star
        )
