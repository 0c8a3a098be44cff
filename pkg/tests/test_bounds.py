import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from models.bounds import BoundReport, HypothesisSet, Method
from models.dataset import StatField
from models.template import TemplateFamily
from services import bootstrap, bounds


def hommel_brute_force(p, alpha):
    """Literal definition: largest i such that every j <= i passes"""
    ordered = sorted(p)
    m = len(ordered)
    best = 0
    for i in range(1, m + 1):
        if all(ordered[m - i + j - 1] > alpha * j / i for j in range(1, i + 1)):
            best = i
    return best


def random_subset(rng, m):
    size = rng.integers(0, m + 1)
    return HypothesisSet(indices=rng.choice(m, size=size, replace=False))


@pytest.mark.unit
class TestHypothesisSet:
    def test_sorted_and_searchable(self):
        subset = HypothesisSet(indices=[7, 2, 5], label="x")
        assert subset.indices == [2, 5, 7]
        assert 5 in subset
        assert 3 not in subset
        assert len(subset) == 3

    def test_rejects_duplicates_and_negatives(self):
        with pytest.raises(ValueError, match="repeat"):
            HypothesisSet(indices=[1, 1])
        with pytest.raises(ValueError, match="non-negative"):
            HypothesisSet(indices=[-1])

    def test_check_within(self):
        with pytest.raises(ValueError, match="m=5"):
            HypothesisSet(indices=[5], label="big").check_within(5)

    def test_report_derived_fields(self):
        report = BoundReport(set_size=8, false_positive_bound=2, lambda_used=0.1, method=Method.SIMES)
        assert report.tp_lower == 6
        assert report.tdp_lower + report.fdp_upper == pytest.approx(1.0)
        empty = BoundReport(set_size=0, false_positive_bound=0, lambda_used=0.1, method=Method.SIMES)
        assert empty.fdp_upper == 0.0 and empty.tdp_lower == 0.0
        with pytest.raises(ValueError, match="exceed"):
            BoundReport(set_size=1, false_positive_bound=2, lambda_used=0.1, method=Method.SIMES)


@pytest.mark.unit
class TestVbar:
    def test_hand_example(self):
        p = StatField.from_p_values([0.01, 0.2, 0.6, 0.9])
        report = bounds.vbar(p, HypothesisSet.full(4), TemplateFamily.linear(4), 0.4)
        assert report.false_positive_bound == 3
        assert report.tp_lower == 1
        assert report.fdp_upper == 0.75

    def test_simes_composition(self):
        p = [0.01, 0.2, 0.6, 0.9]
        lam = bounds.simes_lambda(0.4)
        report = bounds.vbar(p, HypothesisSet.full(4), TemplateFamily.linear(4), lam, method=Method.SIMES)
        assert report.false_positive_bound == 3
        assert report.method == Method.SIMES

    def test_all_zero_p_values(self):
        p = np.zeros(6)
        subset = HypothesisSet(indices=[0, 2, 3])
        assert bounds.vbar(p, subset, TemplateFamily.linear(6), 0.3).false_positive_bound == 0

    def test_all_one_p_values(self):
        p = np.ones(6)
        subset = HypothesisSet(indices=[0, 2, 3])
        assert bounds.vbar(p, subset, TemplateFamily.linear(6), 0.9).false_positive_bound == 3

    def test_empty_subset(self):
        report = bounds.vbar([0.1, 0.2], HypothesisSet(indices=[]), TemplateFamily.linear(2), 0.5)
        assert report.false_positive_bound == 0
        assert report.set_size == 0

    def test_boundary_p_value_counts_as_rejected(self):
        # t_1(0.5) = 0.25 exactly
        report = bounds.vbar([0.25, 0.9], HypothesisSet(indices=[0]), TemplateFamily.linear(2), 0.5)
        assert report.false_positive_bound == 0

    def test_custom_zeta(self):
        p = [0.01, 0.2, 0.6, 0.9]
        family = TemplateFamily.linear(4)
        assert bounds.vbar(p, HypothesisSet.full(4), family, 0.4, zeta=[0, 0, 0, 0]).false_positive_bound == 2
        with pytest.raises(ValueError, match="nondecreasing"):
            bounds.vbar(p, HypothesisSet.full(4), family, 0.4, zeta=[0, 2, 1, 3])
        with pytest.raises(ValueError, match="entries"):
            bounds.vbar(p, HypothesisSet.full(4), family, 0.4, zeta=[0, 1])

    def test_rejects_bad_inputs(self):
        family = TemplateFamily.linear(2)
        with pytest.raises(ValueError, match="lambda"):
            bounds.vbar([0.1, 0.2], HypothesisSet.full(2), family, 1.2)
        with pytest.raises(ValueError, match="\\[0, 1\\]"):
            bounds.vbar([0.1, 1.2], HypothesisSet.full(2), family, 0.5)
        with pytest.raises(ValueError, match="m=2"):
            bounds.vbar([0.1, 0.2], HypothesisSet(indices=[2]), family, 0.5)

    def test_needs_p_values_not_t(self):
        t = StatField(values=[[1.0, 2.0]], dof=5)
        with pytest.raises(ValueError, match="t-statistics"):
            bounds.vbar(t, HypothesisSet.full(2), TemplateFamily.linear(2), 0.5)

    def test_oracle_equivalence(self):
        rng = np.random.default_rng(1)
        for _ in range(1000):
            m = int(rng.integers(1, 51))
            family = TemplateFamily.linear(m, int(rng.integers(1, m + 1)))
            # coarse grid to provoke ties and boundary hits
            p = np.round(rng.uniform(size=m), int(rng.integers(1, 4)))
            subset = random_subset(rng, m)
            lam = float(rng.uniform())
            fast = bounds.vbar(p, subset, family, lam).false_positive_bound
            assert fast == bounds.vbar_reference(p, subset, family, lam)

    @given(data=st.data())
    @settings(max_examples=150, deadline=None)
    def test_monotone_in_subset_and_lambda(self, data):
        m = data.draw(st.integers(1, 30))
        p = np.array(data.draw(st.lists(st.floats(0, 1), min_size=m, max_size=m)))
        family = TemplateFamily.linear(m)
        ids = data.draw(st.lists(st.integers(0, m - 1), unique=True))
        inner = data.draw(st.lists(st.sampled_from(ids), unique=True)) if ids else []
        lam_1, lam_2 = sorted(data.draw(st.lists(st.floats(0, 1), min_size=2, max_size=2)))

        outer_set, inner_set = HypothesisSet(indices=ids), HypothesisSet(indices=inner)
        v_outer = bounds.vbar(p, outer_set, family, lam_1).false_positive_bound
        assert bounds.vbar(p, inner_set, family, lam_1).false_positive_bound <= v_outer
        assert bounds.vbar(p, outer_set, family, lam_2).false_positive_bound <= v_outer

    def test_exhaustive_simultaneity(self):
        """Some H has more true nulls than V-bar(H) exactly when f over the nulls is <= lambda"""
        rng = np.random.default_rng(2)
        for _ in range(200):
            m = int(rng.integers(1, 13))
            p = rng.uniform(size=m) ** 2
            family = TemplateFamily.linear(m)
            null_ids = rng.choice(m, size=int(rng.integers(0, m + 1)), replace=False)
            nulls = np.zeros(m, dtype=bool)
            nulls[null_ids] = True
            lam = float(rng.uniform())

            violated = False
            for size in range(1, m + 1):
                for ids in itertools.combinations(range(m), size):
                    v = bounds.vbar_count(p[list(ids)], family, lam)
                    if nulls[list(ids)].sum() > v:
                        violated = True
                        break
                if violated:
                    break

            f_nulls = bootstrap.f_statistic(
                StatField.from_p_values(p), HypothesisSet(indices=null_ids), family
            )
            assert violated == (f_nulls <= lam)


@pytest.mark.unit
class TestParametricCalibration:
    def test_simes_lambda(self):
        assert bounds.simes_lambda(0.1) == 0.1
        assert bounds.simes_lambda(0.05) == 0.05
        with pytest.raises(ValueError, match="alpha"):
            bounds.simes_lambda(1.0)

    def test_hommel_example(self):
        assert bounds.hommel_factor([0.01, 0.02, 0.8], 0.05) == 1
        assert bounds.ari_lambda([0.01, 0.02, 0.8], 0.05) == pytest.approx(0.15)

    def test_hommel_extremes(self):
        assert bounds.hommel_factor(np.ones(9), 0.1) == 9
        assert bounds.ari_lambda(np.ones(9), 0.1) == pytest.approx(0.1)
        assert bounds.hommel_factor(np.zeros(9), 0.1) == 0
        assert bounds.ari_lambda(np.zeros(9), 0.1) == 1.0

    def test_hommel_against_definition(self):
        rng = np.random.default_rng(3)
        for _ in range(1000):
            m = int(rng.integers(1, 101))
            p = rng.uniform(size=m) ** rng.uniform(0.5, 4)
            alpha = float(rng.uniform(0.01, 0.5))
            assert bounds.hommel_factor(p, alpha) == hommel_brute_force(p, alpha)

    def test_ari_dominates_simes(self):
        rng = np.random.default_rng(4)
        alpha = 0.1
        for _ in range(200):
            m = int(rng.integers(1, 60))
            p = rng.uniform(size=m) ** 3
            family = TemplateFamily.linear(m)
            lam_ari = bounds.ari_lambda(p, alpha)
            assert lam_ari >= alpha
            subset = random_subset(rng, m)
            assert (
                bounds.vbar(p, subset, family, lam_ari).false_positive_bound
                <= bounds.vbar(p, subset, family, alpha).false_positive_bound
            )

    def test_parametric_dispatch(self):
        p = [0.01, 0.02, 0.8]
        assert bounds.parametric_lambda(Method.SIMES, p, 0.05) == 0.05
        assert bounds.parametric_lambda(Method.ARI, p, 0.05) == pytest.approx(0.15)
        with pytest.raises(ValueError, match="parametric"):
            bounds.parametric_lambda(Method.SINGLE_STEP, p, 0.05)


@pytest.mark.unit
class TestSelections:
    def test_bh_example(self):
        assert bounds.bh_rejection_set([0.01, 0.04, 0.5], 0.05).indices == [0]

    def test_bh_extremes(self):
        assert bounds.bh_rejection_set(np.ones(5), 0.05).indices == []
        assert bounds.bh_rejection_set(np.zeros(5), 0.05).indices == list(range(5))

    def test_bh_step_up(self):
        # p_(2) fails alone but p_(3) passes, so all three are rejected
        selected = bounds.bh_rejection_set([0.012, 0.03, 0.036, 0.9], 0.05)
        assert selected.indices == [0, 1, 2]

    def test_bh_ties_by_id(self):
        selected = bounds.bh_rejection_set([0.3, 0.001, 0.3, 0.001], 0.5)
        assert selected.indices == [0, 1, 2, 3]
        order = bounds.order_by_p(np.array([0.3, 0.001, 0.3, 0.001]))
        assert order.tolist() == [1, 3, 0, 2]

    def test_p_threshold_set(self):
        assert bounds.p_threshold_set([0.05, 0.051, 0.001]).indices == [0, 2]

    def test_volcano_set(self):
        p = [0.001, 0.001, 0.2, 0.01]
        estimates = [2.0, -0.1, 3.0, -1.5]
        selected = bounds.volcano_set(p, estimates, 0.05, 1.0)
        assert selected.indices == [0, 3]
        assert selected.label == "volcano"
        with pytest.raises(ValueError, match="estimates"):
            bounds.volcano_set(p, [1.0], 0.05, 1.0)


@pytest.mark.unit
class TestTopkCurves:
    def test_full_length_matches_vbar(self):
        rng = np.random.default_rng(5)
        p = rng.uniform(size=40) ** 2
        family = TemplateFamily.linear(40)
        curve = bounds.topk_curves(p, family, 0.3, 40)
        assert len(curve) == 40
        assert curve[-1].v_bar == bounds.vbar(p, HypothesisSet.full(40), family, 0.3).false_positive_bound

    def test_matches_prefix_bounds(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            m = int(rng.integers(1, 80))
            p = np.round(rng.uniform(size=m) ** 2, 2)
            family = TemplateFamily.linear(m, int(rng.integers(1, m + 1)))
            lam = float(rng.uniform())
            order = bounds.order_by_p(p)
            curve = bounds.topk_curves(p, family, lam, m)
            previous_tp = 0
            for point in curve:
                prefix = HypothesisSet(indices=order[:point.k])
                assert point.v_bar == bounds.vbar_reference(p, prefix, family, lam)
                assert point.tp_lower >= previous_tp
                previous_tp = point.tp_lower

    def test_first_point_with_zero_p(self):
        curve = bounds.topk_curves([0.0, 0.5, 0.9], TemplateFamily.linear(3), 0.1, 1)
        assert curve[0].v_bar == 0
        assert curve[0].tp_lower == 1

    def test_k_max_range(self):
        with pytest.raises(ValueError, match="k_max"):
            bounds.topk_curves([0.1, 0.2], TemplateFamily.linear(2), 0.1, 3)
