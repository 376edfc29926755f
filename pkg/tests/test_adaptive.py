from fractions import Fraction

import pytest

from harmonyep import (
    ClusterShape,
    ContractViolation,
    LoadHistory,
    PlacementGraph,
    ReplacementPolicy,
    UndefinedMetricError,
    cayley_symmetric,
    density_oracle,
    evaluate_and_maybe_replace,
    predict_loads,
)


class TestPredictLoads:
    def test_single_sample(self):
        h = LoadHistory(4)
        h.push((10, 2))
        assert predict_loads(h) == (10, 2)

    def test_two_sample_average(self):
        h = LoadHistory(2)
        h.push((10, 2))
        h.push((14, 6))
        assert predict_loads(h) == (12, 4)

    def test_constant_fixed_point(self):
        h = LoadHistory(3)
        for _ in range(5):
            h.push((3, 3, 3))
        assert predict_loads(h) == (3, 3, 3)

    def test_window_drops_old(self):
        h = LoadHistory(2)
        h.push((100, 0))
        h.push((10, 0))
        h.push((20, 0))
        assert predict_loads(h) == (15, 0)

    def test_empty_history(self):
        with pytest.raises(UndefinedMetricError):
            predict_loads(LoadHistory(2))

    def test_fractional_average_is_exact(self):
        h = LoadHistory(3)
        h.push((1,))
        h.push((2,))
        h.push((1,))
        assert predict_loads(h) == (Fraction(4, 3),)


class TestPolicy:
    def test_defaults_valid(self):
        p = ReplacementPolicy()
        assert p.threshold >= 1.0 and p.check_interval >= 1 and p.window >= 1

    @pytest.mark.parametrize(
        "kwargs",
        [dict(threshold=0.9), dict(check_interval=0), dict(window=0), dict(migration_cost=-1)],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ContractViolation):
            ReplacementPolicy(**kwargs)


def _history_of(loads, window=8):
    h = LoadHistory(window)
    h.push(loads)
    return h


class TestEvaluateAndMaybeReplace:
    def test_uniform_keeps(self):
        shape = ClusterShape(8, 16, 2)
        pl = cayley_symmetric(shape)
        decision = evaluate_and_maybe_replace(
            pl, _history_of([64] * 16), ReplacementPolicy(), shape, seed=0
        )
        assert not decision.replaced
        assert decision.predicted_ratio == pytest.approx(1.0)

    def test_skewed_identical_placement_replaces(self, identical4_placement):
        shape = ClusterShape(4, 4, 2)
        policy = ReplacementPolicy(threshold=1.05, mc_samples=100)
        decision = evaluate_and_maybe_replace(
            identical4_placement, _history_of((4, 6, 14, 8)), policy, shape, seed=0
        )
        # predicted m = 11, mean GPU load = 8 -> ratio 1.375 > 1.05
        assert decision.predicted_ratio == pytest.approx(1.375)
        assert decision.replaced
        assert decision.old_m == 11
        assert decision.new_m is not None and decision.new_m <= 11
        assert decision.migration_cost_total == decision.changed_slots * policy.migration_cost

    def test_infinite_threshold_always_keeps(self, identical4_placement):
        shape = ClusterShape(4, 4, 2)
        policy = ReplacementPolicy(threshold=float("inf"))
        decision = evaluate_and_maybe_replace(
            identical4_placement, _history_of((4, 6, 14, 8)), policy, shape, seed=0
        )
        assert not decision.replaced

    def test_replacement_never_increases_predicted_m(self):
        shape = ClusterShape(8, 32, 2)
        pl = cayley_symmetric(shape)
        from harmonyep import gen_zipf_workload

        for s in (1.5, 2.0):
            wl = gen_zipf_workload(shape, s, 2048, 8, seed=1)
            h = LoadHistory(8)
            for mb in wl.micro_batches:
                h.push(mb.expert_totals())
            decision = evaluate_and_maybe_replace(
                pl, h, ReplacementPolicy(mc_samples=100), shape, seed=1
            )
            if decision.replaced:
                predicted = predict_loads(h)
                new_density = density_oracle(
                    PlacementGraph.from_placement(decision.placement, predicted)
                ).density
                assert new_density <= decision.old_m

    def test_deterministic(self, identical4_placement):
        shape = ClusterShape(4, 4, 2)
        policy = ReplacementPolicy(threshold=1.05, mc_samples=50)
        d1 = evaluate_and_maybe_replace(
            identical4_placement, _history_of((4, 6, 14, 8)), policy, shape, seed=3
        )
        d2 = evaluate_and_maybe_replace(
            identical4_placement, _history_of((4, 6, 14, 8)), policy, shape, seed=3
        )
        assert d1 == d2

    def test_event_shape(self, identical4_placement):
        shape = ClusterShape(4, 4, 2)
        policy = ReplacementPolicy(threshold=1.05, mc_samples=50)
        decision = evaluate_and_maybe_replace(
            identical4_placement, _history_of((4, 6, 14, 8)), policy, shape, seed=0
        )
        event = decision.to_event(iteration=20)
        assert set(event) == {"iteration", "old_m", "new_m", "changed_slots", "cost"}
        assert event["iteration"] == 20
