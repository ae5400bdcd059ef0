"""Managed state: combining functions, partials, consolidation equivalence.

Expected values for the built-in aggregates were derived by hand from their
definitions before the implementations existed:
  median of [1, 2, 4, 8, 8, 9] -> 6.0 (mean of the two middle elements)
  average of [2, 4, 9] -> lifted pairs (2,1),(4,1),(9,1) -> (15,3) -> 5.0
  histogram of [a, b, a] -> {a: 2, b: 1}
"""

import random

import pytest

from leaseflow.state import (
    CombineClass,
    CombiningFunction,
    DEFAULT_HOLISTIC_CAP,
    ListState,
    MapState,
    PartialState,
    StateCapacityError,
    StateError,
    ValueState,
    apply_update,
    builtin,
    consolidate,
    read_state_snapshot,
    registered_names,
    spot_check,
    values_close,
)

BUILTINS = ("sum", "max", "average", "median", "histogram")


def feed(cf, values, cap=DEFAULT_HOLISTIC_CAP):
    partial = PartialState.fresh(cf, cap=cap)
    for v in values:
        result = apply_update(partial, v, cf)
        assert result.ok, result.error
    return partial


class TestBuiltins:
    def test_registry_contents(self):
        assert set(BUILTINS) <= set(registered_names())

    def test_sum(self):
        cf = builtin("sum")
        assert cf.result(feed(cf, [3, 5, -2]).state) == 6

    def test_max(self):
        cf = builtin("max")
        assert cf.result(feed(cf, [3, 9, 1]).state) == 9
        assert cf.result(PartialState.fresh(cf).state) is None

    def test_average_via_lifted_pairs(self):
        cf = builtin("average")
        partial = feed(cf, [2, 4, 9])
        assert partial.state.value == (15, 3)
        assert cf.result(partial.state) == pytest.approx(5.0)
        assert cf.result(PartialState.fresh(cf).state) is None

    def test_median_even_count(self):
        cf = builtin("median")
        assert cf.result(feed(cf, [1, 2, 4, 8, 8, 9]).state) == 6.0

    def test_median_odd_count(self):
        cf = builtin("median")
        assert cf.result(feed(cf, [9, 1, 4]).state) == 4

    def test_histogram(self):
        cf = builtin("histogram")
        assert cf.result(feed(cf, ["a", "b", "a"]).state) == {"a": 2, "b": 1}


class TestSpotCheck:
    def test_subtraction_rejected(self):
        bad = CombiningFunction(
            name="difference", klass=CombineClass.DISTRIBUTIVE_ALGEBRAIC,
            identity=0, combine=lambda a, b: a - b,
            sample=lambda rng: rng.randint(-100, 100))
        with pytest.raises(StateError) as exc:
            spot_check(bad)
        assert "difference" in str(exc.value)

    def test_pairwise_mean_rejected(self):
        # Commutative but not associative: mean(mean(a,b),c) != mean(a,mean(b,c))
        bad = CombiningFunction(
            name="pair_mean", klass=CombineClass.DISTRIBUTIVE_ALGEBRAIC,
            identity=0.0, combine=lambda a, b: (a + b) / 2,
            sample=lambda rng: rng.uniform(-10, 10))
        with pytest.raises(StateError):
            spot_check(bad)

    def test_builtin_sum_passes(self):
        spot_check(builtin("sum"))


class TestCapsAndRollback:
    def test_list_cap_enforced_before_mutation(self):
        state = ListState(cap=4)
        for i in range(4):
            state.append(i)
        with pytest.raises(StateCapacityError):
            state.append(99)
        assert state.items == [0, 1, 2, 3]

    def test_extend_cap_checked_before_any_mutation(self):
        state = ListState(cap=3)
        state.append(0)
        with pytest.raises(StateCapacityError):
            state.extend([1, 2, 3])
        assert state.items == [0]

    def test_failed_update_rolls_back_value_state(self):
        cf = builtin("sum")
        partial = feed(cf, [5])
        result = apply_update(partial, "not a number", cf)
        assert not result.ok
        assert "TypeError" in result.error
        assert partial.failed_count == 1
        assert partial.update_count == 1
        assert cf.result(partial.state) == 5

    def test_failed_update_rolls_back_list_state(self):
        cf = builtin("median")
        partial = feed(cf, [1, 2])
        partial.state.cap = 2
        result = apply_update(partial, 3, cf)
        assert not result.ok
        assert partial.state.items == [1, 2]
        assert partial.failed_count == 1

    def test_holistic_cap_flows_through_partial(self):
        cf = builtin("median")
        partial = PartialState.fresh(cf, cap=2)
        assert apply_update(partial, 1, cf).ok
        assert apply_update(partial, 2, cf).ok
        assert not apply_update(partial, 3, cf).ok


class TestValuesClose:
    def test_float_relative_tolerance(self):
        assert values_close(1.0, 1.0 + 5e-10)
        assert not values_close(1.0, 1.0 + 5e-8)

    def test_structures(self):
        assert values_close({"a": [1.0, 2.0]}, {"a": [1.0 + 1e-10, 2.0]})
        assert not values_close({"a": 1}, {"b": 1})
        assert values_close(None, None)
        assert not values_close(None, 0)


class TestConsolidation:
    def test_requires_at_least_one_partial(self):
        with pytest.raises(StateError):
            consolidate([], builtin("sum"))

    def test_variant_mismatch_rejected(self):
        p1 = PartialState.fresh(builtin("sum"))
        p2 = PartialState.fresh(builtin("max"))
        with pytest.raises(StateError):
            consolidate([p1, p2], builtin("sum"))

    def test_counts_are_summed(self):
        cf = builtin("sum")
        parts = [feed(cf, [1, 2]), feed(cf, [3])]
        merged = consolidate(parts, cf)
        assert merged.update_count == 3
        assert cf.result(merged.state) == 6

    @pytest.mark.parametrize("name", BUILTINS)
    def test_equivalence_to_sequential_fold(self, name):
        """Split a value multiset across random partials; the consolidated
        result must match feeding everything through one partial in order."""
        cf = builtin(name)
        rng = random.Random(1234)
        for round_no in range(200):
            n = rng.randint(0, 40)
            if name == "histogram":
                values = [rng.choice("abcdef") for _ in range(n)]
            elif name in ("average", "median"):
                values = [round(rng.uniform(-50, 50), 3) for _ in range(n)]
            else:
                values = [rng.randint(-100, 100) for _ in range(n)]
            k = rng.randint(1, 6)
            parts = [PartialState.fresh(cf) for _ in range(k)]
            for v in values:
                assert apply_update(parts[rng.randrange(k)], v, cf).ok
            merged = consolidate(parts, cf)
            expected = feed(cf, values)
            assert values_close(cf.result(merged.state), cf.result(expected.state)), (
                f"{name} round {round_no}: {cf.result(merged.state)!r} "
                f"!= {cf.result(expected.state)!r}")
            assert merged.update_count == len(values)

    def test_holistic_consolidation_respects_cap(self):
        cf = builtin("median")
        parts = [feed(cf, [1, 2], cap=10), feed(cf, [3, 4], cap=10)]
        with pytest.raises(StateCapacityError):
            consolidate(parts, cf, cap=3)


class TestSnapshots:
    def test_snapshot_isolated_from_partial(self):
        cf = builtin("median")
        partial = feed(cf, [1, 2, 3])
        snap = read_state_snapshot(partial)
        snap.items.append(99)
        assert partial.state.items == [1, 2, 3]

    def test_value_state_snapshot(self):
        cf = builtin("sum")
        partial = feed(cf, [5])
        snap = read_state_snapshot(partial)
        snap.value = 42
        assert partial.state.value == 5


class TestMapState:
    def test_put_get(self):
        state = MapState()
        state.put("k", 1)
        assert state.get("k") == 1
        assert state.get("missing", 7) == 7
