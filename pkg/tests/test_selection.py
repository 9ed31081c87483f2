"""Selection: frozen worked examples, a brute-force oracle, and properties."""

from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st
from numpy.testing import assert_allclose

from crskit.geometry import Box, asymmetric_overlap, iou
from crskit.selection import (
    CapacityError,
    ScoredRegion,
    SelectionProblem,
    SelectionResult,
    crs_exact,
    crs_greedy,
    filter_by_min_size,
    nms,
)

# The worked fixture: a high-scoring hull over two instances plus one tight
# box per instance. IoU(hull, left) = 40/100 = 0.4, IoU(left, right) = 0.
HULL = ScoredRegion(Box(0, 0, 10, 10), 0.9, 0)
LEFT = ScoredRegion(Box(0, 0, 4, 10), 0.6, 1)
RIGHT = ScoredRegion(Box(6, 0, 10, 10), 0.5, 2)


def brute_force_total(
    regions: tuple[ScoredRegion, ...], count: int, threshold: float, mode: str
) -> float:
    """Independent reference: try every subset, and for the directional
    constraint every insertion order, keeping the best score sum."""
    best = None
    for size in range(1, count + 1):
        for subset in itertools.combinations(regions, size):
            if mode == "symmetric":
                ok = all(
                    asymmetric_overlap(a.box, b.box) < threshold
                    for a in subset
                    for b in subset
                    if a is not b
                )
            else:
                ok = any(
                    all(
                        asymmetric_overlap(perm[i].box, perm[j].box) < threshold
                        for j in range(1, len(perm))
                        for i in range(j)
                    )
                    for perm in itertools.permutations(subset)
                )
            if ok:
                total = sum(r.score for r in subset)
                if best is None or total > best:
                    best = total
    assert best is not None
    return best


def random_problem(rng: np.random.Generator, max_regions: int = 7) -> SelectionProblem:
    n = int(rng.integers(2, max_regions + 1))
    regions = []
    for rid in range(n):
        w = rng.uniform(5, 60)
        h = rng.uniform(5, 60)
        x = rng.uniform(0, 100 - w)
        y = rng.uniform(0, 100 - h)
        regions.append(ScoredRegion(Box(x, y, x + w, y + h), float(rng.uniform(0, 1)), rid))
    count = int(rng.integers(1, 5))
    threshold = float(rng.choice([0.1, 0.3, 0.5, 0.7, 1.0]))
    return SelectionProblem(tuple(regions), count, threshold)


class TestValidation:
    def test_score_range(self):
        with pytest.raises(ValueError):
            ScoredRegion(Box(0, 0, 1, 1), 1.5, 0)
        with pytest.raises(ValueError):
            ScoredRegion(Box(0, 0, 1, 1), -0.1, 0)

    def test_problem_invariants(self):
        with pytest.raises(ValueError):
            SelectionProblem((HULL,), count=0)
        with pytest.raises(ValueError):
            SelectionProblem((HULL,), count=1, threshold=0.0)
        with pytest.raises(ValueError):
            SelectionProblem((HULL,), count=1, threshold=1.2)
        with pytest.raises(ValueError):
            SelectionProblem((HULL, ScoredRegion(Box(1, 1, 2, 2), 0.5, 0)), count=1)

    def test_empty_regions_rejected(self):
        with pytest.raises(ValueError):
            crs_greedy(SelectionProblem((), count=1))
        with pytest.raises(ValueError):
            crs_exact(SelectionProblem((), count=1))

    def test_enumeration_cap(self):
        regions = tuple(
            ScoredRegion(Box(3 * i, 0, 3 * i + 2, 2), 0.5, i) for i in range(21)
        )
        with pytest.raises(CapacityError):
            crs_exact(SelectionProblem(regions, count=2))
        # raising the cap makes the same instance solvable
        result = crs_exact(SelectionProblem(regions, count=2), max_regions=21)
        assert result.complete

    def test_unknown_constraint_mode(self):
        with pytest.raises(ValueError):
            crs_exact(SelectionProblem((HULL,), count=1), constraint_mode="bogus")


class TestNms:
    def test_worked_example(self):
        # IoU(A, B) = 50/150 = 1/3 >= 0.3, so B is suppressed
        a = ScoredRegion(Box(0, 0, 10, 10), 0.9, 0)
        b = ScoredRegion(Box(5, 0, 15, 10), 0.8, 1)
        assert nms([a, b], 0.3) == [a]
        # just above 1/3 both survive
        assert nms([a, b], 0.34) == [a, b]

    def test_threshold_validation(self):
        with pytest.raises(ValueError):
            nms([HULL], 0.0)

    def test_tie_broken_by_region_id(self):
        a = ScoredRegion(Box(0, 0, 10, 10), 0.8, 2)
        b = ScoredRegion(Box(1, 0, 11, 10), 0.8, 1)
        kept = nms([a, b], 0.5)
        assert [r.region_id for r in kept] == [1]

    @given(st.data())
    def test_survivor_invariants(self, data):
        seed = data.draw(st.integers(0, 2**32 - 1))
        rng = np.random.default_rng(seed)
        problem = random_problem(rng)
        threshold = data.draw(st.sampled_from([0.1, 0.3, 0.5, 0.9]))
        kept = nms(problem.regions, threshold)
        assert kept  # never empty for non-empty input
        for i, a in enumerate(kept):
            for b in kept[i + 1 :]:
                assert iou(a.box, b.box) < threshold
        kept_ids = {r.region_id for r in kept}
        ranked = sorted(problem.regions, key=lambda r: (-r.score, r.region_id))
        for region in ranked:
            if region.region_id not in kept_ids:
                # every suppressed region overlaps some higher-ranked survivor
                assert any(iou(region.box, k.box) >= threshold for k in kept)
        scores = [r.score for r in kept]
        assert scores == sorted(scores, reverse=True)


class TestWorkedExample:
    def test_count_two_picks_both_instances(self):
        result = crs_greedy(SelectionProblem((HULL, LEFT, RIGHT), count=2, threshold=0.1))
        assert result.selected == (1, 2)
        assert_allclose(result.total_score, 1.1)
        assert result.complete

    def test_count_one_reduces_to_argmax(self):
        result = crs_greedy(SelectionProblem((HULL, LEFT, RIGHT), count=1, threshold=0.1))
        assert result == SelectionResult((0,), 0.9, True)

    def test_exact_agrees_in_both_modes(self):
        problem = SelectionProblem((HULL, LEFT, RIGHT), count=2, threshold=0.1)
        for mode in ("directional", "symmetric"):
            result = crs_exact(problem, constraint_mode=mode)
            assert set(result.selected) == {1, 2}
            assert_allclose(result.total_score, 1.1)
            assert result.complete

    def test_incompatible_pair_degrades_to_top_region(self):
        outer = ScoredRegion(Box(0, 0, 10, 10), 0.9, 0)
        inner = ScoredRegion(Box(1, 1, 9, 9), 0.8, 1)
        problem = SelectionProblem((outer, inner), count=3, threshold=0.1)
        for solver in (crs_greedy, crs_exact):
            result = solver(problem)
            assert result.selected == (0,)
            assert not result.complete

    def test_all_zero_scores_still_select(self):
        a = ScoredRegion(Box(0, 0, 10, 10), 0.0, 0)
        b = ScoredRegion(Box(20, 0, 30, 10), 0.0, 1)
        result = crs_greedy(SelectionProblem((a, b), count=2, threshold=0.1))
        assert result.selected == (0, 1)
        assert result.total_score == 0.0


class TestAgainstBruteForce:
    @pytest.mark.parametrize("mode", ["directional", "symmetric"])
    def test_exact_matches_brute_force(self, mode):
        rng = np.random.default_rng(90210)
        for _ in range(120):
            problem = random_problem(rng)
            expected = brute_force_total(
                problem.regions, problem.count, problem.threshold, mode
            )
            result = crs_exact(problem, constraint_mode=mode)
            assert_allclose(result.total_score, expected, rtol=0, atol=1e-12)

    def test_greedy_never_beats_brute_force(self):
        rng = np.random.default_rng(1337)
        for _ in range(150):
            problem = random_problem(rng)
            expected = brute_force_total(
                problem.regions, problem.count, problem.threshold, "directional"
            )
            result = crs_greedy(problem)
            assert result.total_score <= expected + 1e-9


class TestResultInvariants:
    @pytest.mark.parametrize(
        "solver",
        [crs_greedy, crs_exact, lambda p: crs_exact(p, constraint_mode="symmetric")],
    )
    def test_selection_order_is_admissible(self, solver):
        rng = np.random.default_rng(2024)
        for _ in range(80):
            problem = random_problem(rng)
            result = solver(problem)
            by_id = {r.region_id: r for r in problem.regions}
            chosen = [by_id[i] for i in result.selected]
            assert 1 <= len(chosen) <= problem.count
            assert result.complete == (len(chosen) == problem.count)
            assert_allclose(
                result.total_score, sum(r.score for r in chosen), rtol=0, atol=1e-12
            )
            for j, later in enumerate(chosen):
                for earlier in chosen[:j]:
                    assert (
                        asymmetric_overlap(earlier.box, later.box) < problem.threshold
                    )

    def test_deterministic_and_order_independent(self):
        rng = np.random.default_rng(5150)
        for _ in range(40):
            problem = random_problem(rng)
            reversed_problem = SelectionProblem(
                tuple(reversed(problem.regions)), problem.count, problem.threshold
            )
            assert crs_greedy(problem) == crs_greedy(reversed_problem)
            assert crs_exact(problem) == crs_exact(reversed_problem)

    def test_score_scaling_equivariance(self):
        rng = np.random.default_rng(8080)
        for _ in range(30):
            problem = random_problem(rng)
            scale = float(rng.uniform(0.1, 1.0))
            scaled = SelectionProblem(
                tuple(
                    ScoredRegion(r.box, r.score * scale, r.region_id)
                    for r in problem.regions
                ),
                problem.count,
                problem.threshold,
            )
            base = crs_greedy(problem)
            result = crs_greedy(scaled)
            assert result.selected == base.selected
            assert_allclose(result.total_score, base.total_score * scale, rtol=1e-9)

    def test_exact_monotone_in_count(self):
        rng = np.random.default_rng(31415)
        for _ in range(60):
            problem = random_problem(rng)
            if problem.count >= 4:
                continue
            bigger = SelectionProblem(
                problem.regions, problem.count + 1, problem.threshold
            )
            assert (
                crs_exact(bigger).total_score
                >= crs_exact(problem).total_score - 1e-12
            )

    def test_disjoint_regions_yield_top_count(self):
        rng = np.random.default_rng(777)
        for _ in range(30):
            n = int(rng.integers(2, 9))
            regions = tuple(
                ScoredRegion(
                    Box(12.0 * i, 0, 12.0 * i + 10, 10),
                    float(rng.uniform(0, 1)),
                    i,
                )
                for i in range(n)
            )
            count = int(rng.integers(1, n + 1))
            problem = SelectionProblem(regions, count, 0.1)
            expected = sum(sorted((r.score for r in regions), reverse=True)[:count])
            for result in (
                crs_greedy(problem),
                crs_exact(problem),
                crs_exact(problem, constraint_mode="symmetric"),
            ):
                assert_allclose(result.total_score, expected, rtol=0, atol=1e-12)
                assert result.complete


class TestFilterByMinSize:
    def test_boundary_area_is_kept(self):
        small = ScoredRegion(Box(0, 0, 5, 5), 0.5, 0)  # area 25
        tiny = ScoredRegion(Box(0, 0, 4, 5), 0.5, 1)  # area 20
        assert filter_by_min_size([small, tiny], 25.0) == [small]
        assert filter_by_min_size([small, tiny], 20.0) == [small, tiny]

    def test_order_preserved(self):
        regions = [
            ScoredRegion(Box(0, 0, 10, 10), 0.2, 0),
            ScoredRegion(Box(0, 0, 2, 2), 0.9, 1),
            ScoredRegion(Box(0, 0, 8, 8), 0.5, 2),
        ]
        assert [r.region_id for r in filter_by_min_size(regions, 16.0)] == [0, 2]

    def test_negative_min_area_rejected(self):
        with pytest.raises(ValueError):
            filter_by_min_size([], -1.0)
