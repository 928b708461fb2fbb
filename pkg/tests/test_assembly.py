import json

import numpy as np
import pytest

from lpjigsaw.assembly import (
    VariantConfig,
    component_extraction,
    make_replicas,
    reject_matches,
    solve_bundle,
    solve_type1,
    solve_type2,
    weighted_l0_cost,
)
from lpjigsaw.compat import OrientedMatch, active_set, build_distance_table, full_universe
from lpjigsaw.core import Placement, offsets
from lpjigsaw.ingest import scramble_type2, slice_image
from lpjigsaw.lpsolve import PlacementProblem, oracle_solve, solve_axis
from lpjigsaw.metrics import score_assembly
from lpjigsaw.synthetic import quadrant_image


def _placement(xs, ys):
    return Placement(x=np.array(xs, dtype=float), y=np.array(ys, dtype=float), objective=0.0)


def _grid_matches(rows, cols, weight=2.5):
    """Ordered ground-truth matches of a rows x cols grid, ids row-major."""
    matches = []
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c
            if c + 1 < cols:  # j right of i
                matches.append(OrientedMatch(i=i, j=i + 1, o=2, weight=weight))
            if r + 1 < rows:  # j below i
                matches.append(OrientedMatch(i=i, j=i + cols, o=3, weight=weight))
    return matches


def _solve_matches(matches, n, anchors_x=None, anchors_y=None):
    def axis(idx, anchors):
        terms = tuple((m.i, m.j, offsets(m.o)[idx], m.weight) for m in matches)
        return solve_axis(PlacementProblem(n, terms, anchors=anchors or {}))

    sx, sy = axis(0, anchors_x), axis(1, anchors_y)
    return Placement(x=sx.values.copy(), y=sy.values.copy(), objective=sx.objective + sy.objective)


def test_reject_none_when_satisfied():
    matches = _grid_matches(2, 2)
    placement = _placement([0, 1, 0, 1], [0, 0, 1, 1])
    assert reject_matches(matches, placement, 1e-5) == set()


def test_reject_contradictory_term():
    # The lpsolve contradictory pair: heavier term wins, lighter is rejected.
    matches = [
        OrientedMatch(i=0, j=1, o=2, weight=3.0),  # x0 - x1 = -1
        OrientedMatch(i=0, j=1, o=4, weight=1.0),  # x0 - x1 = +1
    ]
    placement = _solve_matches(matches, 2)
    rejected = reject_matches(matches, placement, 1e-5)
    assert rejected == {(0, 1, 4)}


def test_reject_planted_wrong_match():
    # 3x3 ground truth at weight >= 2 plus one planted wrong match at
    # weight 1.05: exactly the planted match violates the LP solution.
    matches = _grid_matches(3, 3, weight=2.5)
    planted = OrientedMatch(i=0, j=8, o=2, weight=1.05)
    matches.append(planted)
    placement = _solve_matches(matches, 9)
    rejected = reject_matches(matches, placement, 1e-5)
    assert rejected == {(0, 8, 2)}

    # Brute-force check: the oracle LP agrees on every residual.
    for idx, anchors in ((0, None), (1, None)):
        terms = tuple((m.i, m.j, offsets(m.o)[idx], m.weight) for m in matches)
        a = solve_axis(PlacementProblem(9, terms))
        b = oracle_solve(PlacementProblem(9, terms))
        assert a.objective == pytest.approx(b.objective, abs=1e-9)


def test_component_extraction_full_grid():
    matches = _grid_matches(2, 3)
    placement = _placement([0, 1, 2, 0, 1, 2], [0, 0, 0, 1, 1, 1])
    comps = component_extraction(matches, placement, 1e-5)
    assert len(comps) == 1
    assert comps[0].size == 6
    assert comps[0].offsets[5] == (2, 1)


def test_component_extraction_disjoint_pairs():
    matches = [
        OrientedMatch(i=0, j=1, o=2, weight=1.0),
        OrientedMatch(i=2, j=3, o=2, weight=1.0),
    ]
    placement = _placement([0, 1, 10, 11], [0, 0, 5, 5])
    comps = component_extraction(matches, placement, 1e-5)
    sizes = sorted(c.size for c in comps)
    assert sizes == [2, 2]


def test_component_extraction_singletons_included():
    matches = [OrientedMatch(i=0, j=1, o=2, weight=1.0)]
    placement = _placement([0, 1, 4], [0, 0, 4])
    comps = component_extraction(matches, placement, 1e-5)
    assert sum(c.size for c in comps) == 3
    assert sorted(c.size for c in comps) == [1, 2]


def test_component_collision_broken_and_rebuilt():
    # Pieces 1 and 2 both claim the cell right of piece 0: the collision is
    # broken by removing the matches touching the colliding pieces.
    matches = [
        OrientedMatch(i=0, j=1, o=2, weight=2.0),
        OrientedMatch(i=0, j=2, o=2, weight=1.0),
    ]
    placement = _placement([0, 1, 1], [0, 0, 0])
    comps = component_extraction(matches, placement, 1e-5)
    assert sorted(c.size for c in comps) == [1, 1, 1]
    for comp in comps:
        cells = list(comp.offsets.values())
        assert len(cells) == len(set(cells))


def test_quadrant_truth_in_initial_active_set(quadrant_bundle):
    b = quadrant_bundle
    table = build_distance_table(b.pieces)
    matches, skipped = active_set(table, full_universe(4))
    assert skipped == 0 and len(matches) == 16
    at = {(t.row, t.col): pid for pid, t in b.truth.items()}
    truth_keys = set()
    for (r, c), i in at.items():
        for (dr, dc), o in (((-1, 0), 1), ((0, 1), 2), ((1, 0), 3), ((0, -1), 4)):
            j = at.get((r + dr, c + dc))
            if j is not None:
                truth_keys.add((i, j, o))
    got = {(m.i, m.j, m.o) for m in matches}
    assert truth_keys <= got
    assert len(truth_keys) == 8  # 4 unordered ground-truth adjacencies


@pytest.mark.parametrize("mode", ["free", "constrained", "hybrid"])
def test_quadrant_solves_perfectly(quadrant_bundle, mode):
    state, asm = solve_bundle(quadrant_bundle, VariantConfig(mode=mode))
    assert state.converged
    assert state.k == 2  # empirically: one purge round, then a clean pass
    rep = score_assembly(asm, quadrant_bundle.truth, state=state)
    assert rep.perfect
    # Every surviving true match has zero residual.
    rejected = reject_matches(state.active, state.placement, 1e-5)
    assert rejected == set()


def test_hybrid_picks_no_worse_l0(small_bundle):
    table = build_distance_table(small_bundle.pieces)
    free, _ = solve_bundle(small_bundle, VariantConfig(mode="free"), table=table)
    con, _ = solve_bundle(small_bundle, VariantConfig(mode="constrained"), table=table)
    hyb, _ = solve_bundle(small_bundle, VariantConfig(mode="hybrid"), table=table)
    assert hyb.l0_cost <= min(free.l0_cost, con.l0_cost) + 1e-12
    assert hyb.hybrid_costs == {"free": free.l0_cost, "constrained": con.l0_cost}
    assert hyb.variant_used in ("free", "constrained")


def test_universe_monotone_and_active_subset(small_bundle):
    state, _ = solve_bundle(small_bundle, VariantConfig(mode="free"))
    sizes = [h.u_size for h in state.history]
    rs = [h.r_size for h in state.history]
    for k in range(len(sizes) - 1):
        if rs[k] > 0:
            assert sizes[k + 1] < sizes[k]
    assert all(h.active_subset_of_universe for h in state.history)


def test_active_scope_also_shrinks(quadrant_bundle):
    state, asm = solve_bundle(
        quadrant_bundle, VariantConfig(mode="free", reject_scope="active", max_iters=6)
    )
    sizes = [h.u_size for h in state.history]
    assert all(b < a for a, b in zip(sizes, sizes[1:]))
    rep = score_assembly(asm, quadrant_bundle.truth, state=state)
    assert rep.perfect


def test_constrained_preserves_component_offsets(small_bundle):
    table = build_distance_table(small_bundle.pieces)
    early, _ = solve_bundle(
        small_bundle, VariantConfig(mode="constrained", max_iters=1), table=table
    )
    final, _ = solve_bundle(small_bundle, VariantConfig(mode="constrained"), table=table)
    final_offsets = {}
    for comp in final.components:
        ref = comp.pieces[0]
        for p in comp.pieces:
            final_offsets[p] = (
                comp.offsets[p][0] - comp.offsets[ref][0],
                comp.offsets[p][1] - comp.offsets[ref][1],
            )
    for comp in early.components:
        if comp.size < 2:
            continue
        ref = comp.pieces[0]
        for p in comp.pieces:
            want = (
                comp.offsets[p][0] - comp.offsets[ref][0],
                comp.offsets[p][1] - comp.offsets[ref][1],
            )
            got = (
                final_offsets[p][0] - final_offsets[ref][0],
                final_offsets[p][1] - final_offsets[ref][1],
            )
            assert got == want


def test_axis_symmetry_transposed_matches():
    rng = np.random.default_rng(3)
    matches = _grid_matches(3, 4, weight=2.0)
    for _ in range(6):
        i, j = rng.choice(12, 2, replace=False)
        matches.append(OrientedMatch(int(i), int(j), int(rng.integers(1, 5)), 0.8))
    # Transposing swaps the axes: orientations map 1<->4 and 2<->3.
    swap = {1: 4, 4: 1, 2: 3, 3: 2}
    transposed = [OrientedMatch(m.i, m.j, swap[m.o], m.weight) for m in matches]
    p = _solve_matches(matches, 12)
    q = _solve_matches(transposed, 12)
    assert np.array_equal(p.x, q.y)
    assert np.array_equal(p.y, q.x)


def test_make_replicas_encoding(small_bundle):
    replicas, info = make_replicas(small_bundle.pieces[:3])
    assert len(replicas) == 12
    for p in small_bundle.pieces[:3]:
        for a in range(4):
            rid = 4 * p.id + a
            assert info[rid, 0] == p.id and info[rid, 1] == a
            assert np.array_equal(replicas[rid].pixels, np.rot90(p.pixels, a))
            assert replicas[rid].rotation == a


def test_type2_anchor_values(quadrant_bundle):
    b = scramble_type2(quadrant_bundle, seed=4)
    state = solve_type2(b, VariantConfig(mode="free"))
    coords = sorted(zip(state.anchors_x.values(), state.anchors_y.values()))
    assert coords == [(-1e4, -1e4), (-1e4, 1e4), (1e4, -1e4), (1e4, 1e4)]
    pids = {rid // 4 for rid in state.anchors_x}
    assert len(pids) == 1  # the four replicas of one physical piece


def test_type2_quadrant_four_rotated_components(quadrant_bundle):
    b = scramble_type2(quadrant_bundle, seed=9)
    state = solve_type2(b, VariantConfig(mode="free"))
    big = [c for c in state.components if c.size == 4]
    assert len(big) == 4
    info = state.replica_info
    for comp in big:
        phys = [int(info[rid, 0]) for rid in comp.pieces]
        assert sorted(phys) == [0, 1, 2, 3]  # each physical exactly once
        cells = sorted(comp.offsets.values())
        w = max(c[0] for c in cells) - min(c[0] for c in cells) + 1
        h = max(c[1] for c in cells) - min(c[1] for c in cells) + 1
        assert (w, h) == (2, 2)
    # The four components are global rotations of one another: per component,
    # every physical piece's render differs from component 0 by a constant.
    base = {int(info[rid, 0]): int(info[rid, 1]) for rid in big[0].pieces}
    gs = set()
    for comp in big:
        renders = {int(info[rid, 0]): int(info[rid, 1]) for rid in comp.pieces}
        diffs = {(renders[p] - base[p]) % 4 for p in renders}
        assert len(diffs) == 1
        gs.add(diffs.pop())
    assert gs == {0, 1, 2, 3}


def test_type2_quadrant_perfect(quadrant_bundle):
    b = scramble_type2(quadrant_bundle, seed=9)
    state, asm = solve_bundle(b, VariantConfig(mode="hybrid"))
    rep = score_assembly(asm, b.truth, state=state, four_frames=True)
    assert rep.perfect


def test_type2_max_aggregate_anchor_also_solves(quadrant_bundle):
    b = scramble_type2(quadrant_bundle, seed=9)
    state, asm = solve_bundle(b, VariantConfig(mode="free", anchor_pick="max-aggregate"))
    rep = score_assembly(asm, b.truth, state=state, four_frames=True)
    assert rep.perfect
    coords = sorted(zip(state.anchors_x.values(), state.anchors_y.values()))
    assert coords == [(-1e4, -1e4), (-1e4, 1e4), (1e4, -1e4), (1e4, 1e4)]


def test_frozen_weights_flag(small_bundle):
    # Weights frozen at their initial values still solve the easy corpus.
    state, asm = solve_bundle(small_bundle, VariantConfig(mode="free", refresh_weights=False))
    rep = score_assembly(asm, small_bundle.truth, state=state)
    assert rep.perfect


def test_weighted_l0_cost_counts_violations():
    matches = [
        OrientedMatch(i=0, j=1, o=2, weight=3.0),
        OrientedMatch(i=0, j=1, o=4, weight=1.0),
    ]
    placement = _solve_matches(matches, 2)
    # The o=4 term is violated in x only: one weight counted once.
    assert weighted_l0_cost(matches, placement, 1e-5) == pytest.approx(1.0)


def test_trace_file(tmp_path, quadrant_bundle):
    state, _ = solve_bundle(
        quadrant_bundle,
        VariantConfig(mode="hybrid"),
        trace_path=tmp_path / "trace.jsonl",
    )
    lines = (tmp_path / "trace.jsonl").read_text().splitlines()
    rows = [json.loads(line) for line in lines]
    assert rows[-1]["summary"] is True
    assert rows[-1]["converged"] is True
    for row in rows[:-1]:
        assert set(row) == {"k", "U", "A", "R", "objective_x", "objective_y", "components", "largest_component"}


def test_solver_never_reads_truth(quadrant_bundle):
    stripped = slice_image(quadrant_image(8), 8, seed=3)
    stripped.truth = None
    state, asm = solve_bundle(stripped, VariantConfig(mode="hybrid"))
    assert asm.complete


def test_type1_requires_min_pieces(quadrant_bundle):
    tiny = slice_image(np.zeros((16, 8, 3), dtype=np.uint16), 8, seed=0)
    with pytest.raises(ValueError):
        solve_type1(tiny, VariantConfig())
