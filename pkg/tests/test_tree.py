import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cutstop.cuts import NodeLP
from cutstop.generators import generate, generate_many
from cutstop.milp import brute_force_opt, build_instance, enumerate_feasible
from cutstop.policies import DefaultPolicy, FcrPolicy, NoCutsPolicy, RandomIIPolicy
from cutstop.tree import (
    Node,
    SolveConfig,
    SolveStats,
    branch,
    branching_variable,
    compute_pdi,
    record_bounds,
    solve,
)
from oracles import step_integral


def test_record_bounds_append_and_errors():
    st_ = SolveStats()
    record_bounds(st_, 0.5, 10, 4)
    record_bounds(st_, 1.0, 10, 5)
    assert len(st_.event_log) == 2
    with pytest.raises(ValueError):
        record_bounds(st_, 0.9, 10, 5)


def test_record_bounds_clips_regressions():
    st_ = SolveStats()
    record_bounds(st_, 0.0, 10, 5)
    record_bounds(st_, 1.0, 10, 4.999999999)
    assert st_.event_log[-1][2] == 5 and st_.bound_warnings == 1
    record_bounds(st_, 2.0, 11, 5)
    assert st_.event_log[-1][1] == 10 and st_.bound_warnings == 2


@pytest.mark.parametrize(
    "log, end, want",
    [
        ([(0.0, 10.0, 5.0)], 2.0, 1.0),
        ([(0.0, 3.0, 3.0)], 5.0, 0.0),
        ([(0.0, math.inf, -math.inf), (1.0, 8.0, 6.0)], 3.0, 1.5),
    ],
)
def test_pdi_examples(log, end, want):
    assert compute_pdi(log, end) == pytest.approx(want, abs=1e-12)


def test_pdi_errors():
    with pytest.raises(ValueError):
        compute_pdi([], 1.0)
    with pytest.raises(ValueError):
        compute_pdi([(2.0, 1.0, 1.0)], 1.0)


@settings(max_examples=200)
@given(
    st.lists(
        st.tuples(st.floats(0, 5), st.one_of(st.just(math.inf), st.floats(-50, 50)), st.floats(-50, 50)),
        min_size=1,
        max_size=8,
    ),
    st.floats(0, 5),
)
def test_pdi_matches_step_oracle_and_is_monotone(raw, extra):
    times = np.cumsum([t for t, _, _ in raw])
    log = [(float(t), p, d) for t, (_, p, d) in zip(times, raw)]
    end = float(times[-1]) + extra
    got = compute_pdi(log, end)
    assert got == pytest.approx(step_integral(log, end), abs=1e-9)
    assert got >= 0
    assert compute_pdi(log, end + 1.0) >= got


def test_branching_rule():
    assert branching_variable([0.5, 0.2], [True, True]) == 0
    assert branching_variable([1.0, 0.3], [True, True]) == 1
    with pytest.raises(ValueError):
        branching_variable([1.0, 0.0], [True, True])


def test_branch_children():
    inst = build_instance([-1, -1], [[2, 2]], [3], {0, 1}, [(0, 1)] * 2)
    nl = NodeLP.from_instance(inst)
    lp = nl.solve()
    low, high = branch(Node(nl, id=0), lp)
    j = branching_variable(lp.x, nl.integer_mask)
    assert low.node_lp.upper[j] == math.floor(lp.x[j])
    assert high.node_lp.lower[j] == math.ceil(lp.x[j])
    assert low.depth == high.depth == 1 and low.parent == 0


def test_integral_root_single_node():
    inst = build_instance([-1, -1], [[1, 1]], [2], {0, 1}, [(0, 1)] * 2)
    stats = solve(inst, DefaultPolicy(), SolveConfig(clock="logical"))
    assert stats.nodes_processed == 1 and stats.status == "optimal"
    assert stats.best_objective == -2


def test_infeasible_instance():
    inst = build_instance([1, 1], [[1, 1], [-1, -1]], [0.5, -0.6], {0, 1}, [(0, 1)] * 2)
    assert solve(inst, DefaultPolicy(), SolveConfig(clock="logical")).status == "infeasible"


def test_time_limit():
    inst = generate("multi_knapsack", 3, preset="stress")
    stats = solve(inst, DefaultPolicy(), SolveConfig(time_limit=0.001))
    assert stats.status == "time_limit"
    assert math.isfinite(stats.dual_bound)
    assert stats.pdi > 0


@pytest.mark.parametrize("family", ["set_cover", "multi_knapsack", "mis"])
def test_matches_brute_force_and_sandwich(family):
    for inst in generate_many(family, 8, 21, preset="oracle"):
        stats = solve(inst, DefaultPolicy(), SolveConfig(clock="logical"))
        assert stats.best_objective == brute_force_opt(inst)[0]
        for _, p, d in stats.event_log:
            if math.isfinite(p) and math.isfinite(d):
                assert d <= p + 1e-6
        times = [t for t, _, _ in stats.event_log]
        assert times == sorted(times)


def test_pruned_regions_hold_nothing_better():
    for inst in generate_many("multi_knapsack", 5, 4, preset="oracle"):
        stats = solve(inst, FcrPolicy(t=2), SolveConfig(clock="logical", audit=True))
        pts = enumerate_feasible(inst)
        vals = pts @ inst.objective
        for rec in stats.pruned:
            inside = np.all((pts >= rec["lower"] - 1e-9) & (pts <= rec["upper"] + 1e-9), axis=1)
            if inside.any():
                assert vals[inside].min() >= stats.best_objective - 1e-9


def test_logical_clock_runs_are_byte_identical():
    inst = generate("mis", 2)
    a = solve(inst, RandomIIPolicy(), SolveConfig(clock="logical", seed=4)).to_json(deterministic=True)
    b = solve(inst, RandomIIPolicy(), SolveConfig(clock="logical", seed=4)).to_json(deterministic=True)
    assert a == b


def test_trace_lines():
    buf = io.StringIO()
    stats = solve(generate("mis", 5), DefaultPolicy(), SolveConfig(clock="logical", trace=buf))
    lines = buf.getvalue().strip().splitlines()
    assert len(lines) <= stats.nodes_processed
    assert all(len(line.split("\t")) == 5 for line in lines)


def test_depth_limit_governs_decisions():
    inst = generate("multi_knapsack", 1, preset="oracle")
    s0 = solve(inst, DefaultPolicy(), SolveConfig(clock="logical", depth_limit=0))
    assert len(s0.decisions) <= 1
    s_none = solve(inst, NoCutsPolicy(), SolveConfig(clock="logical", deep_cuts=False))
    assert s_none.cuts_added == 0


def test_node_and_lp_limits():
    inst = generate("multi_knapsack", 3)
    assert solve(inst, NoCutsPolicy(), SolveConfig(clock="logical", node_limit=3)).status == "node_limit"
    assert solve(inst, NoCutsPolicy(), SolveConfig(clock="logical", lp_limit=3)).status == "lp_limit"


def test_config_validation():
    with pytest.raises(ValueError):
        SolveConfig(time_limit=0)
    with pytest.raises(ValueError):
        SolveConfig(clock="sundial")
