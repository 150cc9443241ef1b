import math
from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cutstop import bench
from cutstop.generators import (
    GeneratorConfig,
    gen_mis,
    gen_multi_knapsack,
    gen_set_cover,
    generate,
    generate_many,
    mis_from_edges,
)
from cutstop.milp import brute_force_opt, build_instance
from cutstop.policies import FcrPolicy
from cutstop.tree import SolveConfig, solve


def fake_stats(time, pdi=1.0, lp=1, status="optimal"):
    return SimpleNamespace(
        status=status, wall_time=time, pdi=pdi, lp_solves=lp, nodes_processed=1, best_objective=0.0, root_rounds=0
    )


def tiny(name):
    return build_instance([1.0], np.array([[1.0]]), [1.0], [0], [(0, 1)], name=name)


# --------------------------------------------------------------------------
# improvement and benchmark aggregation


@pytest.mark.parametrize("ref, val, want", [(5.15, 3.91, 24.08), (13.34, 9.12, 31.63), (7.0, 7.0, 0.0)])
def test_improvement_examples(ref, val, want):
    assert abs(bench.improvement(ref, val) - want) < 0.01


@given(st.floats(0.01, 1e4), st.floats(0, 1e4))
def test_improvement_formula(ref, val):
    assert bench.improvement(ref, ref) == 0.0
    assert bench.improvement(ref, val) == (ref - val) / ref * 100.0


def test_benchmark_on_fixed_metrics():
    times = {("a", "default"): 5.0, ("b", "default"): 5.3, ("a", "fast"): 3.9, ("b", "fast"): 3.92}

    def solve_fn(inst, policy, config):
        return fake_stats(times[(inst.name, policy)])

    res = bench.run_benchmark([tiny("a"), tiny("b")], {"default": "default", "fast": "fast"}, solve_fn=solve_fn)
    assert res.summaries["default"].improvement["time"] == 0.0
    assert abs(res.summaries["fast"].improvement["time"] - 24.08) < 0.01
    assert res.summaries["fast"].mean["time"] == pytest.approx(3.91)
    assert res.failures == 0 and len(res.rows) == 4
    assert "fast" in res.table()


def test_benchmark_records_failures(tmp_path):
    def solve_fn(inst, policy, config):
        if inst.name == "b" and policy == "x":
            raise RuntimeError("boom")
        return fake_stats(2.0)

    res = bench.run_benchmark([tiny("a"), tiny("b")], {"default": "d", "x": "x"}, solve_fn=solve_fn)
    assert res.failures == 1 and res.summaries["x"].failures == 1
    assert res.summaries["x"].mean["time"] == 2.0
    res.write_csv(tmp_path / "r.csv")
    assert "RuntimeError: boom" in (tmp_path / "r.csv").read_text()
    with pytest.raises(ValueError):
        bench.run_benchmark([tiny("a")], {"x": "x"}, solve_fn=solve_fn)


def test_benchmark_real_solves():
    insts = generate_many("mis", 2, 1, preset="oracle")
    res = bench.run_benchmark(insts, ["default", "nocuts", "fcr:t=3"], SolveConfig(clock="logical"))
    assert res.failures == 0
    assert all(r.status == "optimal" for r in res.rows)
    objs = {(r.instance, r.policy): r.objective for r in res.rows}
    for inst in insts:
        assert len({objs[(inst.name, p)] for p in ("default", "nocuts", "fcr:t=3")}) == 1


# --------------------------------------------------------------------------
# split


def test_split_is_deterministic_and_order_free():
    insts = [tiny(f"inst{i}") for i in range(20)]
    tr, te = bench.split_train_test(insts)
    assert len(tr) == 15 and len(te) == 5
    assert {i.name for i in tr}.isdisjoint(i.name for i in te)
    tr2, te2 = bench.split_train_test(list(reversed(insts)))
    assert [i.name for i in tr] == [i.name for i in tr2] and [i.name for i in te] == [i.name for i in te2]


# --------------------------------------------------------------------------
# sweep and scatter


def test_sweep_length_and_first_point():
    inst = generate("multi_knapsack", 2, preset="oracle")
    cfg = SolveConfig(clock="logical")
    (curve,) = bench.sweep_rounds([inst], 100, cfg, metric="pdi")
    assert len(curve.values) == 100
    alone = solve(inst, FcrPolicy(t=1), replace(cfg, depth_limit=0, deep_cuts=False))
    assert curve.values[0] == alone.pdi
    assert 1 <= curve.argmin <= 100


def test_sweep_reuse_matches_full_resolve():
    insts = generate_many("mis", 2, 5, preset="oracle") + [generate("multi_knapsack", 3, preset="oracle")]
    cfg = SolveConfig(clock="logical")
    fast = bench.sweep_rounds(insts, 12, cfg, metric="logical_rounds")
    slow = bench.sweep_rounds(insts, 12, cfg, metric="logical_rounds", reuse=False)
    for a, b in zip(fast, slow):
        assert np.array_equal(a.values, b.values)
        assert b.reused == 0


def test_sweep_calls_fcr_with_each_cap():
    seen = []

    def solve_fn(inst, policy, config):
        seen.append((policy.t, config.depth_limit, config.deep_cuts))
        return SimpleNamespace(wall_time=10.0 / policy.t, pdi=0.0, lp_solves=1, root_rounds=policy.t)

    (curve,) = bench.sweep_rounds([tiny("a")], 5, SolveConfig(depth_limit=3), solve_fn=solve_fn)
    assert seen == [(j, 0, False) for j in range(1, 6)]
    assert curve.argmin == 5 and curve.reused == 0
    with pytest.raises(ValueError):
        bench.sweep_rounds([tiny("a")], 0)


def test_sweep_round_trip(tmp_path):
    curves = [bench.SweepCurve("a", np.array([3.0, 1.0, 2.0])), bench.SweepCurve("b", np.array([5.0, 5.0, 5.0]))]
    bench.write_sweep(curves, tmp_path / "s.csv")
    back = bench.read_sweep(tmp_path / "s.csv")
    assert np.array_equal(back["a"], curves[0].values) and np.array_equal(back["b"], curves[1].values)
    bench.write_sweep(curves, tmp_path / "n.csv", normalize=True)
    norm = bench.read_sweep(tmp_path / "n.csv")
    assert np.array_equal(norm["a"], [1.0, 0.0, 0.5]) and np.array_equal(norm["b"], [0.0, 0.0, 0.0])


@given(st.lists(st.floats(0, 1e3, allow_nan=False), min_size=100, max_size=130), st.floats(0, 10))
def test_scatter_monotone(curve, p_h):
    recs = bench.export_scatter({"x": p_h}, {"x": curve})
    assert len(recs) == 4
    assert [r["threshold"] for r in recs] == [25, 50, 75, 100]
    best = [r["p_best"] for r in recs]
    assert all(a >= b for a, b in zip(best, best[1:]))
    assert best[-1] == min(curve[:100])


def test_scatter_constant_and_errors():
    recs = bench.export_scatter({"x": 1.0}, [bench.SweepCurve("x", np.full(100, 4.0))])
    assert {r["p_best"] for r in recs} == {4.0}
    with pytest.raises(KeyError):
        bench.export_scatter({"y": 1.0}, {"x": np.ones(100)})
    with pytest.raises(ValueError):
        bench.export_scatter({"x": 1.0}, {"x": np.ones(99)})


def test_scatter_files(tmp_path):
    (tmp_path / "h.csv").write_text("instance,value\nx,2.5\n")
    assert bench.read_values(tmp_path / "h.csv") == {"x": 2.5}
    recs = bench.export_scatter({"x": 2.5}, {"x": np.arange(100.0, 0, -1)})
    bench.write_records(recs, tmp_path / "out.csv")
    assert len((tmp_path / "out.csv").read_text().strip().splitlines()) == 5


# --------------------------------------------------------------------------
# generators


def test_mis_small_graphs():
    triangle = mis_from_edges(3, [(0, 1), (1, 2), (0, 2)])
    path = mis_from_edges(5, [(0, 1), (1, 2), (2, 3), (3, 4)])
    # objectives are stored negated for maximization
    assert brute_force_opt(triangle)[0] == -1 and brute_force_opt(path)[0] == -3
    assert solve(triangle, FcrPolicy(t=5)).best_objective == -1
    assert solve(path, FcrPolicy(t=5)).best_objective == -3


def test_knapsack_shape_and_capacity():
    inst = gen_multi_knapsack(6, 2, seed=4)
    assert inst.m_vars == 12 and bool(inst.integer_mask.all())
    A = inst.dense
    weights = A[0, 0::2]
    assert np.array_equal(A[1, 1::2], weights)
    assert inst.rhs[0] == inst.rhs[1] == math.ceil(weights.sum() / 4)
    assert brute_force_opt(inst) is not None
    with pytest.raises(ValueError):
        gen_multi_knapsack(1, 2, seed=0)


def test_set_cover_structure_and_feasibility():
    inst = gen_set_cover(15, 30, 0.2, seed=2)
    A = inst.dense
    assert np.all((A == 0) | (A == -1))
    assert np.all((A == -1).sum(axis=1) >= 2)
    assert np.all(inst.rhs == -1)
    assert np.all((1 <= inst.objective) & (inst.objective <= 100))
    small = gen_set_cover(8, 12, 0.3, seed=2)
    assert brute_force_opt(small) is not None
    with pytest.raises(ValueError):
        gen_set_cover(10, 20, 0.05, seed=0)


def test_mis_generator():
    inst = gen_mis(25, 4, seed=1)
    A = inst.dense
    assert inst.m_vars == 25 and np.all(A.sum(axis=1) == 2)
    assert inst.maximize
    with pytest.raises(ValueError):
        gen_mis(10, 0, seed=1)


@pytest.mark.parametrize("family", ["set_cover", "multi_knapsack", "mis"])
def test_generators_deterministic(family):
    a = [i.to_json() for i in generate_many(family, 3, 7)]
    b = [i.to_json() for i in generate_many(family, 3, 7)]
    assert a == b and len(set(a)) == 3


def test_generator_config_validation():
    with pytest.raises(ValueError):
        GeneratorConfig("set_cover", density=0)
    with pytest.raises(ValueError):
        GeneratorConfig("set_cover", density=1.5)
    with pytest.raises(ValueError):
        GeneratorConfig("nope")
    with pytest.raises(ValueError):
        GeneratorConfig("mis", size=(0,))


def test_load_instances(tmp_path):
    from cutstop.milp import write_instance

    for inst in generate_many("mis", 3, 2, preset="oracle"):
        write_instance(inst, tmp_path / f"{inst.name}.json")
    (tmp_path / "notes.txt").write_text("ignored")
    assert len(bench.load_instances(tmp_path)) == 3
