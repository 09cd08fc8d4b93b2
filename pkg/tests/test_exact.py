import itertools
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jsporacle.core import Instance, evaluate, makespan
from jsporacle.exact import (ExactConfig, Status, TooLarge, brute_force_count, brute_force_optimal, solve_optimal,
                             solve_with_fixed_permutation)
from jsporacle.instances import GenSpec, dispatch, generate

from .strategies import instances


def enumerate_optimum(inst):
    """Plain enumeration through the core evaluator; the slowest but simplest reference."""
    vals = [makespan(inst, combo) for combo in itertools.product(*map(itertools.permutations, inst.machine_ops))]
    return min(v for v in vals if v is not None)


def test_tiny_optimal(tiny):
    res = solve_optimal(tiny)
    assert res.status is Status.OPTIMAL and res.optimal
    assert res.makespan == 7 == res.lower_bound
    assert res.solution.makespan == 7
    assert brute_force_optimal(tiny) == 7
    assert brute_force_count(tiny) == (4, 3)


def test_tiny_fixed_permutations(tiny):
    j = tiny.op_index
    assert solve_with_fixed_permutation(tiny, 0, [j((1, 1)), j((0, 0))]).makespan == 11
    res = solve_with_fixed_permutation(tiny, 0, [j((0, 0)), j((1, 1))])
    assert res.makespan == 7
    assert list(res.solution.perms[0]) == [j((0, 0)), j((1, 1))]


def test_fixed_permutation_validation(tiny):
    with pytest.raises(ValueError):
        solve_with_fixed_permutation(tiny, 0, [0, 2])
    wrong = evaluate(tiny, [[3, 0], [2, 1]])
    with pytest.raises(ValueError, match="incumbent"):
        solve_with_fixed_permutation(tiny, 0, [0, 3], ExactConfig(incumbent=wrong))


def test_single_machine_and_single_job():
    chain = Instance((((0, 2), (1, 3), (2, 4)),), 3)
    assert brute_force_optimal(chain) == solve_optimal(chain).makespan == 9
    flow = Instance((((0, 2),), ((0, 5),), ((0, 1),)), 1)
    assert brute_force_optimal(flow) == solve_optimal(flow).makespan == 8


@pytest.mark.parametrize("seed", range(8))
def test_3x3_matches_enumeration(seed):
    inst = generate(GenSpec(3, 3, seed=100 + seed))
    want = enumerate_optimum(inst)
    assert brute_force_optimal(inst) == want
    assert solve_optimal(inst).makespan == want


@settings(max_examples=30)
@given(instances(max_jobs=3, max_machines=3))
def test_bnb_matches_brute_force_on_ragged_instances(inst):
    assert solve_optimal(inst).makespan == brute_force_optimal(inst)


@settings(max_examples=25)
@given(instances(max_jobs=3, max_machines=3, min_p=0, max_p=6))
def test_zero_length_operations(inst):
    assert solve_optimal(inst).makespan == brute_force_optimal(inst)


def test_fixed_permutation_is_a_restriction():
    inst = generate(GenSpec(3, 3, seed=11))
    opt = solve_optimal(inst)
    for m, ops in enumerate(inst.machine_ops):
        vals = {}
        for perm in itertools.permutations(ops):
            res = solve_with_fixed_permutation(inst, m, perm)
            assert res.optimal
            vals[perm] = res.makespan
            # restricted enumeration over the other machines
            choices = [[perm] if k == m else list(itertools.permutations(o)) for k, o in enumerate(inst.machine_ops)]
            feas = [makespan(inst, c) for c in itertools.product(*choices)]
            assert res.makespan == min(v for v in feas if v is not None)
        assert min(vals.values()) == opt.makespan
        assert vals[tuple(opt.solution.perms[m])] == opt.makespan


def test_brute_force_cap():
    with pytest.raises(TooLarge):
        brute_force_optimal(generate(GenSpec(6, 6, seed=0)))


def test_limits_report_incumbent_and_bounds():
    inst = generate(GenSpec(10, 10, seed=3))
    res = solve_optimal(inst, ExactConfig(time_limit=0.2))
    assert res.status in (Status.TIMED_OUT, Status.FEASIBLE)
    assert res.lower_bound <= res.makespan <= dispatch(inst, "spt").makespan
    assert evaluate(inst, res.solution.perms).makespan == res.makespan
    res = solve_optimal(inst, ExactConfig(node_limit=1000))
    assert res.status is Status.FEASIBLE and not res.optimal


def test_incumbent_is_used():
    inst = generate(GenSpec(6, 6, seed=4))
    opt = solve_optimal(inst)
    res = solve_optimal(inst, ExactConfig(incumbent=opt.solution))
    assert res.optimal and res.makespan == opt.makespan
    assert res.nodes <= opt.nodes


def test_config_validation():
    with pytest.raises(ValueError):
        ExactConfig(time_limit=0)


def test_zero_length_operations_stress():
    # zero-length operations are frequent here; the branching rule must still reach every optimum
    rng = np.random.default_rng(0)
    for _ in range(300):
        nj, nm = int(rng.integers(2, 4)), int(rng.integers(2, 4))
        routes = tuple(tuple((int(m), int(rng.choice([0, 0, 1, 2, 3, 5]))) for m in rng.permutation(nm))
                       for _ in range(nj))
        inst = Instance(routes, nm)
        assert solve_optimal(inst).makespan == brute_force_optimal(inst), routes


@pytest.mark.parametrize("seed", [3001, 3002, 3008])
def test_imposing_the_optimal_order_keeps_the_optimum(seed):
    inst = generate(GenSpec(4, 4, seed=seed))
    opt = solve_optimal(inst)
    for m in range(inst.n_machines):
        assert solve_with_fixed_permutation(inst, m, opt.solution.perms[m]).makespan == opt.makespan


@pytest.mark.skipif(not os.environ.get("JSPORACLE_SLOW"), reason="about 100 s; set JSPORACLE_SLOW=1")
def test_orb07_proved_optimal():
    from jsporacle.instances import load_benchmark
    from jsporacle.tabu import SearchConfig, search

    inst = load_benchmark("orb07")
    seed = min((search(inst, None, SearchConfig(800, 2, seed=s)) for s in range(5)), key=lambda r: r.makespan)
    res = solve_optimal(inst, ExactConfig(time_limit=600, node_limit=10**10, incumbent=seed.best))
    assert res.optimal and res.makespan == 397


def unit_time_preemptive(r, p, q):
    """Preemptive one-machine schedule simulated one time unit at a time (largest tail first)."""
    left = list(p)
    best = max((ri + qi for ri, pi, qi in zip(r, p, q) if pi == 0), default=0)
    t = min(r)
    while any(left):
        ready = [k for k in range(len(r)) if left[k] and r[k] <= t]
        if ready:
            k = max(ready, key=lambda k: q[k])
            left[k] -= 1
            if not left[k]:
                best = max(best, t + 1 + q[k])
        t += 1
    return best


@settings(max_examples=200)
@given(st.lists(st.tuples(st.integers(0, 30), st.integers(0, 9), st.integers(0, 30)), min_size=1, max_size=8))
def test_jackson_bound_matches_unit_time_simulation(ops):
    from jsporacle.exact import _jackson_preemptive

    r, p, q = (np.array(col, dtype=np.int64) for col in zip(*ops))
    got = _jackson_preemptive(r, p, q, len(ops), np.zeros(len(ops), dtype=np.int64))
    assert got == unit_time_preemptive(list(r), list(p), list(q))
