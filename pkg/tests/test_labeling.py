import json
import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from jsporacle.exact import solve_optimal
from jsporacle.instances import GenSpec, generate
from jsporacle.labeling import (CapExceeded, SequenceSample, build_dataset, label_instance, label_sequence,
                                load_dataset, manifest_path, quality, sequence_generator, stratified_split,
                                suboptimal_sequences)


def test_quality_values():
    assert quality(7, 7) == 1.0
    assert abs(quality(14, 7) - (1 - math.tanh(1))) < 1e-12
    assert abs(quality(11, 7) - 0.48359) < 1e-5


@given(st.integers(1, 10_000), st.floats(0, 3))
def test_quality_range_and_monotonicity(opt, frac):
    # tanh saturates in double precision far beyond any realistic ratio; stay below 4x
    extra = int(frac * opt)
    y = quality(opt + extra, opt)
    assert 0 < y <= 1
    assert (y == 1) == (extra == 0)
    assert quality(opt + extra + 1, opt) < y


def test_sequence_generator_two_ops():
    assert set(sequence_generator(["a", "b"], 2, seed=0)) == {("a", "b"), ("b", "a")}


def test_sequence_generator_eight_ops():
    base = list(range(8))
    seqs = sequence_generator(base, 128, seed=1)
    assert len(seqs) == len(set(seqs)) == 128
    assert all(sorted(s) == base for s in seqs)
    # every operation shows up in every position
    for pos in range(8):
        assert {s[pos] for s in seqs} == set(base)


@given(st.integers(2, 6), st.integers(1, 30), st.integers(0, 2**32 - 1))
def test_sequence_generator_properties(n, s, seed):
    base = list(range(n))
    s = min(s, math.factorial(n))
    seqs = sequence_generator(base, s, seed=seed)
    assert len(set(seqs)) == s
    assert all(sorted(q) == base for q in seqs)
    assert seqs == sequence_generator(base, s, seed=seed)


def test_sequence_generator_cap_and_exclusions():
    with pytest.raises(CapExceeded):
        sequence_generator([1, 2, 3], 7, seed=0)
    excl = [(1, 2, 3), (2, 1, 3)]
    seqs = sequence_generator([1, 2, 3], 4, seed=0, exclude=excl)
    assert not set(seqs) & set(excl) and len(set(seqs)) == 4
    with pytest.raises(CapExceeded):
        sequence_generator([1, 2, 3], 5, seed=0, exclude=excl)


def test_suboptimal_sequences():
    assert suboptimal_sequences(["a", "b"]) == [("b", "a")]
    subs = suboptimal_sequences(list(range(8)))
    assert len(subs) == 7
    for h, q in enumerate(subs):
        want = list(range(8))
        want[h], want[h + 1] = want[h + 1], want[h]
        assert list(q) == want
    with pytest.raises(ValueError):
        suboptimal_sequences([1])


def test_label_sequence_tiny(tiny):
    j = tiny.op_index
    s = label_sequence(tiny, 0, [j((0, 0)), j((1, 1))], 7)
    assert s.y == 1.0 and s.c_max_pi == 7
    s = label_sequence(tiny, 0, [j((1, 1)), j((0, 0))], 7)
    assert s.c_max_pi == 11
    assert s.y == pytest.approx(1 - math.tanh(11 / 7 - 1), abs=1e-12)


def test_label_instance_counts_and_invariants():
    inst = generate(GenSpec(6, 6, seed=3))
    samples, dropped = label_instance(inst, per_machine_random=32, seed=0)
    assert dropped == 0 and len(samples) == 6 * (32 + 1 + 5)
    kinds = Counter(s.kind for s in samples)
    assert kinds == {"optimal": 6, "suboptimal": 30, "random": 192}
    opt = solve_optimal(inst).makespan
    for m in range(6):
        perms = [s.perm for s in samples if s.machine == m]
        assert len(perms) == len(set(perms)) == 38
    for s in samples:
        assert s.c_max_opt == opt and s.c_max_pi >= opt
        assert abs(s.y - quality(s.c_max_pi, s.c_max_opt)) < 1e-12
        assert (s.y == 1.0) == (s.c_max_pi == opt)
        if s.kind == "optimal":
            assert s.y == 1.0
        assert sorted(s.perm) == list(inst.machine_ops[s.machine])


def test_dataset_round_trip(tmp_path):
    insts = [generate(GenSpec(4, 4, seed=k)) for k in range(3)]
    path = tmp_path / "data" / "d.jsonl"
    man = build_dataset(insts, path, per_machine_random=5, seed=2)
    assert man["n_samples"] == 3 * 4 * (5 + 1 + 3)
    assert json.loads(manifest_path(path).read_text()) == man
    samples, loaded = load_dataset(path)
    assert len(samples) == man["n_samples"]
    assert {k: v.routes for k, v in loaded.items()} == {i.id: i.routes for i in insts}
    again = tmp_path / "again.jsonl"
    build_dataset(insts, again, per_machine_random=5, seed=2)
    assert again.read_text() == path.read_text()
    rec = json.loads(path.read_text().splitlines()[0])
    assert set(rec) == {"instance_id", "machine", "perm", "kind", "y", "c_max_pi", "c_max_opt"}
    assert all(len(op) == 2 for op in rec["perm"])
    s = samples[0]
    assert SequenceSample.from_record(s.to_record(loaded[s.instance_id]), loaded[s.instance_id]) == s


def test_build_dataset_rejects_duplicate_ids(tmp_path):
    inst = generate(GenSpec(3, 3, seed=0))
    with pytest.raises(ValueError):
        build_dataset([inst, inst], tmp_path / "d.jsonl")


def test_load_dataset_missing_manifest(tmp_path):
    with pytest.raises(OSError, match="manifest"):
        load_dataset(tmp_path / "none.jsonl")


def test_stratified_split():
    rng = np.random.default_rng(0)
    y = rng.uniform(0, 1, 1000)
    tr, te = stratified_split(y, 0.25, seed=1)
    assert len(set(tr) & set(te)) == 0 and len(tr) + len(te) == 1000
    assert abs(len(te) - 250) <= 10
    hist_all = np.histogram(y, bins=10, range=(0, 1))[0] / len(y)
    hist_te = np.histogram(y[te], bins=10, range=(0, 1))[0] / len(te)
    assert np.abs(hist_all - hist_te).max() < 0.01
    tr2, te2 = stratified_split(y, 0.25, seed=1)
    assert (te == te2).all()


def test_pool_seeding_does_not_change_labels():
    from jsporacle.labeling import _Pool

    inst = generate(GenSpec(5, 5, seed=6))
    opt = solve_optimal(inst)
    pool = _Pool(inst)
    pool.add(opt.solution.perms)
    for m in range(5):
        for perm in sequence_generator(inst.machine_ops[m], 6, seed=m):
            seeded = label_sequence(inst, m, perm, opt.makespan, pool=pool)
            plain = label_sequence(inst, m, perm, opt.makespan)
            assert seeded == plain
    assert 1 < len(pool.items) <= pool.size
