import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deslab.acquisition import record
from deslab.dataset import (
    Dataset,
    FoldSplit,
    TimedIOVector,
    TimeScaling,
    build_dataset,
    expected_window_count,
    kfold,
    label_windows_for_fault,
    normalize_time,
    parse_dataset,
    vectorize,
    windows,
)
from deslab.errors import DatasetError
from deslab.faults import NORMAL, FaultKind, FaultSpec, import_catalog
from deslab.plant import load_plant, run_scenario


def vecs(n, width=2, dt=100):
    return [TimedIOVector(0 if i == 0 else dt, tuple(bool((i >> b) & 1) for b in range(width))) for i in range(n)]


def test_single_instant_log():
    log = record([(0, (1, 0))], ("a", "b"))
    (v,) = vectorize(log)
    assert v == TimedIOVector(0, (True, False))


def test_successive_differences():
    log = record([(0, (0,)), (150, (1,)), (400, (0,))], ("a",))
    assert [v.t_rel for v in vectorize(log)] == [0, 150, 250]


def test_bundled_run_width_and_reconstruction():
    log = run_scenario(load_plant(), 30_000, seed=2)
    vs = vectorize(log)
    assert {len(v.values) for v in vs} == {33}
    times = sorted({r.time for r in log.records})
    assert list(np.cumsum([v.t_rel for v in vs])) == times


def test_empty_log_rejected():
    with pytest.raises(DatasetError):
        vectorize(record([], ("a",)))


def test_window_examples():
    assert len(windows(vecs(50), 50)) == 1
    assert len(windows(vecs(52), 50, 1)) == 3
    with pytest.raises(DatasetError, match="run too short for window length"):
        windows(vecs(49), 50)


def brute_force_slices(length, n, stride):
    starts = []
    s = 0
    while s + n <= length:
        starts.append(s)
        s += stride
    return starts


@given(st.integers(1, 200), st.integers(1, 60), st.integers(1, 20))
def test_window_count_matches_enumeration(length, n, stride):
    if length < n:
        with pytest.raises(DatasetError):
            windows(vecs(length), n, stride)
        return
    vs = vecs(length)
    ws = windows(vs, n, stride, label=3)
    starts = brute_force_slices(length, n, stride)
    assert len(ws) == len(starts) == expected_window_count(length, n, stride)
    for w, s in zip(ws, starts):
        assert w.label == 3
        assert w.vectors == vs[s:s + n]


def test_label_flip_at_injection():
    cat = import_catalog()
    fault = FaultSpec("imp_end", FaultKind.STUCK_AT_1, 1000)
    vs = vecs(30, dt=100)  # absolute times 0, 100, ..., 2900
    ws = label_windows_for_fault(vs, 5, 1, fault, cat)
    cls = cat.class_of("imp_end", FaultKind.STUCK_AT_1)
    ends = np.cumsum([v.t_rel for v in vs])
    expected = [cls if ends[s + 4] >= 1000 else NORMAL for s in range(26)]
    assert [w.label for w in ws] == expected
    assert expected.index(cls) == 6  # window 6..10 ends at t=1000

    late = FaultSpec("imp_end", FaultKind.STUCK_AT_1, 10_000)
    assert {w.label for w in label_windows_for_fault(vs, 5, 1, late, cat)} == {NORMAL}
    early = FaultSpec("imp_end", FaultKind.STUCK_AT_1, 0)
    assert {w.label for w in label_windows_for_fault(vs, 5, 1, early, cat)} == {cls}
    dropped = label_windows_for_fault(vs, 5, 1, fault, cat, keep_pre_injection=False)
    assert len(dropped) == 20


def test_perfect_stratification():
    split = kfold([0, 0, 0, 1, 1, 1, 2, 2, 2], 3, seed=4)
    labels = np.array([0, 0, 0, 1, 1, 1, 2, 2, 2])
    for j in range(3):
        assert sorted(labels[split.validation(j)]) == [0, 1, 2]


@settings(max_examples=200)
@given(st.lists(st.integers(0, 7), min_size=2, max_size=300), st.integers(2, 6), st.integers(0, 2**31))
def test_kfold_partition_and_balance(labels, k, seed):
    if k > len(labels):
        with pytest.raises(DatasetError):
            kfold(labels, k, seed)
        return
    split = kfold(labels, k, seed)
    folds = [set(split.validation(j)) for j in range(k)]
    assert set().union(*folds) == set(range(len(labels)))
    assert sum(len(f) for f in folds) == len(labels)
    assert all(folds)
    labels = np.array(labels)
    for c in np.unique(labels):
        counts = [int(np.sum(labels[split.validation(j)] == c)) for j in range(k)]
        assert max(counts) - min(counts) <= 1
    assert kfold(labels, k, seed).assignment.tolist() == split.assignment.tolist()


def test_kfold_rejects_small_inputs():
    with pytest.raises(DatasetError):
        kfold([0, 1], 3)
    with pytest.raises(DatasetError):
        kfold([0, 1, 2], 1)


def test_fold_split_round_trip():
    split = kfold([0, 1, 1, 2, 0, 2, 1], 3, seed=1)
    back = FoldSplit.parse(split.to_text())
    assert back.k == 3
    assert back.assignment.tolist() == split.assignment.tolist()


def test_time_scaling():
    vs = [TimedIOVector(1000, (True,)), TimedIOVector(0, (False,))]
    assert normalize_time(vs, TimeScaling("none")) == vs
    assert normalize_time(vs, TimeScaling.parse("divide:1000"))[0] == TimedIOVector(1.0, (True,))
    assert normalize_time(vs, TimeScaling("log1p"))[1].t_rel == 0.0
    with pytest.raises(DatasetError):
        TimeScaling("divide", 0)
    with pytest.raises(DatasetError):
        TimeScaling.parse("divide:-2")
    assert str(TimeScaling.parse("divide:1000")) == "divide:1000"


def test_dataset_file_round_trip(tmp_path):
    cat = import_catalog()
    plant = load_plant()
    logs = [
        run_scenario(plant, 20_000, seed=1, label=0),
        run_scenario(plant, 20_000, [FaultSpec("imp_motor", FaultKind.STUCK_AT_0, 8000)], seed=2),
    ]
    data = build_dataset(logs, cat, n=10, stride=3)
    assert set(data.runs.tolist()) == {0, 1}
    path = tmp_path / "d.txt"
    data.save(path)
    back = parse_dataset(path.read_text())
    assert np.array_equal(back.bits, data.bits)
    assert np.array_equal(back.t_rel, data.t_rel)
    assert np.array_equal(back.labels, data.labels)
    assert np.array_equal(back.runs, data.runs)
    assert back.to_text() == data.to_text()
    x = data.features(TimeScaling())
    assert x.shape == (len(data), 10, 34)
    assert np.array_equal(x[..., 1:], data.bits)


def test_dataset_file_errors():
    with pytest.raises(DatasetError):
        parse_dataset("N=2 width=2 count=1\nlabel=0\n0,01\n")
    with pytest.raises(DatasetError):
        parse_dataset("N=1 width=2 count=1\nlabel=9\n0,01\n")
    with pytest.raises(DatasetError):
        parse_dataset("N=1 width=2 count=1\nlabel=0\n0,012\n")
    d = parse_dataset("N=1 width=2 count=1\nlabel=5\n0,01\n")
    assert isinstance(d, Dataset) and d.labels.tolist() == [5]
