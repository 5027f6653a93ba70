"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

Tolerances are fixed here and must not be relaxed to make a run pass.
The end-to-end criteria (6, 7, 9) share a single full-scale ``demo`` run.
"""

import math
import shutil
import time
from pathlib import Path

import numpy as np
import pytest

from deslab import experiment, metrics, nn
from deslab.cli import main
from deslab.dataset import Dataset, FoldSplit, TimedIOVector, WindowSample, kfold, load_dataset, window_starts, windows
from deslab.errors import DatasetError
from deslab.faults import ActiveFaultSet, FaultKind, FaultSpec, format_scenarios

GRAD_TOL = 1e-4
GRAD_SECONDS = 10.0
SUM_TOL = 1e-9
UNIFORM_TOL = 1e-12
AC_FLOOR = 0.70
E2E_SECONDS = 600.0
CCE_RATIO = 0.5
OVERFIT_EPOCHS = 500
DIAGNOSED_MIN = 5


def random_window(rng, n, width, label):
    return WindowSample(rng.uniform(0, 3000, n), rng.integers(0, 2, (n, width)).astype(np.uint8), label)


def test_c1_gradient_correctness(verdict):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    errors = []
    for seed in range(12):
        model = nn.init(nn.ModelConfig(input_dim=4, hidden=4, window=3), seed)
        sample = random_window(rng, 3, 3, int(rng.integers(0, 8)))
        errors.append(nn.grad_check(model, sample, eps=1e-5))
    elapsed = time.perf_counter() - start
    ok = max(errors) < GRAD_TOL and elapsed < GRAD_SECONDS
    verdict(1, "gradient check", ok, f"12 models, max rel err {max(errors):.2e} < {GRAD_TOL:g}, {elapsed:.1f}s")
    assert ok


def test_c2_softmax_and_cce_invariants(verdict):
    rng = np.random.default_rng(7)
    worst_sum = 0.0
    worst_uniform = 0.0
    argmax_ok = True
    for trial in range(1000):
        width, hidden, n = (int(v) for v in rng.integers(1, 7, 3))
        model = nn.init(nn.ModelConfig(input_dim=width + 1, hidden=hidden, window=n), trial)
        model.params["dense.b"][...] = rng.normal(0, 2, 8)
        x = rng.normal(0, 2, (int(rng.integers(1, 5)), n, width + 1))
        probs = nn.forward(model.params, x)[0]
        worst_sum = max(worst_sum, float(np.abs(probs.sum(axis=1) - 1).max()))
        shifted = {k: v.copy() for k, v in model.params.items()}
        shifted["dense.b"] += rng.uniform(-50, 50)
        argmax_ok &= bool(np.array_equal(probs.argmax(axis=1), nn.forward(shifted, x)[0].argmax(axis=1)))
        label = int(rng.integers(0, 8))
        worst_uniform = max(worst_uniform, abs(nn.loss(np.full(8, 1 / 8), label) - math.log(8)))
    ok = worst_sum <= SUM_TOL and worst_uniform <= UNIFORM_TOL and argmax_ok
    verdict(2, "softmax/CCE invariants", ok,
            f"1000 forwards, max |sum-1| {worst_sum:.1e}, uniform CCE gap {worst_uniform:.1e}, argmax shift-invariant={argmax_ok}")
    assert ok


def oracle(preds, truths, classes=8):
    counts = [[0, 0, 0, 0] for _ in range(classes)]  # tp, tn, fp, fn
    for p, t in zip(preds, truths):
        for i in range(classes):
            if t == i and p == i:
                counts[i][0] += 1
            elif t == i:
                counts[i][3] += 1
            elif p == i:
                counts[i][2] += 1
            else:
                counts[i][1] += 1
    ac = 0.0
    for tp, tn, fp, fn in counts:
        ac += (tp + tn) / (tp + tn + fp + fn)
    ac /= classes
    prec = [tp / (tp + fp) if tp + fp else None for tp, _, fp, _ in counts]
    rec = [tp / (tp + fn) if tp + fn else None for tp, _, _, fn in counts]
    return counts, ac, prec, rec


def test_c3_metrics_oracle(verdict):
    rng = np.random.default_rng(3)
    mismatches = 0
    for _ in range(1000):
        length = int(rng.integers(1, 501))
        truths = rng.integers(0, 8, length)
        preds = np.where(rng.random(length) < rng.random(), truths, rng.integers(0, 8, length))
        cm = metrics.confusion(preds, truths)
        counts, ac, prec, rec = oracle(preds.tolist(), truths.tolist())
        got = [metrics.per_class(cm, i) for i in range(8)]
        same = metrics.average_accuracy(cm) == ac
        same &= all([k.tp, k.tn, k.fp, k.fn] == c for k, c in zip(got, counts))
        same &= all(k.tp + k.tn + k.fp + k.fn == length for k in got)
        same &= [metrics.precision(cm, i) for i in range(8)] == prec
        same &= [metrics.recall(cm, i) for i in range(8)] == rec
        mismatches += not same
    ok = mismatches == 0
    verdict(3, "metrics oracle equivalence", ok, f"1000 streams, {mismatches} mismatches")
    assert ok


def test_c4_window_and_fold_properties(verdict):
    rng = np.random.default_rng(4)
    window_bad = 0
    for _ in range(500):
        n, stride = int(rng.integers(1, 60)), int(rng.integers(1, 12))
        length = n + int(rng.integers(0, 120))
        brute = [s for s in range(length) if s + n <= length and s % stride == 0]
        formula = (length - n) // stride + 1
        vecs = [TimedIOVector(k, (bool(k % 2),)) for k in range(length)]
        got = windows(vecs, n, stride)
        window_bad += not (
            list(window_starts(length, n, stride)) == brute
            and len(brute) == formula == len(got)
            and all(list(w.t_rel) == [float(v) for v in range(s, s + n)] for w, s in zip(got, brute))
        )
    with pytest.raises(DatasetError):
        window_starts(4, 5, 1)
    fold_bad = 0
    for _ in range(300):
        labels = rng.integers(0, 8, int(rng.integers(10, 300)))
        k = int(rng.integers(2, 6))
        folds = kfold(labels, k, int(rng.integers(0, 10**6)))
        parts = [folds.validation(j) for j in range(k)]
        covering = np.array_equal(np.sort(np.concatenate(parts)), np.arange(len(labels)))
        disjoint = sum(len(p) for p in parts) == len(labels)
        balanced = all(
            np.ptp([np.sum(labels[p] == c) for p in parts]) <= 1 for c in np.unique(labels)
        )
        fold_bad += not (covering and disjoint and balanced)
    ok = window_bad == 0 and fold_bad == 0
    verdict(4, "window and fold properties", ok, f"500 window cases {window_bad} bad, 300 fold cases {fold_bad} bad")
    assert ok


def expected_mask(kind, value, now, inject, pulse):
    if now < inject:
        return value
    if kind is FaultKind.STUCK_AT_0:
        return False
    if kind is FaultKind.STUCK_AT_1:
        return True
    if now < inject + pulse:
        return kind is FaultKind.SPURIOUS_0_TO_1
    return value


def test_c5_simulator_determinism(tmp_path, verdict, capsys):
    for name in ("a", "b"):
        assert main(["simulate", "--seed", "13", "--horizon", "60000", "--out", str(tmp_path / name)]) == 0
    same_sim = (tmp_path / "a" / "log.csv").read_bytes() == (tmp_path / "b" / "log.csv").read_bytes()
    scenarios = tmp_path / "scenarios.txt"
    scenarios.write_text(format_scenarios([
        None,
        FaultSpec("imp_end", FaultKind.STUCK_AT_1, 20_000),
        FaultSpec("imp_motor", FaultKind.STUCK_AT_0, 25_000),
        FaultSpec("cc_z7", FaultKind.SPURIOUS_1_TO_0, 15_000, 400),
    ]))
    for name in ("c", "d"):
        assert main(["inject", "--seed", "13", "--scenarios", str(scenarios), "--horizon", "60000",
                     "--out", str(tmp_path / name)]) == 0
    runs = sorted(p.name for p in (tmp_path / "c").glob("run_*.csv"))
    same_inject = len(runs) == 4 and all(
        (tmp_path / "c" / r).read_bytes() == (tmp_path / "d" / r).read_bytes() for r in runs
    )
    capsys.readouterr()

    rng = np.random.default_rng(5)
    mask_bad = 0
    for kind in FaultKind:
        for _ in range(300):
            inject = int(rng.integers(0, 5000))
            pulse = None if kind.is_stuck else int(rng.integers(1, 2000))
            faults = ActiveFaultSet([FaultSpec("s", kind, inject, pulse)])
            times = np.sort(rng.integers(0, 8000, 40))
            values = rng.integers(0, 2, 40).astype(bool)
            for now, value in zip(times.tolist(), values.tolist()):
                active = ActiveFaultSet.at(faults, now)
                seen = active.apply("s", value, now)
                mask_bad += seen != expected_mask(kind, value, now, inject, pulse or 0)
                mask_bad += faults.apply("other", value, now) != value
    ok = same_sim and same_inject and mask_bad == 0
    verdict(5, "simulator determinism", ok,
            f"simulate identical={same_sim}, inject identical={same_inject}, mask fuzz errors={mask_bad}")
    assert ok


@pytest.fixture(scope="module")
def full_run(tmp_path_factory):
    """The desk-scale experiment through the ``demo`` command with default settings."""
    out = tmp_path_factory.mktemp("e2e") / "demo"
    start = time.perf_counter()
    code = main(["demo", "--seed", "0", "--out", str(out)])
    elapsed = time.perf_counter() - start
    assert code == 0
    return out, elapsed


def read_curves(path):
    rows = Path(path).read_text().splitlines()
    head = rows[0].split(",")
    out = {}
    for r in rows[1:]:
        rec = dict(zip(head, r.split(",")))
        out.setdefault(int(rec["fold"]), []).append(rec)
    return out


@pytest.mark.slow
def test_c6_end_to_end_accuracy(full_run, verdict):
    out, elapsed = full_run
    data = load_dataset(out / "dataset.txt")
    folds = FoldSplit.parse((out / "train" / "folds.txt").read_text())
    hist = data.histogram()
    runs = len(list((out / "logs").glob("run_*.csv")))
    cms = []
    for j in range(folds.k):
        model = nn.load_checkpoint(out / "train" / f"fold_{j}.ckpt")
        cms.append(nn.evaluate(model, data, folds.validation(j))[1])
    acs = [metrics.average_accuracy(cm) for cm in cms]
    plain = [metrics.accuracy(cm) for cm in cms]
    mean_ac = float(np.mean(acs))
    setup_ok = (folds.k == 3 and data.n == 50 and data.width == 33 and runs >= 160
                and all(hist.get(c, 0) > 0 for c in range(8)))
    ok = setup_ok and mean_ac >= AC_FLOOR and elapsed < E2E_SECONDS
    verdict(6, "end-to-end experiment", ok,
            f"mean val AC {mean_ac:.4f} >= {AC_FLOOR}, folds {', '.join(f'{a:.4f}' for a in acs)}, "
            f"plain accuracy {np.mean(plain):.4f}, {runs} runs, {len(data)} windows, {elapsed:.0f}s < {E2E_SECONDS:.0f}s")
    assert ok


@pytest.mark.slow
def test_c7_training_loss_halves(full_run, verdict):
    out, _ = full_run
    curves = read_curves(out / "train" / "curves.csv")
    ratios = []
    for fold in sorted(curves):
        rows = sorted(curves[fold], key=lambda r: int(r["epoch"]))
        ratios.append(float(rows[-1]["train_cce"]) / float(rows[0]["train_cce"]))
    ok = len(ratios) == 3 and all(r < CCE_RATIO for r in ratios)
    verdict(7, "training CCE convergence", ok,
            "final/first train CCE per fold " + ", ".join(f"{r:.3f}" for r in ratios) + f" < {CCE_RATIO}")
    assert ok


def test_c8_overfit_sixteen_samples(verdict):
    rng = np.random.default_rng(8)
    data = Dataset.from_samples([random_window(rng, 3, 3, i % 8) for i in range(16)])
    model = nn.init(nn.ModelConfig(input_dim=4, hidden=16, window=3), 0)
    cfg = nn.TrainConfig(epochs=OVERFIT_EPOCHS, batch_size=16, learning_rate=1e-2)

    def perfect(m, stats):
        return metrics.average_accuracy(nn.evaluate(m, data)[1]) == 1.0

    hist = nn.fit(model, data, np.arange(16), cfg, stop=perfect)
    ac = metrics.average_accuracy(nn.evaluate(model, data)[1])
    ok = ac == 1.0 and len(hist) <= OVERFIT_EPOCHS
    verdict(8, "overfit capacity", ok, f"training AC {ac:.4f} after {len(hist)} epochs (limit {OVERFIT_EPOCHS})")
    assert ok


def read_verdicts(path):
    rows = []
    for line in Path(path).read_text().splitlines()[1:]:
        t, kind, cls, _ = line.split(",")
        rows.append((int(t), kind, int(cls) if cls else None))
    return rows


def ordered(rows, inject, label):
    """Warmup first, first decided verdict Normal before injection, correct Fault at or after it."""
    decided = [r for r in rows if r[1] in ("normal", "fault")]
    return (
        bool(rows) and rows[0][1] == "warmup"
        and bool(decided) and decided[0][1] == "normal" and decided[0][0] < inject
        and any(t >= inject and kind == "fault" and cls == label for t, kind, cls in rows)
    )


@pytest.mark.slow
def test_c9_online_diagnosis(full_run, verdict):
    out, _ = full_run
    results = {}
    for label in range(1, 7):
        rows = read_verdicts(out / "diagnose" / f"verdicts_c{label}.csv")
        results[label] = ordered(rows, experiment.HELDOUT_INJECT, label)
    hits = sum(results.values())
    ok = hits >= DIAGNOSED_MIN
    verdict(9, "online diagnosis", ok,
            f"{hits}/6 classes Warmup->Normal->Fault(correct), need {DIAGNOSED_MIN}; "
            + " ".join(f"C{c}={int(v)}" for c, v in results.items()))
    assert ok


def snapshot(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.mark.slow
def test_c10_demo_reproducibility(tmp_path, verdict, capsys):
    # reduced scale: the byte comparison does not depend on the experiment size
    out = tmp_path / "demo"
    argv = ["demo", "--seed", "3", "--per-class", "3", "--horizon", "60000", "--n", "20",
            "--epochs", "3", "--hidden", "16", "--out", str(out)]
    assert main(argv) == 0
    first = snapshot(out)
    shutil.rmtree(out)
    assert main(argv) == 0
    second = snapshot(out)
    capsys.readouterr()
    differing = sorted(k for k in first.keys() | second.keys() if first.get(k) != second.get(k))
    ckpts = [k for k in first if k.endswith(".ckpt")]
    reports = [k for k in first if k.startswith("eval/")]
    ok = not differing and len(ckpts) == 3 and len(reports) == 3
    verdict(10, "demo reproducibility", ok,
            f"{len(first)} files incl. {len(ckpts)} checkpoints and {len(reports)} reports, {len(differing)} differ")
    assert ok
