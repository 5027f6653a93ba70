"""``deslab`` command line: simulate, inject, dataset, train, eval, plot, diagnose, demo.

Every command writes into ``--out`` and leaves a ``manifest.json`` listing the
SHA-256 of each artifact.  Errors print ``error: <code>: <message>`` on stderr
and exit non-zero.
"""

from __future__ import annotations

import argparse
import glob
import hashlib
import json
import os
import sys
from pathlib import Path
from importlib import resources

import numpy as np

from . import experiment, metrics, nn, plots
from .acquisition import detect_symptoms, load_log, parse_symptom_rules, stats
from .dataset import Dataset, FoldSplit, build_dataset, kfold, load_dataset
from .diagnoser import assess, replay
from .errors import DeslabError, ModelError
from .faults import format_scenarios, import_catalog, label_for, parse_fault, parse_scenarios
from .plant import load_plant, run_scenario

BUNDLED = "bundled:import_station.plant"


class UsageError(DeslabError):
    code = "usage"


class ManifestError(DeslabError):
    code = "manifest"


# --------------------------------------------------------------------------
# manifest


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class RunManifest:
    def __init__(self, out: Path, command: str, **fields):
        self.out = Path(out)
        self.fields = {"command": command, **fields}
        self.artifacts = []

    def write(self, rel: str, text: str) -> Path:
        path = self.out / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        self.add(rel)
        return path

    def add(self, rel: str) -> None:
        if rel not in self.artifacts:
            self.artifacts.append(rel)

    def save(self, name: str = "manifest.json") -> Path:
        doc = dict(self.fields)
        doc["out"] = str(self.out)
        doc["artifacts"] = [{"path": rel, "sha256": sha256(self.out / rel)} for rel in self.artifacts]
        path = self.out / name
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def verify_manifest(path) -> list:
    """Artifacts whose hash no longer matches (empty when the manifest verifies)."""
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ManifestError(f"cannot read {path}: {exc}") from None
    bad = []
    for item in doc.get("artifacts", []):
        target = path.parent / item["path"]
        if not target.exists() or sha256(target) != item["sha256"]:
            bad.append(item["path"])
    return bad


# --------------------------------------------------------------------------
# helpers


def _plant(args):
    return load_plant(args.plant)


def _plant_name(args) -> str:
    return args.plant or BUNDLED


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _log_paths(items) -> list:
    paths = []
    for item in items:
        if os.path.isdir(item):
            paths.extend(sorted(glob.glob(os.path.join(item, "*.csv"))))
        else:
            paths.append(item)
    if not paths:
        raise UsageError("no change logs given")
    return paths


def _say(*parts):
    print(*parts, file=sys.stderr, flush=True)


def _train_config(args) -> nn.TrainConfig:
    return nn.TrainConfig(
        learning_rate=args.lr,
        epochs=args.epochs,
        batch_size=args.batch_size,
        optimizer=args.optimizer,
        seed=args.seed,
        gradient_clip=None if args.clip <= 0 else args.clip,
        class_weighting=args.class_weighting,
        precision=args.precision,
    )


# --------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    plant = _plant(args)
    fault = parse_fault(args.fault) if args.fault else None
    faults = [fault] if fault else []
    label = label_for(faults, import_catalog())
    log = run_scenario(plant, args.horizon, faults, args.seed, label=label)
    man = RunManifest(_out(args), "simulate", plant=_plant_name(args), seed=args.seed, horizon=args.horizon,
                      scenarios=None)
    man.write(args.name, log.to_csv())
    man.save()
    print(f"{args.out}/{args.name}: {len(log.records)} records, {len(log.signals)} signals")
    return 0


def cmd_suite(args) -> int:
    plant = _plant(args)
    suite = experiment.build_suite(plant, import_catalog(), args.per_class, args.seed, args.horizon)
    man = RunManifest(_out(args), "suite", plant=_plant_name(args), seed=args.seed, horizon=args.horizon,
                      scenarios=None)
    man.write("scenarios.txt", format_scenarios([f for f, _ in suite]))
    man.save()
    print(f"{args.out}/scenarios.txt: {len(suite)} scenarios")
    return 0


def _inject(plant, scenario_text: str, horizon: int, seed: int, man: RunManifest, prefix: str = "") -> list:
    catalog = import_catalog()
    faults = parse_scenarios(scenario_text, plant.scan_period)
    logs = []
    for i, fault in enumerate(faults):
        spec = [fault] if fault else []
        log = run_scenario(plant, horizon, spec, experiment.scenario_seed(seed, i), label=label_for(spec, catalog))
        man.write(f"{prefix}run_{i:03d}.csv", log.to_csv())
        logs.append(log)
    return logs


def cmd_inject(args) -> int:
    plant = _plant(args)
    text = Path(args.scenarios).read_text(encoding="utf-8")
    man = RunManifest(_out(args), "inject", plant=_plant_name(args), seed=args.seed, horizon=args.horizon,
                      scenarios=args.scenarios)
    logs = _inject(plant, text, args.horizon, args.seed, man)
    man.save()
    print(f"{args.out}: {len(logs)} labeled logs")
    return 0


def _histogram_line(data: Dataset) -> str:
    hist = data.histogram()
    return " ".join(f"C{c}={hist.get(c, 0)}" for c in range(8))


def cmd_dataset(args) -> int:
    paths = _log_paths(args.logs)
    logs = [load_log(p) for p in paths]
    data = build_dataset(logs, import_catalog(), args.n, args.stride, keep_pre_injection=not args.drop_pre_injection)
    man = RunManifest(_out(args), "dataset", plant=None, seed=None, horizon=None, scenarios=None,
                      logs=[str(p) for p in paths], n=args.n, stride=args.stride)
    man.write("dataset.txt", data.to_text())
    man.save()
    print(f"{args.out}/dataset.txt: {len(data)} samples")
    print(_histogram_line(data))
    return 0


def _train(data: Dataset, args, man: RunManifest, prefix: str = ""):
    folds = kfold(data, args.k, args.seed)
    model_cfg = nn.ModelConfig(data.width + 1, args.hidden, args.layers, window=data.n, time_scale=args.time_scale)
    train_cfg = _train_config(args)

    def progress(s):
        _say(f"fold {s.fold} epoch {s.epoch}: train_cce={s.train_cce:.4f} val_cce={s.val_cce:.4f} val_ac={s.val_ac:.4f}")

    models, curves = nn.train(data, folds, model_cfg, train_cfg, on_epoch=progress)
    for j, model in enumerate(models):
        path = man.out / f"{prefix}fold_{j}.ckpt"
        path.parent.mkdir(parents=True, exist_ok=True)
        nn.save_checkpoint(model, path)
        man.add(f"{prefix}fold_{j}.ckpt")
    man.write(f"{prefix}curves.csv", nn.curves_to_csv(curves))
    man.write(f"{prefix}folds.txt", folds.to_text())
    lines = [f"k={folds.k} epochs={train_cfg.epochs} samples={len(data)}"]
    for j in range(folds.k):
        last = [s for s in curves if s.fold == j][-1]
        first = [s for s in curves if s.fold == j][0]
        lines.append(
            f"fold {j}: first_train_cce={first.train_cce:.6f} final_train_cce={last.train_cce:.6f} "
            f"final_val_cce={last.val_cce:.6f} final_val_ac={last.val_ac:.6f}"
        )
    finals = [[s for s in curves if s.fold == j][-1].val_ac for j in range(folds.k)]
    lines.append(f"mean_val_ac={np.mean(finals):.6f}")
    man.write(f"{prefix}summary.txt", "\n".join(lines) + "\n")
    return models, curves, folds


def cmd_train(args) -> int:
    data = load_dataset(args.dataset)
    man = RunManifest(_out(args), "train", plant=None, seed=args.seed, horizon=None, scenarios=None,
                      dataset=args.dataset)
    _, curves, folds = _train(data, args, man)
    man.save()
    print((man.out / "summary.txt").read_text(encoding="utf-8"), end="")
    return 0


def _evaluate(models, data: Dataset, folds, man: RunManifest, prefix: str = ""):
    if folds is not None and len(models) != folds.k:
        raise UsageError(f"{len(models)} checkpoints for k={folds.k} folds")
    if folds is not None and len(folds.assignment) != len(data):
        raise UsageError("fold assignment does not match the dataset")
    cms = []
    for j, model in enumerate(models):
        if model.config.width != data.width or model.config.window != data.n:
            raise ModelError(
                f"checkpoint {j} expects N={model.config.window}, width={model.config.width}; "
                f"dataset has N={data.n}, width={data.width}"
            )
        idx = folds.validation(j) if folds is not None else None
        cms.append(nn.evaluate(model, data, idx)[1])
    catalog = import_catalog()
    names = [catalog.describe(c) for c in range(8)]
    man.write(f"{prefix}report.txt", metrics.report(cms, names, title="cross-validated evaluation"))
    man.write(f"{prefix}report.csv", metrics.report_csv(cms))
    man.write(f"{prefix}confusion.csv", metrics.matrix_csv(metrics.fold_average(cms)))
    return cms


def cmd_eval(args) -> int:
    data = load_dataset(args.dataset)
    models = [nn.load_checkpoint(p) for p in args.checkpoints]
    folds = FoldSplit.parse(Path(args.folds).read_text(encoding="utf-8")) if args.folds else None
    man = RunManifest(_out(args), "eval", plant=None, seed=None, horizon=None, scenarios=None,
                      dataset=args.dataset, checkpoints=list(args.checkpoints))
    cms = _evaluate(models, data, folds, man)
    man.save()
    print(f"AC={np.mean([metrics.average_accuracy(cm) for cm in cms]):.6f}")
    return 0


def cmd_plot(args) -> int:
    if bool(args.curves) == bool(args.matrix):
        raise UsageError("give exactly one of --curves or --matrix")
    if args.curves:
        curves = plots.read_curves(Path(args.curves).read_text(encoding="utf-8"))
        svg = plots.line_plot(curves, args.series or ["loss"], title=args.title or ", ".join(args.series or ["loss"]))
    else:
        matrix = metrics.read_matrix_csv(Path(args.matrix).read_text(encoding="utf-8"))
        svg = plots.heatmap(matrix, title=args.title or "normalized confusion matrix")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(svg, encoding="utf-8")
    print(str(out))
    return 0


def cmd_diagnose(args) -> int:
    model = nn.load_checkpoint(args.model)
    log = load_log(args.log)
    print("time_ms,kind,class,confidence")
    for t, verdict in replay(log, model, args.tau, args.vote):
        print(verdict.line(t))
    return 0


def cmd_symptoms(args) -> int:
    log = load_log(args.log)
    if args.rules is None:
        text = resources.files("deslab.data").joinpath("import_station.rules").read_text(encoding="utf-8")
    else:
        text = Path(args.rules).read_text(encoding="utf-8")
    rules = parse_symptom_rules(text)
    print("antecedent_ms,deadline_ms,rule")
    for s in detect_symptoms(log, rules):
        print(f"{s.antecedent_time},{s.deadline},{s.rule}")
    return 0


def cmd_stats(args) -> int:
    log = load_log(args.log)
    print("signal,changes,duty_cycle,mean_interval_ms")
    for s in stats(log, args.end):
        mean = "" if s.mean_interval is None else f"{s.mean_interval:.3f}"
        print(f"{s.signal},{s.changes},{s.duty_cycle:.6f},{mean}")
    return 0


def cmd_verify(args) -> int:
    bad = verify_manifest(args.path)
    if bad:
        raise ManifestError(f"hash mismatch or missing: {', '.join(bad)}")
    print("ok")
    return 0


def cmd_demo(args) -> int:
    """Scenario suite, logs, dataset, k-fold training, evaluation, plots and held-out diagnosis."""
    plant = _plant(args)
    catalog = import_catalog()
    out = _out(args)
    man = RunManifest(out, "demo", plant=_plant_name(args), seed=args.seed, horizon=args.horizon, scenarios="scenarios.txt")
    suite = experiment.build_suite(plant, catalog, args.per_class, args.seed, args.horizon)
    text = format_scenarios([f for f, _ in suite])
    man.write("scenarios.txt", text)
    _say(f"simulating {len(suite)} scenarios")
    logs = _inject(plant, text, args.horizon, args.seed, man, prefix="logs/")
    data = build_dataset(logs, catalog, args.n, args.stride)
    man.write("dataset.txt", data.to_text())
    _say(f"dataset: {len(data)} samples, {_histogram_line(data)}")
    models, curves, folds = _train(data, args, man, prefix="train/")
    cms = _evaluate(models, data, folds, man, prefix="eval/")
    curve_data = plots.read_curves(nn.curves_to_csv(curves))
    man.write("plots/loss.svg", plots.line_plot(curve_data, ["loss"], "categorical cross-entropy", "CCE"))
    man.write("plots/ac.svg", plots.line_plot(curve_data, ["ac"], "validation average accuracy", "AC"))
    man.write("plots/precision.svg", plots.line_plot(curve_data, ["precision"], "validation precision", "P"))
    man.write("plots/recall.svg", plots.line_plot(curve_data, ["recall"], "validation recall", "R"))
    man.write("plots/confusion.svg", plots.heatmap(metrics.fold_average(cms), "fold-averaged normalized confusion"))
    cfg = experiment.ExperimentConfig(seed=args.seed, plant_path=args.plant)
    summary = []
    for label, fault, log in experiment.heldout_runs(cfg, plant, catalog):
        verdicts = replay(log, models[0], args.tau)
        man.write(f"diagnose/heldout_c{label}.csv", log.to_csv())
        rows = ["time_ms,kind,class,confidence"] + [v.line(t) for t, v in verdicts]
        man.write(f"diagnose/verdicts_c{label}.csv", "\n".join(rows) + "\n")
        summary.append(f"C{label} {fault}: {assess(verdicts, fault.inject_time, label).line()}")
    man.write("diagnose/summary.txt", "\n".join(summary) + "\n")
    man.save()
    ac = np.mean([metrics.average_accuracy(cm) for cm in cms])
    print(f"{out}: mean validation AC={ac:.6f}")
    print("\n".join(summary))
    return 0


# --------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(p, out_default: str):
    p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    p.add_argument("--out", default=out_default, help=f"output location (default {out_default})")
    p.add_argument("--plant", default=None, help="plant description file (default: bundled import station)")


def _train_args(p):
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--layers", type=int, default=1)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--optimizer", choices=["adam", "sgd"], default="adam")
    p.add_argument("--clip", type=float, default=5.0, help="gradient norm clip (<= 0 disables)")
    p.add_argument("--class-weighting", action="store_true")
    p.add_argument("--time-scale", default="divide:1000", help="none | divide:<c> | log1p")
    p.add_argument("--precision", choices=["float32", "float64"], default="float32")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="deslab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("simulate", help="normal-mode (or single-fault) change log")
    _common(p, "runs/simulate")
    p.add_argument("--horizon", type=int, default=60_000, help="simulated time in ms")
    p.add_argument("--fault", default=None, help='optional fault, e.g. "imp_end stuck1 at 20000"')
    p.add_argument("--name", default="log.csv")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("suite", help="write a balanced scenario file for classes C0..C7")
    _common(p, "runs/suite")
    p.add_argument("--per-class", type=int, default=experiment.DEFAULT_PER_CLASS)
    p.add_argument("--horizon", type=int, default=experiment.DEFAULT_HORIZON)
    p.set_defaults(func=cmd_suite)

    p = sub.add_parser("inject", help="one labeled change log per scenario line")
    _common(p, "runs/inject")
    p.add_argument("--scenarios", required=True)
    p.add_argument("--horizon", type=int, default=experiment.DEFAULT_HORIZON)
    p.set_defaults(func=cmd_inject)

    p = sub.add_parser("dataset", help="window change logs into a labeled dataset")
    _common(p, "runs/dataset")
    p.add_argument("logs", nargs="+", help="log files or directories of *.csv")
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--drop-pre-injection", action="store_true")
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("train", help="k-fold cross-validated training")
    _common(p, "runs/train")
    p.add_argument("--dataset", required=True)
    _train_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="metrics report and fold-averaged confusion matrix")
    _common(p, "runs/eval")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoints", nargs="+", required=True)
    p.add_argument("--folds", default=None, help="folds.txt from train: checkpoint j is scored on fold j")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot", help="SVG of training curves or a confusion matrix")
    _common(p, "runs/plot.svg")
    p.add_argument("--curves", default=None)
    p.add_argument("--matrix", default=None)
    p.add_argument("--series", action="append", help="loss | ac | precision | recall | pr | <column>")
    p.add_argument("--title", default=None)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("diagnose", help="replay a change log through a checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--log", required=True)
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--vote", type=int, default=1)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("symptoms", help="expected-successor violations in a change log")
    p.add_argument("--log", required=True)
    p.add_argument("--rules", help="rules file (default: bundled import station rules)")
    p.set_defaults(func=cmd_symptoms)

    p = sub.add_parser("stats", help="per-signal change counts and duty cycles")
    p.add_argument("--log", required=True)
    p.add_argument("--end", type=int, default=None)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("verify", help="check the hashes of a manifest")
    p.add_argument("path")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("demo", help="whole experiment end to end under one seed")
    _common(p, "runs/demo")
    p.add_argument("--per-class", type=int, default=experiment.DEFAULT_PER_CLASS)
    p.add_argument("--horizon", type=int, default=experiment.DEFAULT_HORIZON)
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--tau", type=float, default=0.5)
    _train_args(p)
    p.set_defaults(func=cmd_demo)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except DeslabError as exc:
        msg = str(exc).replace("\n", " ")
        print(f"error: {exc.code}: {msg}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: io: {exc}".replace("\n", " "), file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: value: {exc}".replace("\n", " "), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
