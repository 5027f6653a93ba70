"""Desk-scale end-to-end experiment: scenarios, logs, windows, k-fold training."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import metrics, nn
from .dataset import DEFAULT_K, DEFAULT_N, build_dataset, kfold
from .faults import FaultSpec, import_catalog, scenario_suite
from .plant import load_plant, resting_values, run_scenario

DEFAULT_HORIZON = 90_000
DEFAULT_PER_CLASS = 20
HELDOUT_HORIZON = 120_000
HELDOUT_INJECT = 60_000


def scenario_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index, 7]).generate_state(1)[0])


@dataclass
class ExperimentConfig:
    seed: int = 0
    per_class: int = DEFAULT_PER_CLASS
    horizon: int = DEFAULT_HORIZON
    n: int = DEFAULT_N
    stride: int = 1
    k: int = DEFAULT_K
    hidden: int = 64
    layers: int = 1
    time_scale: str = "divide:1000"
    train: nn.TrainConfig = field(default_factory=nn.TrainConfig)
    plant_path: Optional[str] = None


def build_suite(plant, catalog, per_class: int, seed: int, horizon: int) -> list:
    """Scenario suite whose catch-all faults all leave a trace in a normal run of the plant."""
    return scenario_suite(catalog, plant.names, per_class, seed, horizon, scan_period=plant.scan_period,
                          resting=resting_values(plant, horizon, seed))


def simulate_suite(cfg: ExperimentConfig, plant=None, catalog=None):
    plant = plant or load_plant(cfg.plant_path)
    catalog = catalog or import_catalog()
    suite = build_suite(plant, catalog, cfg.per_class, cfg.seed, cfg.horizon)
    logs = []
    for i, (fault, label) in enumerate(suite):
        faults = [fault] if fault is not None else []
        logs.append(run_scenario(plant, cfg.horizon, faults, scenario_seed(cfg.seed, i), label=label))
    return suite, logs


def heldout_runs(cfg: ExperimentConfig, plant=None, catalog=None, horizon: int = HELDOUT_HORIZON,
                 inject: int = HELDOUT_INJECT) -> list:
    """One fresh run per catalog class with a late injection, seeded apart from the training suite."""
    plant = plant or load_plant(cfg.plant_path)
    catalog = catalog or import_catalog()
    out = []
    for label, (signal, kind) in enumerate(catalog.entries, start=1):
        fault = FaultSpec(signal, kind, inject)
        seed = int(np.random.SeedSequence([cfg.seed, label, 11]).generate_state(1)[0])
        out.append((label, fault, run_scenario(plant, horizon, [fault], seed, label=label)))
    return out


def run(cfg: ExperimentConfig, on_epoch=None):
    plant = load_plant(cfg.plant_path)
    catalog = import_catalog()
    suite, logs = simulate_suite(cfg, plant, catalog)
    data = build_dataset(logs, catalog, cfg.n, cfg.stride)
    folds = kfold(data, cfg.k, cfg.seed)
    model_cfg = nn.ModelConfig(plant.width + 1, cfg.hidden, cfg.layers, window=cfg.n, time_scale=cfg.time_scale)
    train_cfg = cfg.train if cfg.train.seed == cfg.seed else nn.TrainConfig(**{**cfg.train.__dict__, "seed": cfg.seed})
    models, curves = nn.train(data, folds, model_cfg, train_cfg, on_epoch=on_epoch)
    cms = [nn.evaluate(m, data, folds.validation(j))[1] for j, m in enumerate(models)]
    return {
        "plant": plant,
        "catalog": catalog,
        "suite": suite,
        "logs": logs,
        "data": data,
        "folds": folds,
        "models": models,
        "curves": curves,
        "cms": cms,
        "ac": [metrics.average_accuracy(cm) for cm in cms],
    }
