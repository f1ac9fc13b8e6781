"""End-to-end runs: preprocess a manifest, train, evaluate, sweep ablation axes."""

import copy
import logging
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .events import DatasetManifest
from .pipeline import prepare_split
from .training import Adam, TrainState, evaluate, train

log = logging.getLogger(__name__)

# swept values per ablation axis: (config key, values, display labels)
ABLATION_AXES = {
    "branch": ("train.branch_mode", ["dual", "point_only", "voxel_only"], None),
    "blocks": ("model.num_blocks", [1, 2, 3], None),
    "voxel_k": ("voxel.top_k", [1024, 1536, 2048, 2560, 3072], None),
    "voxel_size": ("voxel.voxel_size", [[2, 2, 2], [3, 3, 3], [4, 4, 4], [5, 5, 5], [6, 6, 6]], None),
    "max_num_events": ("sampling.max_num_events", [20, 40, 60], None),
    "sampling": ("sampling.strategy", ["fps", "uniform", "octree_grid"], ["FPS", "UPS", "Non-UPS"]),
    "readout": ("model.readout", ["absorbing", "max"], None),
}


class ConfigMismatchError(ValueError):
    pass


def load_data(cfg, cache_dir=None, manifest=None):
    """Prepared train and test samples plus the manifest and preprocessing stats."""
    manifest = manifest or DatasetManifest.load_file(cfg.data.manifest)
    mode = cfg.train.branch_mode
    tr, s1 = prepare_split(manifest, manifest.split(cfg.data.train_split), cfg, cache_dir, mode)
    te, s2 = prepare_split(manifest, manifest.split(cfg.data.test_split), cfg, cache_dir, mode)
    stats = {k: s1.get(k, 0) + s2.get(k, 0) for k in ("hits", "misses", "seconds")}
    return manifest, tr, te, stats


def run_training(cfg, out_dir, cache_dir=None, manifest=None, data=None, progress=None):
    """Train from scratch, writing ``metrics.csv`` and ``checkpoint.agck`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if data is None:
        manifest, tr, te, stats = load_data(cfg, cache_dir, manifest)
    else:
        manifest, tr, te, stats = data
    state = train(tr, te, cfg, manifest.num_classes, metrics_path=out / "metrics.csv", progress=progress)
    save_checkpoint(out / "checkpoint.agck", state.model, state.optimizer, state.rng,
                    state.epoch, cfg, cfg.model_hash())
    return state, stats


def restore(path):
    """Checkpoint -> (RunConfig, TrainState)."""
    ck = load_checkpoint(path)
    cfg = RunConfig.from_dict(ck["meta"]["config"])
    a = ck["meta"]["adam"]
    opt = Adam(lr=a["lr"], beta1=a["beta1"], beta2=a["beta2"], eps=a["eps"],
               step_count=ck["adam_step"], m=ck["adam_m"], v=ck["adam_v"])
    return cfg, TrainState(ck["model"], opt, ck["rng"], ck["epoch"]), ck["digest"]


def check_compatible(cfg, digest):
    if cfg.model_hash() != digest:
        raise ConfigMismatchError("checkpoint was trained with a different preprocessing/model config")


def evaluate_checkpoint(path, split="test", cfg=None, cache_dir=None, manifest=None):
    ck_cfg, state, digest = restore(path)
    if cfg is None:
        cfg = ck_cfg
    check_compatible(cfg, digest)
    manifest = manifest or DatasetManifest.load_file(cfg.data.manifest)
    samples, _ = prepare_split(manifest, manifest.split(split), cfg, cache_dir, cfg.train.branch_mode)
    return evaluate(state.model, samples), samples, state


def ablation(cfg, axis, out_dir, cache_dir=None, values=None, seeds=(0,), progress=None):
    """Train and test once per (axis value, seed). Returns one row per axis value."""
    if axis not in ABLATION_AXES:
        raise KeyError(f"unknown ablation axis {axis!r}; choose from {sorted(ABLATION_AXES)}")
    key, default_values, labels = ABLATION_AXES[axis]
    values = default_values if values is None else values
    if labels is None or values is not default_values:
        labels = [str(v) for v in values]
    manifest = DatasetManifest.load_file(cfg.data.manifest)
    section, field = key.split(".")
    rows = []
    for value, label in zip(values, labels):
        d = cfg.to_dict()
        d[section][field] = copy.deepcopy(value)
        top1 = []
        for seed in seeds:
            d["train"]["seed"] = int(seed)
            run_cfg = RunConfig.from_dict(d)
            data = load_data(run_cfg, cache_dir, manifest)
            state, _ = run_training(run_cfg, Path(out_dir) / f"{axis}_{label}_seed{seed}",
                                    data=data)
            top1.append(evaluate(state.model, data[2])["top1"])
            if progress is not None:
                progress(label, seed, top1[-1])
        rows.append({"axis": axis, "setting": label, "top1_mean": float(np.mean(top1)),
                     "top1_per_seed": top1, "seeds": list(seeds)})
    return rows


def write_ablation_csv(rows, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("axis,setting,top1_mean,top1_per_seed,seeds\n")
        for r in rows:
            fh.write(f"{r['axis']},{r['setting']},{r['top1_mean']!r},"
                     f"{';'.join(repr(v) for v in r['top1_per_seed'])},"
                     f"{';'.join(str(s) for s in r['seeds'])}\n")
