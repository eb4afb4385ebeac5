"""Batch pipeline: gen-data -> train-classifier -> train-vae -> attribute -> evaluate -> report.

A run is driven by one JSON config and leaves everything under an output
directory together with ``manifest.json``. Each stage records a hash of the
config sections it depends on (chained with its upstream stages), so a rerun
with an unchanged config skips finished stages and an edit re-runs only what
it affects.

Seeds: every random draw is seeded from ``derive_seed(seed, tag)`` =
``seed XOR crc32(tag)`` with tags such as ``"gen-data"`` or
``"attribute/uniform/123"``.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import logging
import math
import os
import shutil
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__, tensorio
from .attribution import DISPLAY_NAMES, VARIANTS, BaselineContext, BaselineSpec, EgConfig, IgConfig, attribute
from .counterfactual import CfConfig, find_counterfactual
from .metrics import (
    IMPUTERS, MASS_CENTER_SIZES, TOPK_FRACTIONS, ImputeContext, UndefinedMetric, fpar,
    imputation_source, mass_center_ablation_curve, roc_auc, spatial_spread, topk_ablation_curve,
)
from .models import TrainConfig, load_checkpoint, save_checkpoint, train_classifier, train_vae
from .optim import NumericError
from .stats import aggregate
from .synth import NORMAL, PATHOLOGICAL, generate_band_dataset, generate_blob_dataset, load_dataset, save_dataset, split_dataset

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
STAGES = ("gen-data", "train-classifier", "train-vae", "attribute", "evaluate", "report")
UPSTREAM = {
    "gen-data": (),
    "train-classifier": ("gen-data",),
    "train-vae": ("gen-data",),
    "attribute": ("train-classifier", "train-vae"),
    "evaluate": ("attribute",),
    "report": ("evaluate",),
}
STAGE_DIRS = {
    "gen-data": "data", "train-classifier": "classifier", "train-vae": "vae",
    "attribute": "attributions", "evaluate": "evaluation", "report": "report",
}

_REQUIRED = object()
DEFAULTS: dict[str, Any] = {
    "schema_version": SCHEMA_VERSION,
    "seed": _REQUIRED,
    "output_dir": "run",
    "jobs": 1,
    "dataset": {
        "family": "band",
        "n": 600,
        "noise_level": 0.05,
        "gap_fraction_range": [0.2, 0.5],
        "blob_radius_range": [4.0, 8.0],
        "split": [0.6, 0.1, 0.3],
    },
    "classifier": {"lr": 3e-3, "epochs": 20, "batch_size": 32, "class_weighting": True},
    "vae": {"lr": 1e-3, "epochs": 60, "batch_size": 32, "beta": 2.0, "latent_dim": 32},
    "counterfactual": {"lr": 0.1, "max_iterations": 50, "threshold": 0.99, "normal_class": NORMAL, "similarity_weight": 0.0},
    "ig": {"steps": 64, "batch_size": 64},
    "eg": {"n_baselines": 50, "samples_per_baseline": 8, "latent_sigma": None},
    "baselines": list(VARIANTS),
    "attribution": {"blur_sigma": 20.0, "split": "test", "max_samples": None},
    "metrics": {
        "imputers": list(IMPUTERS),
        "topk_fractions": list(TOPK_FRACTIONS),
        "mass_center_sizes": list(MASS_CENTER_SIZES),
        "blur_sigma": 20.0,
    },
}
# sections each stage's outputs depend on
STAGE_KEYS = {
    "gen-data": ("seed", "dataset"),
    "train-classifier": ("seed", "classifier"),
    "train-vae": ("seed", "vae"),
    "attribute": ("seed", "counterfactual", "ig", "eg", "baselines", "attribution"),
    "evaluate": ("metrics",),
    "report": (),
}


class PipelineError(Exception):
    exit_code = 1


class ConfigError(PipelineError):
    exit_code = 2


class PrerequisiteError(PipelineError):
    exit_code = 3

    def __init__(self, stage: str, missing: str):
        super().__init__(f"stage '{stage}' needs the outputs of '{missing}'; run `cfbaselines {missing}` first")
        self.stage, self.missing = stage, missing


def derive_seed(seed: int, tag: str) -> int:
    return (int(seed) ^ zlib.crc32(tag.encode("utf-8"))) & 0xFFFFFFFF


# ---------------------------------------------------------------------------
# config


def _line_of(text: str, key: str) -> int | None:
    pos = text.find(f'"{key}"')
    return text.count("\n", 0, pos) + 1 if pos >= 0 else None


def _where(text: str, path: str) -> str:
    line = _line_of(text, path.rsplit(".", 1)[-1]) if text else None
    return f"{path} (line {line})" if line else path


def _type_ok(value, default) -> bool:
    if default is None:
        return value is None or (isinstance(value, (int, float)) and not isinstance(value, bool))
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, int):
        return isinstance(value, int) and not isinstance(value, bool)
    if isinstance(default, float):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    return isinstance(value, type(default))


def _merge(user: dict, defaults: dict, prefix: str, text: str) -> dict:
    out = {}
    for key, value in user.items():
        path = f"{prefix}{key}"
        if key not in defaults:
            raise ConfigError(f"unknown key {_where(text, path)}; allowed: {', '.join(sorted(defaults))}")
        d = defaults[key]
        if isinstance(d, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{_where(text, path)} must be an object")
            out[key] = _merge(value, d, path + ".", text)
        elif d is _REQUIRED:
            out[key] = value
        elif not _type_ok(value, d):
            raise ConfigError(f"{_where(text, path)} has type {type(value).__name__}, expected {type(d).__name__}")
        else:
            out[key] = float(value) if isinstance(d, float) else value
    for key, d in defaults.items():
        if key not in out:
            if d is _REQUIRED:
                raise ConfigError(f"missing required key {prefix}{key}")
            out[key] = copy.deepcopy(d)
    return out


def parse_config(text: str, source: str = "<config>") -> dict:
    """Parse and validate a JSON config; raises :class:`ConfigError` with a field path or line."""
    try:
        user = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{source}: line {e.lineno} column {e.colno}: {e.msg}") from None
    if not isinstance(user, dict):
        raise ConfigError(f"{source}: top level must be an object")
    if user.get("schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
        raise ConfigError(f"{source}: schema_version {user.get('schema_version')!r} is not supported (expected {SCHEMA_VERSION})")
    try:
        cfg = _merge(user, DEFAULTS, "", text)
        validate_config(cfg)
    except ConfigError as e:
        raise ConfigError(f"{source}: {e}") from None
    return cfg


def validate_config(cfg: dict) -> None:
    seed = cfg["seed"]
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    ds = cfg["dataset"]
    if ds["family"] not in ("band", "blob"):
        raise ConfigError(f"dataset.family must be 'band' or 'blob', got {ds['family']!r}")
    if ds["n"] < 10:
        raise ConfigError("dataset.n must be at least 10")
    for key, size in (("split", 3), ("gap_fraction_range", 2), ("blob_radius_range", 2)):
        if len(ds[key]) != size or not all(isinstance(v, (int, float)) for v in ds[key]):
            raise ConfigError(f"dataset.{key} must be a list of {size} numbers")
    bad = [b for b in cfg["baselines"] if b not in VARIANTS]
    if bad or not cfg["baselines"]:
        raise ConfigError(f"baselines: unknown {bad}; choose from {list(VARIANTS)}")
    bad = [m for m in cfg["metrics"]["imputers"] if m not in IMPUTERS]
    if bad:
        raise ConfigError(f"metrics.imputers: unknown {bad}; choose from {list(IMPUTERS)}")
    f = np.asarray(cfg["metrics"]["topk_fractions"], dtype=np.float64)
    if f.size == 0 or np.any(f <= 0) or np.any(f > 1) or np.any(np.diff(f) <= 0):
        raise ConfigError("metrics.topk_fractions must be strictly increasing within (0, 1]")
    s = np.asarray(cfg["metrics"]["mass_center_sizes"], dtype=np.float64)
    if s.size == 0 or np.any(s <= 0) or np.any(s > 64) or np.any(np.diff(s) <= 0) or np.any(s != np.round(s)):
        raise ConfigError("metrics.mass_center_sizes must be strictly increasing integers within [1, 64]")
    if cfg["attribution"]["split"] not in ("train", "val", "test"):
        raise ConfigError("attribution.split must be train, val or test")
    if cfg["jobs"] < 1:
        raise ConfigError("jobs must be at least 1")
    # delegate numeric range checks to the component configs
    try:
        _train_config(cfg, "classifier")
        _train_config(cfg, "vae")
        CfConfig(**cfg["counterfactual"])
        IgConfig(cfg["ig"]["steps"], batch_size=cfg["ig"]["batch_size"])
        EgConfig(cfg["eg"]["samples_per_baseline"])
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None


def load_config(path: str | Path, overrides: dict | None = None) -> dict:
    """Read and validate a config file; ``overrides`` (None values ignored) replace top-level keys."""
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {p}: {e.strerror}") from None
    cfg = parse_config(text, str(p))
    extra = {k: v for k, v in (overrides or {}).items() if v is not None}
    if extra:
        user = json.loads(text)
        user.update(extra)
        cfg = parse_config(json.dumps(user, indent=1), f"{p} (with overrides)")
    return cfg


def _train_config(cfg: dict, section: str) -> TrainConfig:
    c = cfg[section]
    seed = derive_seed(cfg["seed"], f"train-{section}")
    if section == "classifier":
        return TrainConfig(c["lr"], c["epochs"], c["batch_size"], 0.0, c["class_weighting"], seed)
    return TrainConfig(c["lr"], c["epochs"], c["batch_size"], c["beta"], False, seed)


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: dict) -> str:
    relevant = {k: v for k, v in cfg.items() if k not in ("output_dir", "jobs")}
    return hashlib.sha256(_canonical(relevant).encode()).hexdigest()


def stage_hashes(cfg: dict) -> dict[str, str]:
    out: dict[str, str] = {}
    for stage in STAGES:
        payload = {
            "stage": stage, "version": __version__,
            "config": {k: cfg[k] for k in STAGE_KEYS[stage]},
            "upstream": [out[u] for u in UPSTREAM[stage]],
        }
        out[stage] = hashlib.sha256(_canonical(payload).encode()).hexdigest()
    return out


# ---------------------------------------------------------------------------
# manifest


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


@dataclass
class Run:
    cfg: dict
    out: Path

    @property
    def manifest_path(self) -> Path:
        return self.out / "manifest.json"

    def read_manifest(self) -> dict:
        if self.manifest_path.exists():
            return json.loads(self.manifest_path.read_text(encoding="utf-8"))
        return {"toolkit_version": __version__, "stages": {}}

    def write_manifest(self, manifest: dict) -> None:
        manifest["toolkit_version"] = __version__
        manifest["config_hash"] = config_hash(self.cfg)
        manifest["config_file"] = "config.json"
        _atomic_write(self.manifest_path, (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode("utf-8"))

    def is_current(self, manifest: dict, stage: str, hashes: dict[str, str]) -> bool:
        rec = manifest["stages"].get(stage)
        return bool(
            rec and rec.get("status") == "done" and rec.get("hash") == hashes[stage]
            and all((self.out / a).exists() for a in rec.get("artifacts", []))
        )

    def path(self, stage: str, *parts: str) -> Path:
        return self.out.joinpath(STAGE_DIRS[stage], *parts)


def _rel(run: Run, paths) -> list[str]:
    return sorted({Path(p).relative_to(run.out).as_posix() for p in paths})


def run_stages(cfg: dict, out: str | Path | None = None, stages=STAGES, force: bool = False) -> dict:
    """Run the selected stages in pipeline order; returns the final manifest."""
    run = Run(cfg, Path(out or cfg["output_dir"]))
    run.out.mkdir(parents=True, exist_ok=True)
    _atomic_write(run.out / "config.json", (json.dumps(cfg, indent=2, sort_keys=True) + "\n").encode("utf-8"))
    hashes = stage_hashes(cfg)
    manifest = run.read_manifest()
    selected = [s for s in STAGES if s in stages]
    for stage in selected:
        if not force and run.is_current(manifest, stage, hashes):
            log.info("%s: up to date, skipped", stage)
            continue
        for up in UPSTREAM[stage]:
            if not run.is_current(manifest, up, hashes):
                raise PrerequisiteError(stage, up)
        stage_dir = run.path(stage)
        if stage_dir.exists():
            shutil.rmtree(stage_dir)
        stage_dir.mkdir(parents=True)
        manifest["stages"][stage] = {"status": "running", "hash": hashes[stage]}
        run.write_manifest(manifest)
        log.info("%s: running", stage)
        t0 = time.perf_counter()
        try:
            paths = STAGE_FUNCS[stage](run)
        except Exception:
            manifest["stages"][stage]["status"] = "failed"
            run.write_manifest(manifest)
            raise
        manifest["stages"][stage] = {
            "status": "done", "hash": hashes[stage],
            "wall_time_s": round(time.perf_counter() - t0, 3),
            "artifacts": _rel(run, paths),
        }
        run.write_manifest(manifest)
        log.info("%s: done in %.1f s", stage, manifest["stages"][stage]["wall_time_s"])
    return manifest


# ---------------------------------------------------------------------------
# stages


def _fmt(v: float) -> str:
    v = float(v)
    return "nan" if math.isnan(v) else repr(v)


def _write_csv(path: Path, header: list[str], rows) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def stage_gen_data(run: Run) -> list[Path]:
    ds_cfg = run.cfg["dataset"]
    seed = derive_seed(run.cfg["seed"], "gen-data")
    if ds_cfg["family"] == "band":
        ds = generate_band_dataset(ds_cfg["n"], tuple(ds_cfg["gap_fraction_range"]), ds_cfg["noise_level"], seed)
    else:
        ds = generate_blob_dataset(ds_cfg["n"], tuple(ds_cfg["blob_radius_range"]), ds_cfg["noise_level"], seed)
    try:
        ds = split_dataset(ds, ds_cfg["split"], derive_seed(run.cfg["seed"], "split"))
    except ValueError as e:
        raise ConfigError(f"dataset.split: {e}") from None
    return save_dataset(ds, run.path("gen-data"))


def _train_stage(run: Run, stage: str, section: str, trainer) -> list[Path]:
    data = load_dataset(run.path("gen-data"))
    tc = _train_config(run.cfg, section)
    if section == "vae":
        model, hist = trainer(data, tc, run.cfg["vae"]["latent_dim"])
    else:
        model, hist = trainer(data, tc)
    d = run.path(stage)
    paths = save_checkpoint(model, d / "checkpoint", {"seed": tc.seed})
    hist.write_csv(d / "loss.csv")
    return paths + [d / "loss.csv"]


def stage_train_classifier(run: Run) -> list[Path]:
    return _train_stage(run, "train-classifier", "classifier", train_classifier)


def stage_train_vae(run: Run) -> list[Path]:
    return _train_stage(run, "train-vae", "vae", train_vae)


# per-process state for the worker pool
_W: dict[str, Any] = {}


def _init_worker(out: str, cfg: dict) -> None:
    run = Run(cfg, Path(out))
    data = load_dataset(run.path("gen-data"))
    _W.clear()
    _W.update(
        run=run, data=data,
        clf=load_checkpoint(run.path("train-classifier", "checkpoint")),
        vae=load_checkpoint(run.path("train-vae", "checkpoint")),
        train_images=data.images[data.indices("train")],
        healthy_mean=data.images[(data.splits == "train") & (data.labels == NORMAL)].mean(axis=0),
    )


def _pool_map(run: Run, fn: Callable, items: list) -> list:
    jobs = min(run.cfg["jobs"], max(len(items), 1))
    if jobs <= 1:
        _init_worker(str(run.out), run.cfg)
        return [fn(i) for i in items]
    with ProcessPoolExecutor(jobs, initializer=_init_worker, initargs=(str(run.out), run.cfg)) as ex:
        return list(ex.map(fn, items, chunksize=1))  # map keeps sample-id order


def select_samples(run: Run) -> tuple[list[int], list[tuple[int, str]]]:
    """Pathological samples of the evaluation split that the classifier gets right."""
    data = _W["data"]
    clf = _W["clf"]
    idx = data.indices(run.cfg["attribution"]["split"])
    idx = idx[data.labels[idx] == PATHOLOGICAL]
    pred = clf.predict_proba(data.images[idx]).argmax(axis=1)
    chosen, skipped = [], []
    for i, p in zip(idx.tolist(), pred.tolist()):
        if p != PATHOLOGICAL:
            skipped.append((i, "misclassified"))
        elif not data.masks[i].any():
            skipped.append((i, "empty mask"))
        else:
            chosen.append(i)
    limit = run.cfg["attribution"]["max_samples"]
    if limit is not None:
        skipped += [(i, "over max_samples") for i in chosen[int(limit):]]
        chosen = chosen[:int(limit)]
    return chosen, sorted(skipped)


def _attribute_one(sample_id: int) -> dict:
    run: Run = _W["run"]
    cfg = run.cfg
    x = _W["data"].images[sample_id]
    clf, vae = _W["clf"], _W["vae"]
    cf_cfg = CfConfig(**cfg["counterfactual"])
    result = find_counterfactual(x, clf, vae, cf_cfg)
    d = run.path("attribute", f"{sample_id:06d}")
    d.mkdir(parents=True, exist_ok=True)
    paths = [d / "counterfactual.cft", d / "cf_history.csv"]
    tensorio.save(paths[0], result.x_star)
    result.write_history_csv(paths[1])
    ctx = BaselineContext(_W["train_images"], clf, vae, cf_cfg, result)
    ig = IgConfig(cfg["ig"]["steps"], PATHOLOGICAL, cfg["ig"]["batch_size"])
    lines = [f"sample_id\t{sample_id}", f"target\t{PATHOLOGICAL}"]
    for variant in cfg["baselines"]:
        seed = derive_seed(cfg["seed"], f"attribute/{variant}/{sample_id}")
        sigma = cfg["attribution"]["blur_sigma"] if variant == "blurred" else (cfg["eg"]["latent_sigma"] if variant == "egcf" else None)
        spec = BaselineSpec(variant, cfg["eg"]["n_baselines"], sigma, seed)
        eg = EgConfig(cfg["eg"]["samples_per_baseline"], "stratified", seed, PATHOLOGICAL, cfg["ig"]["batch_size"])
        amap = attribute(x, spec, ctx, clf, ig, eg, PATHOLOGICAL)
        if not np.all(np.isfinite(amap.raw)):
            raise NumericError(f"non-finite attribution for sample {sample_id}, baseline {variant}")
        for kind, arr in (("raw", amap.raw), ("norm", amap.normalized)):
            p = d / f"{variant}.{kind}.cft"
            tensorio.save(p, arr.astype(np.float32))
            paths.append(p)
        lines.append(f"{variant}\tsteps={amap.steps}\tseed={seed}")
    (d / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    paths.append(d / "manifest.txt")
    return {
        "sample_id": sample_id, "paths": paths, "converged": result.converged,
        "iterations": result.iterations_used, "confidence": result.final_confidence,
    }


def stage_attribute(run: Run) -> list[Path]:
    _init_worker(str(run.out), run.cfg)
    chosen, skipped = select_samples(run)
    if not chosen:
        raise PipelineError("no correctly classified pathological samples to attribute")
    results = _pool_map(run, _attribute_one, chosen)
    paths = [p for r in results for p in r["paths"]]
    index = _write_csv(
        run.path("attribute", "index.csv"),
        ["sample_id", "cf_converged", "cf_iterations", "cf_normal_confidence"],
        [[r["sample_id"], int(r["converged"]), r["iterations"], _fmt(r["confidence"])] for r in results],
    )
    skip = _write_csv(run.path("attribute", "skipped.csv"), ["sample_id", "reason"], skipped)
    return paths + [index, skip]


def _index(run: Run) -> list[int]:
    with open(run.path("attribute", "index.csv"), newline="", encoding="utf-8") as fh:
        return [int(r["sample_id"]) for r in csv.DictReader(fh)]


def metric_columns(imputers) -> list[str]:
    return ["roc_auc", "fpar", "spread"] + [f"auc_topk_{m}" for m in imputers] + [f"auc_masscenter_{m}" for m in imputers]


def _evaluate_one(sample_id: int) -> dict:
    run: Run = _W["run"]
    cfg = run.cfg
    mcfg = cfg["metrics"]
    data = _W["data"]
    clf = _W["clf"]
    x = data.images[sample_id]
    mask = data.masks[sample_id]
    d = run.path("attribute", f"{sample_id:06d}")
    ctx = ImputeContext(tensorio.load(d / "counterfactual.cft"), _W["healthy_mean"], mcfg["blur_sigma"])
    sources = {m: imputation_source(x, m, ctx) for m in mcfg["imputers"]}
    rows, curves = [], []
    for variant in cfg["baselines"]:
        amap = tensorio.load(d / f"{variant}.norm.cft")
        row = {"sample_id": sample_id, "baseline": variant}
        for name, fn in (("roc_auc", lambda a: roc_auc(a, mask)), ("fpar", lambda a: fpar(a, mask)), ("spread", spatial_spread)):
            try:
                row[name] = fn(amap)
            except UndefinedMetric:
                row[name] = math.nan
        for m in mcfg["imputers"]:
            for proto, key in (("topk", "auc_topk"), ("mass_center", "auc_masscenter")):
                try:
                    if proto == "topk":
                        c = topk_ablation_curve(x, amap, clf, PATHOLOGICAL, m, mcfg["topk_fractions"], source=sources[m])
                    else:
                        c = mass_center_ablation_curve(x, amap, clf, PATHOLOGICAL, m, mcfg["mass_center_sizes"], source=sources[m])
                except UndefinedMetric:
                    row[f"{key}_{m}"] = math.nan
                    continue
                row[f"{key}_{m}"] = c.area()
                curves += [(variant, m, proto, float(f), float(v)) for f, v in zip(c.fractions, c.confidences)]
        rows.append(row)
    return {"rows": rows, "curves": curves}


def stage_evaluate(run: Run) -> list[Path]:
    ids = _index(run)
    results = _pool_map(run, _evaluate_one, ids)
    cols = metric_columns(run.cfg["metrics"]["imputers"])
    per_sample = _write_csv(
        run.path("evaluate", "per_sample.csv"), ["sample_id", "baseline"] + cols,
        [[r["sample_id"], r["baseline"]] + [_fmt(r[c]) for c in cols] for res in results for r in res["rows"]],
    )
    curves = _write_csv(
        run.path("evaluate", "curves_per_sample.csv"),
        ["sample_id", "baseline", "imputer", "protocol", "fraction", "confidence"],
        [[sid, *c[:3], _fmt(c[3]), _fmt(c[4])] for sid, res in zip(ids, results) for c in res["curves"]],
    )
    return [per_sample, curves]


def read_per_sample(path: Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        rec = {"sample_id": int(r.pop("sample_id")), "baseline": r.pop("baseline")}
        rec.update({k: float(v) for k, v in r.items()})
        out.append(rec)
    return out


def stage_report(run: Run) -> list[Path]:
    cfg = run.cfg
    rows = read_per_sample(run.path("evaluate", "per_sample.csv"))
    cols = metric_columns(cfg["metrics"]["imputers"])
    rep = aggregate(rows, cols, {"roc_auc": True})
    family = cfg["dataset"]["family"]
    header = ["dataset", "baseline", "n"]
    for m in cols:
        header += [f"{m}_mean", f"{m}_sem", f"{m}_p"]
    table = []
    for b in cfg["baselines"]:
        line = [family, b, max((rep.cells[(b, m)].n for m in cols if (b, m) in rep.cells), default=0)]
        for m in cols:
            cell = rep.cells.get((b, m))
            if cell is None:
                line += ["nan", "nan", ""]
            else:
                line += [_fmt(cell.mean), _fmt(cell.sem), "" if cell.p_value is None else _fmt(cell.p_value)]
        table.append(line)
    agg = _write_csv(run.path("report", "aggregate.csv"), header, table)

    sums: dict[tuple, list[float]] = {}
    with open(run.path("evaluate", "curves_per_sample.csv"), newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            key = (r["baseline"], r["imputer"], r["protocol"], float(r["fraction"]))
            sums.setdefault(key, []).append(float(r["confidence"]))
    order = {b: i for i, b in enumerate(cfg["baselines"])}
    imp_order = {m: i for i, m in enumerate(cfg["metrics"]["imputers"])}
    keys = sorted(sums, key=lambda k: (order[k[0]], imp_order[k[1]], k[2], k[3]))
    curves = _write_csv(
        run.path("report", "curves.csv"), ["baseline", "imputer", "protocol", "fraction", "mean_confidence"],
        [[*k[:3], _fmt(k[3]), _fmt(math.fsum(sums[k]) / len(sums[k]))] for k in keys],
    )
    summary = run.path("report", "summary.md")
    summary.write_text(_summary_table(rep, cfg["baselines"], family), encoding="utf-8")
    return [agg, curves, summary]


def _summary_table(rep, baselines, family: str) -> str:
    shown = [("roc_auc", "ROC-AUC"), ("fpar", "FPAR"), ("spread", "Spread")]
    lines = [f"# {family} dataset", "", "| Baseline | " + " | ".join(n for _, n in shown) + " |",
             "|---|" + "---|" * len(shown)]
    for b in baselines:
        cells = []
        for m, _ in shown:
            c = rep.cells.get((b, m))
            if c is None:
                cells.append("n/a")
                continue
            s = f"{c.mean:.3f} ± {c.sem:.3f}"
            cells.append(f"**{s}**" if rep.best.get(m) == b else s)
        lines.append(f"| {DISPLAY_NAMES[b]} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


STAGE_FUNCS: dict[str, Callable[[Run], list[Path]]] = {
    "gen-data": stage_gen_data,
    "train-classifier": stage_train_classifier,
    "train-vae": stage_train_vae,
    "attribute": stage_attribute,
    "evaluate": stage_evaluate,
    "report": stage_report,
}
