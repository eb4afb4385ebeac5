"""Shared fixtures.

The reference band run (600 samples, all seven baselines) is built once per
session and reused by every test that needs trained models. Set
``CFBASELINES_REFERENCE_RUN`` to an existing, completed output directory of
``configs/band.json`` to skip rebuilding it during development.
"""

import os
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

from cfbaselines.models import load_checkpoint
from cfbaselines.pipeline import load_config, run_stages
from cfbaselines.synth import load_dataset

REPO = Path(__file__).resolve().parents[1]
BAND_CONFIG = REPO / "configs" / "band.json"


@dataclass
class RunInfo:
    cfg: dict
    out: Path
    wall_time: float


def build_run(out: Path) -> RunInfo:
    cfg = load_config(BAND_CONFIG)
    t0 = time.perf_counter()
    run_stages(cfg, out)
    return RunInfo(cfg, out, time.perf_counter() - t0)


@pytest.fixture(scope="session")
def band_run(tmp_path_factory) -> RunInfo:
    reuse = os.environ.get("CFBASELINES_REFERENCE_RUN")
    if reuse:
        return RunInfo(load_config(BAND_CONFIG), Path(reuse), float("nan"))
    return build_run(tmp_path_factory.mktemp("band_run_a"))


@dataclass
class Trained:
    data: object
    clf: object
    vae: object


@pytest.fixture(scope="session")
def trained(band_run) -> Trained:
    out = band_run.out
    return Trained(
        load_dataset(out / "data"),
        load_checkpoint(out / "classifier" / "checkpoint"),
        load_checkpoint(out / "vae" / "checkpoint"),
    )


@pytest.fixture(scope="session")
def pathological_test_ids(trained) -> np.ndarray:
    d = trained.data
    idx = d.indices("test")
    return idx[d.labels[idx] == 1]
