import csv
import json
import zlib
from pathlib import Path

import numpy as np
import pytest

from cfbaselines import cli, pipeline
from cfbaselines.pipeline import (
    ConfigError, PrerequisiteError, derive_seed, load_config, parse_config, read_per_sample, run_stages,
)

TINY = {
    "schema_version": 1,
    "seed": 11,
    "dataset": {"n": 100},
    "classifier": {"epochs": 15},
    "vae": {"epochs": 3, "latent_dim": 8},
    "ig": {"steps": 8},
    "eg": {"n_baselines": 4, "samples_per_baseline": 2},
    "baselines": ["cf", "zeros", "eg", "egcf"],
    "attribution": {"max_samples": 4},
    "metrics": {"imputers": ["mean", "counterfactual"], "topk_fractions": [0.1, 0.5], "mass_center_sizes": [8, 32]},
}


def _write_cfg(path: Path, cfg: dict) -> Path:
    path.write_text(json.dumps(cfg, indent=2), encoding="utf-8")
    return path


def _tree_bytes(root: Path) -> dict[str, bytes]:
    """Every file except the manifest (it records wall times)."""
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file() and p.name != "manifest.json"}


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    cfg_path = _write_cfg(root / "tiny.json", TINY)
    out = root / "run"
    assert cli.main(["run", "--config", str(cfg_path), "--out", str(out)]) == 0
    return cfg_path, out


class TestConfig:
    def test_seed_required(self):
        with pytest.raises(ConfigError, match="seed"):
            parse_config('{"schema_version": 1}')

    def test_unknown_key_reports_line(self):
        text = '{\n  "seed": 1,\n  "vae": {\n    "betta": 2\n  }\n}'
        with pytest.raises(ConfigError, match=r"vae\.betta.*line 4"):
            parse_config(text)

    def test_wrong_type_and_range(self):
        with pytest.raises(ConfigError, match="vae.epochs"):
            parse_config('{"seed": 1, "vae": {"epochs": "ten"}}')
        with pytest.raises(ConfigError):
            parse_config('{"seed": 1, "counterfactual": {"threshold": 2.0}}')
        with pytest.raises(ConfigError):
            parse_config('{"seed": 1, "baselines": ["median"]}')
        with pytest.raises(ConfigError, match="topk_fractions"):
            parse_config('{"seed": 1, "metrics": {"topk_fractions": [0.0, 0.1]}}')
        with pytest.raises(ConfigError, match="mass_center_sizes"):
            parse_config('{"seed": 1, "metrics": {"mass_center_sizes": [8, 80]}}')

    def test_schema_version_and_json_errors(self):
        with pytest.raises(ConfigError, match="schema_version"):
            parse_config('{"schema_version": 9, "seed": 1}')
        with pytest.raises(ConfigError, match="line 2"):
            parse_config('{"seed": 1,\n oops}')

    def test_defaults_filled(self):
        cfg = parse_config('{"seed": 3}')
        assert cfg["counterfactual"]["max_iterations"] == 50
        assert cfg["ig"]["steps"] == 64 and cfg["eg"]["n_baselines"] == 50
        assert cfg["metrics"]["blur_sigma"] == 20.0

    def test_overrides(self, tmp_path):
        p = _write_cfg(tmp_path / "c.json", {"seed": 1})
        cfg = load_config(p, {"seed": 9, "baselines": ["zeros"], "jobs": None})
        assert cfg["seed"] == 9 and cfg["baselines"] == ["zeros"] and cfg["jobs"] == 1

    def test_hash_ignores_output_dir_and_jobs(self):
        a = parse_config('{"seed": 1}')
        b = parse_config('{"seed": 1, "output_dir": "elsewhere", "jobs": 3}')
        assert pipeline.config_hash(a) == pipeline.config_hash(b)
        c = parse_config('{"seed": 2}')
        assert pipeline.config_hash(a) != pipeline.config_hash(c)

    def test_stage_hash_propagates_downstream_only(self):
        a = pipeline.stage_hashes(parse_config('{"seed": 1}'))
        b = pipeline.stage_hashes(parse_config('{"seed": 1, "vae": {"epochs": 5}}'))
        assert a["gen-data"] == b["gen-data"] and a["train-classifier"] == b["train-classifier"]
        assert all(a[s] != b[s] for s in ("train-vae", "attribute", "evaluate", "report"))


class TestSeeds:
    def test_derive_seed(self):
        assert derive_seed(0, "x") == zlib.crc32(b"x")
        assert derive_seed(5, "a") != derive_seed(5, "b")
        assert derive_seed(5, "a") == derive_seed(5, "a")
        assert 0 <= derive_seed(2**40 + 7, "tag") < 2**32


class TestRun:
    def test_manifest_complete(self, tiny_run):
        _, out = tiny_run
        m = json.loads((out / "manifest.json").read_text())
        assert m["toolkit_version"] and m["config_hash"] and m["config_file"] == "config.json"
        assert set(m["stages"]) == set(pipeline.STAGES)
        for rec in m["stages"].values():
            assert rec["status"] == "done" and rec["wall_time_s"] >= 0
            assert all((out / a).exists() for a in rec["artifacts"])

    def test_attribution_layout(self, tiny_run):
        _, out = tiny_run
        ids = pipeline._index(pipeline.Run(load_config(tiny_run[0]), out))
        assert 1 <= len(ids) <= 4
        d = out / "attributions" / f"{ids[0]:06d}"
        names = {p.name for p in d.iterdir()}
        for v in TINY["baselines"]:
            assert {f"{v}.raw.cft", f"{v}.norm.cft"} <= names
        assert {"counterfactual.cft", "cf_history.csv", "manifest.txt"} <= names

    def test_rerun_skips_and_is_identical(self, tiny_run):
        cfg_path, out = tiny_run
        before = _tree_bytes(out)
        times = {p: p.stat().st_mtime_ns for p in out.rglob("*.cft")}
        assert cli.main(["run", "--config", str(cfg_path), "--out", str(out)]) == 0
        assert _tree_bytes(out) == before
        assert all(p.stat().st_mtime_ns == t for p, t in times.items())

    def test_parallel_matches_serial(self, tiny_run, tmp_path):
        cfg_path, out = tiny_run
        other = tmp_path / "par"
        assert cli.main(["run", "--config", str(cfg_path), "--out", str(other), "--jobs", "2"]) == 0
        a, b = _tree_bytes(out), _tree_bytes(other)
        a.pop("config.json"), b.pop("config.json")  # jobs is recorded there
        assert a == b

    def test_aggregate_means_match_per_sample(self, tiny_run):
        _, out = tiny_run
        rows = read_per_sample(out / "evaluation" / "per_sample.csv")
        with open(out / "report" / "aggregate.csv", newline="", encoding="utf-8") as fh:
            agg = list(csv.DictReader(fh))
        assert {r["baseline"] for r in agg} == set(TINY["baselines"])
        for r in agg:
            vals = np.array([s["roc_auc"] for s in rows if s["baseline"] == r["baseline"]], float)
            assert float(r["roc_auc_mean"]) == pytest.approx(np.nanmean(vals), rel=1e-9)
            assert int(r["n"]) == len(vals)

    def test_text_outputs_portable(self, tiny_run):
        _, out = tiny_run
        for p in list(out.rglob("*.csv")) + list(out.rglob("*.md")) + list(out.rglob("*.json")):
            raw = p.read_bytes()
            raw.decode("utf-8")
            assert b"\r\n" not in raw, p
        with open(out / "evaluation" / "per_sample.csv", newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                for k, v in row.items():
                    if k not in ("sample_id", "baseline") and v != "nan":
                        float(v)
                        assert "," not in v

    def test_summary_bolds_a_winner(self, tiny_run):
        text = (tiny_run[1] / "report" / "summary.md").read_text(encoding="utf-8")
        assert "|" in text and "**" in text


class TestExitCodes:
    def test_missing_seed_exits_2_without_output(self, tmp_path):
        p = _write_cfg(tmp_path / "c.json", {"schema_version": 1})
        out = tmp_path / "never"
        assert cli.main(["gen-data", "--config", str(p), "--out", str(out)]) == 2
        assert not out.exists()

    def test_missing_config_file(self, tmp_path):
        assert cli.main(["gen-data", "--config", str(tmp_path / "nope.json")]) == 2

    def test_missing_prerequisite_exits_3(self, tmp_path, capsys):
        p = _write_cfg(tmp_path / "c.json", {"seed": 1})
        assert cli.main(["train-vae", "--config", str(p), "--out", str(tmp_path / "r")]) == 3
        assert "cfbaselines gen-data" in capsys.readouterr().err
        with pytest.raises(PrerequisiteError):
            run_stages(load_config(p), tmp_path / "r2", ["evaluate"])

    def test_numeric_failure_exits_4(self, tmp_path, monkeypatch):
        from cfbaselines.optim import NumericError

        def boom(run):
            raise NumericError("loss became nan")

        monkeypatch.setitem(pipeline.STAGE_FUNCS, "gen-data", boom)
        p = _write_cfg(tmp_path / "c.json", {"seed": 1})
        assert cli.main(["gen-data", "--config", str(p), "--out", str(tmp_path / "r")]) == 4
        m = json.loads((tmp_path / "r" / "manifest.json").read_text())
        assert m["stages"]["gen-data"]["status"] == "failed"

    def test_corrupt_map_exits_2(self, tmp_path):
        bad = tmp_path / "bad.cft"
        bad.write_bytes(b"XXXX" + b"\0" * 20)
        assert cli.main(["render", str(bad)]) == 2
