import csv
import json
import math

import pytest

from diffvar import harness
from diffvar.errors import ConfigError, NumericError
from diffvar.harness import (
    SUMMARY_COLUMNS,
    BatchFailure,
    CheckReport,
    ExperimentConfig,
    moments_check,
    parse_summary_text,
    rate_check,
    replicate_seed,
    reproduce_table1,
    run_experiment,
    whitening_check,
    write_outputs,
)


def small(**kw):
    base = dict(n=(60,), replicates=3, seed=11)
    base.update(kw)
    return ExperimentConfig(**base)


class TestConfig:
    def test_defaults(self):
        c = ExperimentConfig()
        assert c.replicates == 100 and c.phi == 0.01 and c.h == 1 and c.convention == "endpoint"
        assert c.kernel().order == 2 and c.kernel().degree == 6

    @pytest.mark.parametrize(
        "kw",
        [
            dict(replicates=0),
            dict(n=(10,)),
            dict(n=()),
            dict(sigma="cosine"),
            dict(sigma="constant:-1"),
            dict(sigma="constant:x"),
            dict(theta="0.5"),
            dict(kernel_order=3),
            dict(phi=-1.0),
            dict(mode="fit"),
            dict(seed=-1),
            dict(convention="grid"),
            dict(boundary_policy="mirror"),
        ],
    )
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            ExperimentConfig(**kw)

    def test_from_mapping(self):
        c = ExperimentConfig.from_mapping({"sigma": "step", "theta": "independent", "n": "100, 200", "kernel-order": 6})
        assert c.theta == "indep" and c.n == (100, 200) and c.kernel_order == 6
        assert ExperimentConfig.from_mapping({"theta": 0.01, "n": [100]}).theta == "0.01"
        with pytest.raises(ConfigError):
            ExperimentConfig.from_mapping({"bandwith": 0.1})
        with pytest.raises(ConfigError):
            ExperimentConfig.from_mapping({"replicates": 2.5})

    def test_load_config_file(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text("sigma: step\nn: [100, 200]\nphi: 0.02\n")
        assert harness.load_config_file(p) == {"sigma": "step", "n": [100, 200], "phi": 0.02}
        q = tmp_path / "c.json"
        q.write_text(json.dumps({"theta": "indep"}))
        assert harness.load_config_file(q) == {"theta": "indep"}
        bad = tmp_path / "bad.yaml"
        bad.write_text("nested:\n  a: 1\n")
        with pytest.raises(ConfigError):
            harness.load_config_file(bad)
        with pytest.raises(ConfigError):
            harness.load_config_file(tmp_path / "missing.yaml")


class TestRunExperiment:
    def test_rows_and_summary(self):
        r = run_experiment(small(n=(60, 80)), ("oracle", "select"))
        assert len(r.records) == 2 * 2 * 3
        assert all(rec.ok for rec in r.records)
        summary = r.summary()
        assert [tuple(row) for row in summary] == [SUMMARY_COLUMNS] * 4
        assert {row["method"] for row in summary} == {"Diff-oracle", "Diff-selected"}
        for row in summary:
            lam = r.values("bandwidth", method=row["method"], n=row["n"])
            assert row["mean"] == pytest.approx(lam.mean()) and row["sd"] == pytest.approx(lam.std(ddof=1))

    def test_shared_seeds_across_methods(self):
        r = run_experiment(small(), ("oracle", "select"))
        seeds = {m: [x.seed for x in r.rows(method=m)] for m in ("oracle", "select")}
        assert seeds["oracle"] == seeds["select"] == [11, 12, 13]

    def test_unique_seeds_across_cells(self):
        out = reproduce_table1(small(n=(60, 80), replicates=2))
        seen = set()
        for res in out.values():
            for rec in res.rows(method="oracle"):
                key = rec.seed
                assert key not in seen
                seen.add(key)
        assert len(seen) == 2 * 3 * 2 * 2

    def test_seed_formula(self):
        assert replicate_seed(100, 0, 50, 3) == 103
        assert replicate_seed(100, 2, 50, 3) == 203

    def test_parallel_matches_serial(self):
        a = run_experiment(small(workers=1), ("oracle",))
        b = run_experiment(small(workers=2), ("oracle",))
        assert [x.to_dict() for x in a.records] == [x.to_dict() for x in b.records]

    def test_replicate_errors_recorded(self, monkeypatch):
        real = harness.oracle_bandwidth
        calls = {"k": 0}

        def flaky(*args, **kwargs):
            calls["k"] += 1
            if calls["k"] == 2:
                raise NumericError("synthetic failure")
            return real(*args, **kwargs)

        monkeypatch.setattr(harness, "oracle_bandwidth", flaky)
        r = run_experiment(small(replicates=10), ("oracle",))
        bad = [x for x in r.records if not x.ok]
        assert len(bad) == 1 and "synthetic failure" in bad[0].error and math.isnan(bad[0].bandwidth)
        assert r.summary()[0]["mean"] == pytest.approx(r.values("bandwidth").mean())

    def test_batch_fails_above_ten_percent(self, monkeypatch):
        def broken(*args, **kwargs):
            raise NumericError("always")

        monkeypatch.setattr(harness, "oracle_bandwidth", broken)
        with pytest.raises(BatchFailure):
            run_experiment(small(replicates=5), ("oracle",))

    def test_mode_required(self):
        with pytest.raises(ConfigError):
            run_experiment(small(mode="moments-check"))


class TestOutputs:
    def test_files_and_agreement(self, tmp_path):
        r = run_experiment(small(dump_curves=1), ("oracle", "select"))
        paths = write_outputs(r, tmp_path)
        with paths["summary"].open() as fh:
            rows = list(csv.DictReader(fh))
        assert list(rows[0]) == list(SUMMARY_COLUMNS)
        text_rows = parse_summary_text(paths["summary_text"].read_text())
        assert len(text_rows) == len(rows)
        for a, b in zip(rows, text_rows):
            assert a["method"] == b["method"] and int(a["n"]) == b["n"] and a["theta"] == b["theta"]
            assert abs(float(a["mean"]) - b["mean"]) < 1e-9 and abs(float(a["sd"]) - b["sd"]) < 1e-9
        curves = sorted((tmp_path / "curves").iterdir())
        assert len(curves) == 2
        with curves[0].open() as fh:
            data = list(csv.reader(fh))
        assert data[0] == ["s", "true_sd", "estimated_sd"] and len(data) == 101
        assert paths["timing"].exists() and paths["metadata"].exists()

    def test_json_lines(self, tmp_path):
        r = run_experiment(small(), ("oracle",))
        paths = write_outputs(r, tmp_path, "json-lines")
        lines = paths["runs"].read_text().splitlines()
        assert len(lines) == 3 and json.loads(lines[0])["method"] == "Diff-oracle"
        with pytest.raises(ConfigError):
            write_outputs(r, tmp_path, "xml")

    def test_byte_identical_reruns(self, tmp_path):
        cfg = small(replicates=1, dump_curves=1)
        for sub in ("a", "b"):
            write_outputs(run_experiment(cfg, ("oracle", "select")), tmp_path / sub)
        files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
        for rel in files:
            if rel.name.startswith("timing"):
                continue
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel


class TestChecks:
    def test_moments_check_passes(self):
        rep = moments_check(ExperimentConfig(n=(100,), mc_replicates=4000, theta="0.1"))
        assert rep.passed, rep.render()
        names = [e.name for e in rep.entries]
        assert "closed form vs Isserlis |diff|" in names
        assert any("expansion" in n for n in names)

    def test_white_noise_chi_square_case(self):
        rep = moments_check(ExperimentConfig(n=(100,), mc_replicates=4000, sigma="constant:1", theta="indep"))
        assert rep.passed, rep.render()
        assert not any("expansion" in e.name for e in rep.entries)

    def test_rate_check(self):
        rep = rate_check(ExperimentConfig(n=(60, 120, 240), replicates=8, theta="0.1"))
        assert rep.entries[0].name.startswith("log mean DMSE")
        decay = [e for e in rep.entries if "decay" in e.name]
        assert len(decay) == 2 and all(e.passed for e in decay)
        with pytest.raises(ConfigError):
            rate_check(ExperimentConfig(n=(60, 120)))

    def test_rate_check_independent_constant(self):
        rep = rate_check(ExperimentConfig(n=(100, 200, 500), replicates=10, sigma="constant:1", theta="indep"))
        assert rep.passed, rep.render()

    def test_whitening_check_small(self):
        assert whitening_check(length=20, reps=4000, seed=1).passed

    def test_report_render(self):
        rep = CheckReport("x")
        rep.add("a", 1.0, 2.0, True)
        rep.add("b", 3.0, 2.0, False, "why")
        assert not rep.passed
        text = rep.render()
        assert text.startswith("x: FAIL") and "[FAIL] b" in text and "(why)" in text
        assert rep.to_dict()["entries"][1]["passed"] is False
