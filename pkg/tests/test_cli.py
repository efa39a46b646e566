"""End-to-end tests for the command-line interface.

Every test drives `cacherec.cli.main` in process and asserts on exit
codes, emitted files, and stream output.
"""

import csv
import json
import types

import numpy as np
import pytest

from cacherec import cli, experiments
from cacherec.experiments import RESULT_COLUMNS, TRACE_COLUMNS
from cacherec.serialize import file_sha256, load_matrix


def write_scenario(tmp_path, **overrides):
    payload = {
        "dataset": {"kind": "synthetic", "size": 12, "mean_related": 6.0, "seed": 3},
        "list_sizes": [2],
        "zipf_exponents": [0.7],
        "qualities": [0.5],
        "cache_fractions": [0.25],
        "follow_probs": [0.5],
        "policies": ["norec"],
        "session": {"total_requests": 400, "session_param": 40},
        "seed": 7,
    }
    payload.update(overrides)
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(payload), encoding="utf-8")
    return path


def lastfm_file(tmp_path, nodes=6):
    # complete graph: every node keeps degree nodes-1 after symmetrization
    ids = [f"s{i}" for i in range(nodes)]
    lines = [
        f"{ids[i]}\t{ids[j]}\t0.8"
        for i in range(nodes)
        for j in range(i + 1, nodes)
    ]
    path = tmp_path / "sim.tsv"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_results(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


class TestRunCommand:
    def test_run_writes_results(self, tmp_path, capsys):
        cfg = write_scenario(tmp_path)
        out = tmp_path / "out"
        rc = cli.main(["run", "--config", str(cfg), "--out", str(out)])
        assert rc == 0
        records = read_results(out / "results.csv")
        assert [r["policy"] for r in records] == ["norec"]
        captured = capsys.readouterr()
        assert "(1 rows, 0 failed)" in captured.out

    def test_run_defaults_to_working_directory(self, tmp_path, monkeypatch):
        cfg = write_scenario(tmp_path)
        monkeypatch.chdir(tmp_path)
        rc = cli.main(["run", "--config", str(cfg)])
        assert rc == 0
        assert (tmp_path / "results.csv").exists()

    def test_policies_override(self, tmp_path):
        cfg = write_scenario(tmp_path)
        out = tmp_path / "out"
        rc = cli.main(
            ["run", "--config", str(cfg), "--out", str(out),
             "--policies", "norec,myopic"]
        )
        assert rc == 0
        records = read_results(out / "results.csv")
        assert [r["policy"] for r in records] == ["norec", "myopic"]

    def test_seed_override_changes_row_seeds(self, tmp_path):
        cfg = write_scenario(tmp_path)
        seeds = []
        for seed in ("1", "2"):
            out = tmp_path / f"out{seed}"
            rc = cli.main(
                ["run", "--config", str(cfg), "--out", str(out), "--seed", seed]
            )
            assert rc == 0
            seeds.append(read_results(out / "results.csv")[0]["seed"])
        assert seeds[0] != seeds[1]

    def test_same_seed_reproduces_results(self, tmp_path):
        cfg = write_scenario(tmp_path)
        texts = []
        for name in ("a", "b"):
            out = tmp_path / name
            rc = cli.main(
                ["run", "--config", str(cfg), "--out", str(out), "--seed", "5"]
            )
            assert rc == 0
            records = read_results(out / "results.csv")
            for r in records:
                r.pop("wall_millis")
            texts.append(records)
        assert texts[0] == texts[1]

    def test_partial_failure_exits_two(self, tmp_path, capsys, monkeypatch):
        def boom(inputs):
            raise RuntimeError("forced failure")

        monkeypatch.setattr(experiments, "myopic_solve", boom)
        cfg = write_scenario(tmp_path, policies=["norec", "myopic"])
        out = tmp_path / "out"
        rc = cli.main(["run", "--config", str(cfg), "--out", str(out)])
        assert rc == 2
        captured = capsys.readouterr()
        assert "(2 rows, 1 failed)" in captured.out
        assert "grid 0 myopic: RuntimeError: forced failure" in captured.err
        records = read_results(out / "results.csv")
        by_policy = {r["policy"]: r for r in records}
        assert by_policy["myopic"]["error"] == "RuntimeError: forced failure"
        assert by_policy["norec"]["error"] == ""

    def test_missing_config_exits_one(self, tmp_path, capsys):
        rc = cli.main(["run", "--config", str(tmp_path / "absent.json")])
        assert rc == 1
        assert "config error" in capsys.readouterr().err

    def test_invalid_json_exits_one(self, tmp_path, capsys):
        path = tmp_path / "scenario.json"
        path.write_text("{oops", encoding="utf-8")
        rc = cli.main(["run", "--config", str(path)])
        assert rc == 1
        assert "config error" in capsys.readouterr().err

    def test_unknown_config_key_exits_one(self, tmp_path):
        path = tmp_path / "scenario.json"
        path.write_text(
            json.dumps({"dataset": {"kind": "synthetic", "size": 8}, "turbo": 1}),
            encoding="utf-8",
        )
        assert cli.main(["run", "--config", str(path)]) == 1

    def test_bad_policies_override_exits_one(self, tmp_path, capsys):
        cfg = write_scenario(tmp_path)
        rc = cli.main(
            ["run", "--config", str(cfg), "--out", str(tmp_path / "o"),
             "--policies", "norec,bogus"]
        )
        assert rc == 1
        assert "config error" in capsys.readouterr().err


class TestThreadResolution:
    def test_threads_flag(self, tmp_path):
        cfg = write_scenario(tmp_path)
        rc = cli.main(
            ["run", "--config", str(cfg), "--out", str(tmp_path / "o"),
             "--threads", "2"]
        )
        assert rc == 0

    def test_threads_env_fallback(self, tmp_path, monkeypatch):
        monkeypatch.setenv("CARS_THREADS", "2")
        cfg = write_scenario(tmp_path)
        rc = cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")])
        assert rc == 0

    def test_threads_env_not_integer_exits_one(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("CARS_THREADS", "two")
        cfg = write_scenario(tmp_path)
        rc = cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")])
        assert rc == 1
        assert "CARS_THREADS" in capsys.readouterr().err

    def test_threads_below_one_exits_one(self, tmp_path):
        cfg = write_scenario(tmp_path)
        rc = cli.main(
            ["run", "--config", str(cfg), "--out", str(tmp_path / "o"),
             "--threads", "0"]
        )
        assert rc == 1

    def test_flag_wins_over_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("CARS_THREADS", "nonsense")
        cfg = write_scenario(tmp_path)
        rc = cli.main(
            ["run", "--config", str(cfg), "--out", str(tmp_path / "o"),
             "--threads", "1"]
        )
        assert rc == 0


def trace_scenario(tmp_path, **overrides):
    return write_scenario(
        tmp_path,
        dataset={"kind": "synthetic", "size": 6, "mean_related": 5.0, "seed": 2},
        cache_fractions=[1 / 6],
        **overrides,
    )


class TestTraceCommand:
    def test_trace_to_stdout(self, tmp_path, capsys):
        cfg = trace_scenario(tmp_path)
        rc = cli.main(["trace", "--config", str(cfg)])
        assert rc == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0] == ",".join(TRACE_COLUMNS)
        assert len(lines) >= 2

    def test_trace_to_file(self, tmp_path, capsys):
        cfg = trace_scenario(tmp_path)
        out = tmp_path / "run"
        rc = cli.main(["trace", "--config", str(cfg), "--out", str(out)])
        assert rc == 0
        assert "iterates" in capsys.readouterr().out
        with open(out / "trace.csv", newline="", encoding="utf-8") as fh:
            records = list(csv.reader(fh))
        assert records[0] == list(TRACE_COLUMNS)
        assert len(records) >= 2

    def test_trace_failure_exits_two(self, tmp_path, capsys, monkeypatch):
        fake = types.SimpleNamespace(message="subproblem failed at iteration 1")
        monkeypatch.setattr(experiments, "cars_solve", lambda *a, **k: fake)
        cfg = trace_scenario(tmp_path)
        rc = cli.main(["trace", "--config", str(cfg)])
        assert rc == 2
        assert "trace failed" in capsys.readouterr().err

    def test_trace_config_error_exits_one(self, tmp_path):
        assert cli.main(["trace", "--config", str(tmp_path / "absent.json")]) == 1


class TestPrepDatasetCommand:
    def test_prep_lastfm_outputs(self, tmp_path, capsys):
        src = lastfm_file(tmp_path)
        out = tmp_path / "prepped"
        rc = cli.main(["prep-dataset", "--lastfm", str(src), "--out", str(out)])
        assert rc == 0
        assert "similarity.txt" in capsys.readouterr().out
        u = load_matrix(out / "similarity.txt")
        assert np.asarray(u).shape == (6, 6)
        kept = (out / "kept_ids.txt").read_text(encoding="utf-8").splitlines()
        assert kept == [f"s{i}" for i in range(6)]
        prov = json.loads((out / "provenance.json").read_text(encoding="utf-8"))
        assert prov["kind"] == "lastfm"
        assert prov["source_sha256"] == file_sha256(src)

    def test_prep_movielens_outputs(self, tmp_path):
        rng = np.random.default_rng(8)
        src = tmp_path / "ratings.csv"
        rows = ["userId,movieId,rating,timestamp"]
        for user in range(1, 13):
            for item in rng.choice(np.arange(10, 30), size=14, replace=False):
                rows.append(f"{user},{item},{rng.integers(1, 11) * 0.5},0")
        src.write_text("\n".join(rows) + "\n", encoding="utf-8")
        out = tmp_path / "prepped"
        rc = cli.main(
            ["prep-dataset", "--movielens", str(src), "--out", str(out),
             "--theta", "0.3", "--list-size", "2"]
        )
        assert rc == 0
        prov = json.loads((out / "provenance.json").read_text(encoding="utf-8"))
        assert prov["kind"] == "movielens"
        assert prov["source_sha256"] == file_sha256(src)

    def test_prep_missing_input_exits_one(self, tmp_path, capsys):
        rc = cli.main(
            ["prep-dataset", "--lastfm", str(tmp_path / "absent.tsv"),
             "--out", str(tmp_path / "o")]
        )
        assert rc == 1
        assert "cannot read input" in capsys.readouterr().err

    def test_prep_everything_pruned_exits_two(self, tmp_path, capsys):
        # degree 5 in a 6-node complete graph cannot beat a floor of 5
        src = lastfm_file(tmp_path)
        rc = cli.main(
            ["prep-dataset", "--lastfm", str(src), "--out", str(tmp_path / "o"),
             "--list-size", "5"]
        )
        assert rc == 2
        assert "preparation failed" in capsys.readouterr().err

    def test_prep_requires_a_source(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            cli.main(["prep-dataset", "--out", str(tmp_path / "o")])
        assert exc.value.code == 1

    def test_prep_rejects_two_sources(self, tmp_path):
        src = lastfm_file(tmp_path)
        with pytest.raises(SystemExit) as exc:
            cli.main(
                ["prep-dataset", "--lastfm", str(src), "--movielens", str(src),
                 "--out", str(tmp_path / "o")]
            )
        assert exc.value.code == 1


class TestParsing:
    def test_unknown_subcommand_exits_one(self):
        with pytest.raises(SystemExit) as exc:
            cli.main(["frobnicate"])
        assert exc.value.code == 1

    def test_missing_subcommand_exits_one(self):
        with pytest.raises(SystemExit) as exc:
            cli.main([])
        assert exc.value.code == 1

    def test_run_requires_config(self):
        with pytest.raises(SystemExit) as exc:
            cli.main(["run"])
        assert exc.value.code == 1

    def test_console_script_registered(self):
        from importlib.metadata import entry_points

        eps = entry_points(group="console_scripts")
        match = [ep for ep in eps if ep.name == "cacherec"]
        assert match and match[0].value == "cacherec.cli:main"
