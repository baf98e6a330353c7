import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from batchbo.benchmarks import get_benchmark
from batchbo.cli import main
from batchbo.domain import RngStream, RunConfig
from batchbo.harness import (
    TRACE_HEADER,
    ExperimentResult,
    SessionError,
    UsageError,
    ask,
    config_from_mapping,
    init_session,
    read_config_file,
    run_experiment,
    tell,
    write_summary,
    write_traces,
)
from batchbo.strategies import IterationRecord, RunHistory, run_loop

SMALL = ["--function", "forrester-1", "--strategy", "cl-ucb", "--iters", "3", "--replicates", "3", "--batch", "2"]


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


class TestRun:
    def test_outputs(self, tmp_path, capsys):
        assert main(["run", *SMALL, "--out", str(tmp_path)]) == 0
        rows = read_rows(tmp_path / "traces.csv")
        assert tuple(rows[0]) == TRACE_HEADER
        assert len(rows) - 1 == 3 * (3 + 1)
        raw = (tmp_path / "traces.csv").read_bytes()
        assert b"\r" not in raw
        for r in range(3):
            mine = [row for row in rows[1:] if row[0] == str(r)]
            assert [int(row[1]) for row in mine] == [0, 1, 2, 3]
            cum = [int(row[3]) for row in mine]
            best = [float(row[4]) for row in mine]
            assert cum == [3, 5, 7, 9]
            assert best == sorted(best)
            assert all(row[5] == "" for row in mine)
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["config"]["strategy"] == "cl-ucb"
        assert summary["total_evaluations"] == [9, 9, 9]
        assert len(summary["median_best"]) == 4
        assert "median best" in capsys.readouterr().out

    def test_byte_identical_repeat(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["run", *SMALL, "--seed", "5", "--out", str(a)]) == 0
        assert main(["run", *SMALL, "--seed", "5", "--out", str(b)]) == 0
        assert (a / "traces.csv").read_bytes() == (b / "traces.csv").read_bytes()
        assert (a / "summary.json").read_bytes() == (b / "summary.json").read_bytes()

    def test_timing_column(self, tmp_path):
        assert main(["run", *SMALL, "--timing", "--out", str(tmp_path)]) == 0
        rows = read_rows(tmp_path / "traces.csv")
        assert all(float(row[5]) >= 0 for row in rows[1:])
        assert len(json.loads((tmp_path / "summary.json").read_text())["mean_wall_ms"]) == 4

    def test_config_file(self, tmp_path):
        cfg = tmp_path / "exp.cfg"
        cfg.write_text("# small run\nfunction = forrester-1\nstrategy=ucb\niters=2\nreplicates=2\n"
                       "beta_sqrt = 1.5\nout = %s\n" % (tmp_path / "o"))
        values = read_config_file(cfg)
        assert values["beta-sqrt"] == "1.5"
        assert main(["run", "--config", str(cfg), "--iters", "1"]) == 0
        summary = json.loads((tmp_path / "o" / "summary.json").read_text())
        assert summary["config"]["iterations"] == 1 and summary["config"]["beta_sqrt"] == 1.5
        assert summary["total_evaluations"] == [4, 4]

    @pytest.mark.parametrize("argv", [
        ["run", "--function", "branin-2", "--out", "x"],
        ["run", "--function", "forrester-1", "--strategy", "thompson", "--out", "x"],
        ["run", "--function", "forrester-1"],
        ["run", "--function", "forrester-1", "--iters", "zero", "--out", "x"],
        ["run", "--function", "forrester-1", "--iters", "0", "--out", "x"],
        ["frobnicate"],
        [],
    ])
    def test_usage_errors(self, argv, tmp_path, monkeypatch, capsys):
        monkeypatch.chdir(tmp_path)
        assert main(argv) == 2
        assert "error" in capsys.readouterr().err

    def test_unknown_name_lists_registry(self, capsys):
        main(["run", "--function", "branin-2", "--out", "x"])
        assert "hartmann-6" in capsys.readouterr().err

    def test_bad_config_key(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("function=forrester-1\ncolour=blue\n")
        with pytest.raises(UsageError):
            read_config_file(cfg)

    def test_module_entry_point(self, tmp_path):
        proc = subprocess.run([sys.executable, "-m", "batchbo", "run", "--function", "nope-1", "--out",
                               str(tmp_path)], capture_output=True, text=True)
        assert proc.returncode == 2


def test_ucb_histories_are_sequential():
    config = config_from_mapping({"function": "forrester-1", "strategy": "ucb", "iters": "3", "replicates": "2"})
    result = run_experiment(config)
    assert len(result.histories) == 2
    for h in result.histories:
        assert np.all(h.batch_sizes == 1)
    assert result.median_best.shape == (4,)


def test_jobs_do_not_change_results():
    base = {"function": "forrester-1", "strategy": "rand-ucb", "iters": "2", "replicates": "2"}
    serial = run_experiment(config_from_mapping(base))
    parallel = run_experiment(config_from_mapping({**base, "jobs": "2"}))
    np.testing.assert_array_equal(serial.best_matrix, parallel.best_matrix)


def fake_history(bests, n0=3):
    h = RunHistory("ucb")
    for t, b in enumerate(bests):
        h.records.append(IterationRecord(t, np.zeros((1, 1)), np.zeros(1), b, n0 + t, 1.0))
    return h


def test_aggregation_against_sort_oracle():
    rng = np.random.default_rng(0)
    T = 5
    runs = [np.maximum.accumulate(rng.normal(size=T + 1)) for _ in range(7)]
    result = ExperimentResult(RunConfig("forrester-1", "ucb", iterations=T, replicates=7),
                              [fake_history(b) for b in runs])
    for t in range(T + 1):
        col = sorted(r[t] for r in runs)
        assert result.median_best[t] == col[3]
    even = ExperimentResult(RunConfig("forrester-1", "ucb", iterations=T, replicates=6),
                            [fake_history(b) for b in runs[:6]])
    for t in range(T + 1):
        col = sorted(r[t] for r in runs[:6])
        assert even.median_best[t] == pytest.approx(0.5 * (col[2] + col[3]))


def test_aborted_replicate_forward_filled(tmp_path):
    result = ExperimentResult(RunConfig("forrester-1", "ucb", iterations=3, replicates=2),
                              [fake_history([1.0, 2.0, 3.0, 4.0]), fake_history([5.0, 6.0])])
    result.histories[1].aborted = True
    np.testing.assert_array_equal(result.best_matrix[1], [5.0, 6.0, 6.0, 6.0])
    summary = write_summary(result, tmp_path / "s.json")
    assert summary["aborted"] == [False, True]
    write_traces(result, tmp_path / "t.csv")
    assert len(read_rows(tmp_path / "t.csv")) == 1 + 4 + 2


class TestSession:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "s.json"
        init_session(path, [0.0, -1.0], [1.0, 1.0], strategy="rand-ucb", initial_points=4, batch_size=2)
        first = ask(path)
        assert first.shape == (4, 2)
        state = tell(path, [float(x.sum()) for x in first])
        assert state["iteration"] == 1
        nxt = ask(path)
        assert nxt.shape == (2, 2)
        assert json.loads(path.read_text())["iteration"] == 1

    def test_protocol_errors(self, tmp_path):
        path = tmp_path / "s.json"
        with pytest.raises(SessionError):
            ask(path)
        init_session(path, [0.0], [1.0], strategy="ucb")
        with pytest.raises(SessionError):
            tell(path, [1.0])
        pts = ask(path)
        with pytest.raises(SessionError):
            ask(path)
        with pytest.raises(SessionError):
            tell(path, [1.0] * (len(pts) + 1))
        with pytest.raises(UsageError):
            init_session(path, [1.0], [0.0])

    def test_replay_gives_same_proposal(self, tmp_path):
        path = tmp_path / "s.json"
        init_session(path, [0.0], [1.0], strategy="b3o", seed=3)
        x0 = ask(path)
        tell(path, [float(np.sin(6 * x[0])) for x in x0])
        snapshot = path.read_bytes()
        a = ask(path)
        path.write_bytes(snapshot)
        b = ask(path)
        np.testing.assert_array_equal(a, b)

    def test_matches_run_loop(self, tmp_path):
        bench = get_benchmark("forrester-1")
        f = bench.as_maximization()
        config = RunConfig("forrester-1", "ucb", iterations=3, seed=4)
        history = run_loop(f, bench.domain, "ucb", config, RngStream(4, (0,)))
        path = tmp_path / "s.json"
        init_session(path, [0.0], [1.0], strategy="ucb", seed=4)
        for rec in history.records:
            pts = ask(path)
            np.testing.assert_array_equal(pts, rec.points)
            tell(path, [f(x) for x in pts])

    def test_failed_outcomes(self, tmp_path):
        path = tmp_path / "s.json"
        init_session(path, [0.0], [1.0], strategy="ucb", initial_points=3)
        ask(path)
        state = tell(path, [1.0, float("nan"), 0.5])
        assert state["outcomes"] == [1.0, None, 0.5]
        assert ask(path).shape == (1, 1)

    def test_cli_round_trip(self, tmp_path, capsys):
        path = str(tmp_path / "s.json")
        assert main(["init", "--session", path, "--function", "dropwave-2", "--strategy", "cl-ucb",
                     "--batch", "2"]) == 0
        assert main(["ask", "--session", path]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0] == "x0,x1" and len(lines) == 1 + 6
        assert main(["ask", "--session", path]) == 2
        assert main(["tell", "--session", path, "--values", "1,2"]) == 2
        vals = tmp_path / "vals.csv"
        vals.write_text("y\n" + "\n".join(str(i) for i in range(6)) + "\n")
        assert main(["tell", "--session", path, "--file", str(vals)]) == 0
        out = tmp_path / "next.csv"
        assert main(["ask", "--session", path, "--out", str(out)]) == 0
        assert len(read_rows(out)) == 1 + 2
        assert main(["init", "--session", path]) == 2
