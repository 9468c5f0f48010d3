import csv
import io
import subprocess
import sys

import pytest

from remat.cli import SWEEP_COLUMNS, auto_budgets, main, read_graph
from remat.graph import make_linear_training, save_graph
from remat.mps import read_mps, same_instance
from remat.formulation import RematProblem, build


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def fields(text):
    return dict(line.split(": ", 1) for line in text.splitlines() if ": " in line)


def test_solve_eight_layers(capsys, tmp_path):
    plan = tmp_path / "plan.txt"
    code, out, _ = run(capsys, "solve", "--graph", "linear:8", "--budget", "4", "--plan-out", str(plan))
    f = fields(out)
    assert code == 0
    assert (f["status"], f["objective"], f["peak_mem"]) == ("optimal", "26", "4")
    code, out, _ = run(capsys, "simulate", "--graph", "linear:8", "--plan", str(plan), "--budget", "4")
    assert code == 0 and fields(out)["cost"] == "26"


def test_solve_zero_budget_is_infeasible(capsys):
    code, _, err = run(capsys, "solve", "--graph", "linear:8", "--budget", "0")
    assert code == 3 and "infeasible" in err


def test_time_limit_exit_code(capsys):
    code, out, _ = run(capsys, "solve", "--graph", "linear:8", "--budget", "4", "--backend", "bnb",
                       "--time-limit", "0.5")
    assert code == 2
    assert fields(out)["status"] in ("feasible", "time_limit")


def test_mps_round_trip(capsys, tmp_path):
    path = tmp_path / "m.mps"
    code, _, _ = run(capsys, "solve", "--graph", "linear:3", "--budget", "3", "--mps-out", str(path))
    assert code == 0
    assert same_instance(read_mps(path), build(RematProblem(make_linear_training(3), 3)))


def test_graph_file_and_io_errors(capsys, tmp_path):
    p = tmp_path / "g.json"
    save_graph(make_linear_training(2), p)
    assert run(capsys, "solve", "--graph", str(p), "--budget", "inf")[0] == 0
    assert run(capsys, "solve", "--graph", str(tmp_path / "missing.json"), "--budget", "3")[0] == 4
    p.write_text("{not json")
    assert run(capsys, "solve", "--graph", str(p), "--budget", "3")[0] == 4
    code, _, err = run(capsys, "simulate", "--graph", "linear:2", "--plan", str(tmp_path / "none.txt"))
    assert code == 4 and "cannot read plan" in err


def test_read_graph_builtins():
    assert read_graph("linear:8").n == 17
    assert read_graph("chain:4").n == 4


def test_usage_errors_use_io_code(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["baseline", "--graph", "linear:3", "--strategy", "nope"])
    assert exc.value.code == 4
    with pytest.raises(SystemExit) as exc:
        main(["solve", "--graph", "linear:3", "--budget", "lots"])
    assert exc.value.code == 4


def test_approx_and_baseline(capsys):
    code, out, _ = run(capsys, "approx", "--graph", "linear:8", "--budget", "6")
    assert code == 0 and fields(out)["status"] == "feasible"
    code, out, _ = run(capsys, "approx", "--graph", "linear:8", "--budget", "6", "--mode", "randomized",
                       "--samples", "20", "--seed", "3")
    assert code in (0, 3)
    code, out, _ = run(capsys, "baseline", "--graph", "linear:8", "--budget", "inf",
                       "--strategy", "checkpoint-all")
    assert code == 0 and fields(out)["objective"] == "17"
    code, _, err = run(capsys, "baseline", "--graph", "linear:8", "--budget", "inf", "--strategy", "chen-greedy")
    assert code == 4 and "--b" in err
    code, _, _ = run(capsys, "baseline", "--graph", "linear:8", "--budget", "2", "--strategy", "chen-sqrt")
    assert code == 3


def test_sweep_csv(capsys, tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    argv = ["sweep", "--graph", "linear:4", "--budgets", "3,5,100",
            "--strategies", "ilp,checkpoint-all,chen-sqrt,griewank"]
    assert run(capsys, *argv, "--csv-out", str(a))[0] == 0
    assert run(capsys, *argv, "--csv-out", str(b), "--jobs", "2")[0] == 0
    assert a.read_bytes() == b.read_bytes()
    rows = list(csv.DictReader(io.StringIO(a.read_text())))
    assert tuple(rows[0]) == SWEEP_COLUMNS
    ample = [r for r in rows if r["budget"] == "100" and r["strategy"] in ("ilp", "checkpoint-all")]
    assert ample and all(r["overhead_ratio"] == "1.000000" for r in ample)
    ilp = {r["budget"]: r for r in rows if r["strategy"] == "ilp"}
    for r in rows:
        if r["cost"] and r["strategy"] != "ilp" and ilp[r["budget"]]["cost"]:
            assert float(ilp[r["budget"]]["cost"]) <= float(r["cost"])


def test_sweep_unknown_strategy(capsys):
    code, _, err = run(capsys, "sweep", "--graph", "linear:3", "--strategies", "ilp,magic")
    assert code == 4 and "magic" in err


def test_auto_budgets():
    g = make_linear_training(3)
    b = auto_budgets(g)
    assert b == sorted(b) and b[-1] == 5 and b[0] == 3


def test_gap_report(capsys):
    code, out, _ = run(capsys, "gap", "--graph", "linear:8", "--budget", "4", "--time-limit", "3")
    assert code == 0
    assert "frontier: ratio=1.1818" in out
    assert "no-frontier: ratio_vs_best_integral=21.5570" in out


def test_maxbatch(capsys, tmp_path):
    got = []
    for budget in (4, 6, 8, 10, 12):
        code, out, _ = run(capsys, "maxbatch", "--graph", "linear:2", "--budget", str(budget),
                           "--cost-cap", "none")
        assert code == 0
        got.append(int(fields(out)["max_batch"]))
    assert got == [1, 2, 2, 3, 4]
    plan = tmp_path / "p.txt"
    code, out, _ = run(capsys, "maxbatch", "--graph", "linear:2", "--budget", "8", "--plan-out", str(plan))
    assert code == 0 and plan.read_text().startswith("%0 = compute")


def test_simulate_trace(capsys, tmp_path):
    plan, trace = tmp_path / "p.txt", tmp_path / "t.csv"
    run(capsys, "baseline", "--graph", "linear:3", "--strategy", "checkpoint-all", "--plan-out", str(plan),
        "--hoist")
    code, out, _ = run(capsys, "simulate", "--graph", "linear:3", "--plan", str(plan), "--trace-out", str(trace))
    assert code == 0 and fields(out)["terminal_computed"] == "true"
    assert trace.read_text().splitlines()[0] == "index,statement,resident_bytes"
    code, _, _ = run(capsys, "simulate", "--graph", "linear:3", "--plan", str(plan), "--budget", "1")
    assert code == 3
    plan.write_text("%0 = compute b1\n")
    code, _, err = run(capsys, "simulate", "--graph", "linear:3", "--plan", str(plan))
    assert code == 4


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "remat.cli", "solve", "--graph", "chain:3", "--budget", "2"],
                         capture_output=True, text=True)
    assert out.returncode == 0 and "objective: 3" in out.stdout
