import csv
import io
import json
import subprocess
import sys

import pytest

from treerecon import cli


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def table(text):
    rows = list(csv.reader(io.StringIO("".join(l for l in text.splitlines(True) if not l.startswith("#")))))
    return rows[0], rows[1:]


def config_lines(text):
    return dict(l[2:].split("=", 1) for l in text.splitlines() if l.startswith("# "))


GOLDEN_HEADERS = {
    "evolve": "n,m,m_plus,m_minus,tv,atoms,bound,bound_ok,moment_error",
    "simulate": "quantity,mean,stderr,n_samples,seed",
    "bruteforce": "value,prob",
    "bounds": "theta0,arity,beta,delta_bar,ks_product,classification,delta_empirical",
    "verify": "identity,residual,passed",
    "cutset": "lambda,weight,level,cutset_size,branching_estimate",
}

SMALL = ["--arity", "2", "--depth", "2", "--theta", "0.6"]
ARGS = {
    "evolve": SMALL,
    "simulate": SMALL + ["--samples", "200"],
    "bruteforce": SMALL,
    "bounds": ["--theta0", "0.5"],
    "verify": SMALL,
    "cutset": SMALL,
}


@pytest.mark.parametrize("command", sorted(GOLDEN_HEADERS))
def test_golden_csv_header(capsys, command):
    code, out, _ = run(capsys, command, *ARGS[command])
    assert code == 0
    header, rows = table(out)
    assert ",".join(header) == GOLDEN_HEADERS[command]
    assert rows
    assert config_lines(out)["command"] == command


GOLDEN_JSON = {
    "evolve": {"channel", "rows"},
    "simulate": {"m", "m_plus", "m_minus", "mixture_residual", "rn_m_plus", "rn_m_minus", "abs_mean", "tv"},
    "verify": {"residuals", "max_residual", "tol", "passed", "n_vertices", "n_leaves", "exact", "mixed_signs", "notes"},
}


@pytest.mark.parametrize("command", sorted(GOLDEN_JSON))
def test_golden_json_keys(capsys, command):
    code, out, _ = run(capsys, command, *ARGS[command], "--format", "json")
    assert code == 0
    doc = json.loads(out)
    assert set(doc) == {"config", "result"}
    assert GOLDEN_JSON[command] <= set(doc["result"])
    assert doc["config"]["command"] == command


def test_evolve_json_rows(capsys):
    _, out, _ = run(capsys, "evolve", *SMALL, "--format", "json")
    rows = json.loads(out)["result"]["rows"]
    assert set(rows[0]) == set(GOLDEN_HEADERS["evolve"].split(","))
    assert rows[1]["m"] == pytest.approx(153 / 289, abs=1e-11)


def test_evolve_subcritical_decreases(capsys):
    code, out, _ = run(capsys, "evolve", "--arity", "2", "--theta", "0.6", "--delta", "0", "--depth", "12")
    assert code == 0
    _, rows = table(out)
    m = [float(r[1]) for r in rows]
    assert len(m) == 13
    assert all(a > b for a, b in zip(m, m[1:]))
    assert all(r[7] == "true" for r in rows[1:])


def test_evolve_supercritical_plateau(capsys):
    _, out, _ = run(capsys, "evolve", "--arity", "2", "--theta", "0.8", "--delta", "0", "--depth", "12", "--check")
    _, rows = table(out)
    assert all(float(r[1]) > 0.1 for r in rows)


def test_evolve_theta_zero(capsys):
    _, out, _ = run(capsys, "evolve", "--arity", "3", "--theta", "0", "--delta", "0.2", "--depth", "3")
    _, rows = table(out)
    assert all(float(r[1]) == 0 and float(r[4]) == 0 for r in rows[1:])


def test_float_format_twelve_digits(capsys):
    _, out, _ = run(capsys, "bounds", "--theta0", "1/sqrt(2)")
    _, rows = table(out)
    assert rows[0][0] == "0.707106781187"
    assert rows[0][3] == "0.0162253218708"


def test_bounds_rows(capsys):
    code, out, _ = run(capsys, "bounds", "--theta0", "0,1/sqrt(2)", "--arity", "2")
    assert code == 0
    _, rows = table(out)
    assert float(rows[0][3]) == pytest.approx(1 / 3, abs=1e-12)
    assert round(float(rows[1][3]), 4) == 0.0162
    assert rows[1][5] == "critical"


def test_bounds_large_arity_trend(capsys):
    _, out, _ = run(capsys, "bounds", "--arities", "2,4,16,100,10000")
    _, rows = table(out)
    vals = [float(r[3]) for r in rows]
    assert all(a < b for a, b in zip(vals, vals[1:]))
    assert vals[-1] > 0.3
    assert all(r[5] == "critical" for r in rows)


def test_verify_passes(capsys):
    code, out, _ = run(capsys, "verify", "--depth", "2", "--arity", "2", "--theta", "0.5", "--delta", "0.1")
    assert code == 0
    _, rows = table(out)
    assert all(float(r[1]) < 1e-10 and r[2] == "true" for r in rows)


def test_verify_failure_exit_code(capsys):
    code, _, _ = run(capsys, "verify", *SMALL, "--delta", "0.1", "--tol", "1e-30")
    assert code == 1


def test_bruteforce_cap(capsys, tmp_path):
    lines = ["0 - 0.5 0"] + [f"{i} 0 0.5 0" for i in range(1, 22)]
    path = tmp_path / "star.txt"
    path.write_text("\n".join(lines) + "\n")
    code, _, err = run(capsys, "bruteforce", "--tree", str(path))
    assert code == 2
    assert "21" in err and "--max-leaves" in err
    code, out, _ = run(capsys, "bruteforce", "--tree", str(path), "--max-leaves", "21")
    assert code == 0


def test_bruteforce_exact_output(capsys):
    _, out, _ = run(capsys, "bruteforce", "--arity", "2", "--depth", "1", "--theta", "3/5", "--exact")
    _, rows = table(out)
    assert sum(float(r[1]) for r in rows) == pytest.approx(1.0)
    assert len(rows) == 3


def test_cutset_at_ks_boundary(capsys):
    code, out, _ = run(capsys, "cutset", "--arity", "2", "--theta", "0.7071", "--lambda", "1.0", "--depth", "10")
    assert code == 0
    _, rows = table(out)
    assert float(rows[0][1]) == pytest.approx(1.0, abs=1e-3)


def test_simulate_deterministic(capsys):
    a = run(capsys, "simulate", *SMALL, "--samples", "500", "--seed", "4")[1]
    b = run(capsys, "simulate", *SMALL, "--samples", "500", "--seed", "4")[1]
    c = run(capsys, "simulate", *SMALL, "--samples", "500", "--seed", "5")[1]
    assert a == b != c


@pytest.mark.parametrize("argv,field", [
    (["evolve", "--arity", "0", "--depth", "2", "--theta", "0.5"], "--arity"),
    (["evolve", "--arity", "2", "--depth", "2", "--theta", "1.5"], "--theta"),
    (["evolve", "--arity", "2", "--depth", "2", "--theta", "0.5", "--delta", "0.9"], "--delta"),
    (["simulate", "--arity", "2", "--depth", "2", "--theta", "0.5", "--samples", "1"], "--samples"),
    (["evolve", "--arity", "2", "--depth", "-1", "--theta", "0.5"], "--depth"),
    (["bounds", "--theta0", "1.2"], "--theta0"),
    (["evolve", "--arity", "2", "--depth", "2", "--theta", "abc"], "--theta"),
])
def test_invalid_input_names_field(capsys, argv, field):
    code, _, err = run(capsys, *argv)
    assert code == 2
    assert field in err


def test_missing_required_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["evolve", "--arity", "2"])
    assert exc.value.code == 2


def test_config_file_and_precedence(capsys, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# sweep point\narity = 2\ndepth = 3\ntheta = 0.6\nsamples = 300\nseed = 9\n")
    code, out, _ = run(capsys, "simulate", "--config", str(cfg))
    assert code == 0
    conf = config_lines(out)
    assert conf["seed"] == "9" and conf["depth"] == "3"
    code, out, _ = run(capsys, "simulate", "--config", str(cfg), "--seed", "10")
    assert config_lines(out)["seed"] == "10"


def test_config_unknown_key(capsys, tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("arity=2\ncolour=blue\n")
    code, _, err = run(capsys, "evolve", "--config", str(cfg), "--depth", "1", "--theta", "0.5")
    assert code == 2 and "--colour" in err


def test_config_boolean_flag(capsys, tmp_path):
    cfg = tmp_path / "flags.cfg"
    cfg.write_text("exact = true\narity=2\ndepth=1\ntheta=1/2\n")
    _, out, _ = run(capsys, "evolve", "--config", str(cfg))
    assert config_lines(out)["exact"] == "true"
    _, rows = table(out)
    assert rows[1][1] == "0.4"  # 2 theta^2 / (1 + theta^2)


def test_output_file(capsys, tmp_path):
    path = tmp_path / "out.csv"
    code, out, _ = run(capsys, "bounds", "--theta0", "0", "--output", str(path))
    assert code == 0 and out == ""
    assert path.read_text().splitlines()[-1].startswith("0,")


def test_tree_file_input(capsys, tmp_path):
    path = tmp_path / "t.txt"
    path.write_text("0 - 0.5 0.05\n1 0 0.5 0.05\n2 0 -0.3 0.13\n3 1 0.5 0.05\n4 1 0.5 0.05\n")
    code, out, _ = run(capsys, "verify", "--tree", str(path))
    assert code == 0
    code, out, _ = run(capsys, "cutset", "--tree", str(path), "--branching")
    assert code == 0


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "treerecon.cli", "bounds", "--theta0", "0"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "0.333333333333" in proc.stdout
