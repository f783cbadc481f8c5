import csv
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from disdrift.cli import ConfigError, format_csv, main, resolve_seed, validate_config

SIGN_INLINE = {"drift": {"breakpoints": [0.0], "pieces": [-1.0, 1.0]}, "diffusion": 0.0,
               "initial": 0.0}


def run(args, capsys):
    code = main([str(a) for a in args])
    out, err = capsys.readouterr()
    return code, out, err


def read_rows(path):
    with open(path, newline="") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    return list(csv.reader(lines))


def write_config(tmp_path, config, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(config))
    return path


# ---------------------------------------------------------------- simulate

def test_ode_only_is_a_straight_line(tmp_path, capsys):
    out = tmp_path / "ode.csv"
    code, _, _ = run(["simulate", "--preset", "ode-only", "--delta", 0.125, "--out", out], capsys)
    assert code == 0
    rows = read_rows(out)
    assert rows[0] == ["path_id", "t", "x"]
    t = np.array([float(r[1]) for r in rows[1:]])
    x = np.array([float(r[2]) for r in rows[1:]])
    assert len(t) == 9
    assert np.array_equal(x, 1 - 1.5 * t)


def test_chattering_stays_near_zero(tmp_path, capsys):
    out = tmp_path / "chatter.csv"
    delta = 2.0 ** -6
    assert run(["simulate", "--preset", "chattering-ode", "--delta", delta, "--out", out],
               capsys)[0] == 0
    x = np.array([float(r[2]) for r in read_rows(out)[1:]])
    first = np.argmax(np.abs(x) <= 2 * delta)
    assert first > 0
    tail = x[first:]
    # float rounding leaves the iterate a hair off zero, so the sharp bound 2 delta
    # is attained only in exact arithmetic (see the scheme tests)
    assert np.all(np.abs(tail) <= 2.5 * delta)
    assert np.any(tail > 0) and np.any(tail < 0)


def test_repeated_runs_write_identical_files(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for out in (a, b):
        run(["simulate", "--preset", "sign-mult", "--delta", 2.0 ** -6, "--paths", 3,
             "--seed", 9, "--out", out], capsys)
    assert a.read_bytes() == b.read_bytes()


def test_csv_uses_rfc4180_line_endings(tmp_path, capsys):
    out = tmp_path / "a.csv"
    run(["simulate", "--preset", "ode-only", "--delta", 0.5, "--out", out], capsys)
    data = out.read_bytes()
    assert data.startswith(b"path_id,t,x\r\n")
    assert data.count(b"\r\n") == 4


def test_gnuplot_script_written(tmp_path, capsys):
    out = tmp_path / "run.csv"
    run(["simulate", "--preset", "ode-only", "--delta", 0.5, "--out", out], capsys)
    script = (tmp_path / "run.gp").read_text()
    assert "'run.csv'" in script


def test_simulate_to_stdout(capsys):
    code, out, _ = run(["simulate", "--preset", "ode-only", "--delta", 0.5], capsys)
    assert code == 0
    assert out.splitlines()[0] == "path_id,t,x"


@pytest.mark.parametrize("scheme", ["em", "milstein", "transform-em", "transform-milstein",
                                    "adaptive-em"])
def test_every_scheme_simulates(scheme, capsys):
    code, out, err = run(["simulate", "--preset", "sign-mult", "--scheme", scheme,
                          "--delta", 0.0625], capsys)
    assert code == 0, err
    t = [float(line.split(",")[1]) for line in out.splitlines()[1:]]
    assert t[0] == 0.0 and t[-1] == 1.0


def test_jump_scheme_simulates(capsys):
    code, out, _ = run(["simulate", "--preset", "sign-jump", "--scheme", "jump-em",
                        "--delta", 0.0625, "--seed", 1], capsys)
    assert code == 0
    assert len(out.splitlines()) >= 18


def test_simulate_needs_a_single_step(tmp_path, capsys):
    cfg = write_config(tmp_path, {"problem": "gbm", "delta_ladder": [0.5, 0.25]})
    code, _, err = run(["simulate", "--config", cfg], capsys)
    assert code == 1 and "'delta'" in err


# ---------------------------------------------------------------- errors

def test_unknown_preset_names_field(capsys):
    code, _, err = run(["simulate", "--preset", "nope", "--delta", 0.5], capsys)
    assert code == 1 and "'problem'" in err


def test_bad_scheme_names_field(capsys):
    code, _, err = run(["simulate", "--preset", "gbm", "--scheme", "rk4", "--delta", 0.5],
                       capsys)
    assert code == 1 and "'scheme'" in err


def test_scheme_problem_mismatch_names_hypothesis(capsys):
    code, _, err = run(["simulate", "--preset", "gbm", "--scheme", "jump-em", "--delta", 0.5],
                       capsys)
    assert code == 1 and "jump" in err
    code, _, err = run(["simulate", "--preset", "chattering-ode", "--scheme", "transform-em",
                        "--delta", 0.5], capsys)
    assert code == 1 and "sigma" in err


def test_unknown_config_key_rejected(tmp_path, capsys):
    cfg = write_config(tmp_path, {"problem": "gbm", "delta": 0.5, "colour": "red"})
    code, _, err = run(["simulate", "--config", cfg], capsys)
    assert code == 1 and "colour" in err


def test_wrong_type_names_field(tmp_path, capsys):
    cfg = write_config(tmp_path, {"problem": "gbm", "paths": "many", "delta": 0.5})
    code, _, err = run(["simulate", "--config", cfg], capsys)
    assert code == 1 and "'paths'" in err


def test_unsorted_ladder_rejected(tmp_path, capsys):
    cfg = write_config(tmp_path, {"problem": "gbm", "delta_ladder": [0.1, 0.2, 0.05, 0.01]})
    code, _, err = run(["estimate-order", "--config", cfg], capsys)
    assert code == 1 and "'delta_ladder'" in err


def test_unwritable_output(tmp_path, capsys):
    out = tmp_path / "missing" / "x.csv"
    code, _, err = run(["simulate", "--preset", "ode-only", "--delta", 0.5, "--out", out],
                       capsys)
    assert code == 1 and "'output'" in err


def test_numerical_failure_exit_code(tmp_path, capsys):
    cfg = write_config(tmp_path, {"problem": SIGN_INLINE, "scheme": "adaptive-em",
                                  "delta": 1e-8})
    code, _, err = run(["simulate", "--config", cfg], capsys)
    assert code == 2 and "numerical" in err


def test_validate_config_directly():
    validate_config({"problem": "gbm", "paths": 10})
    with pytest.raises(ConfigError, match="'seed'"):
        validate_config({"seed": -1})


# ---------------------------------------------------------------- seeds

def test_seed_precedence(monkeypatch):
    monkeypatch.setenv("DISDRIFT_SEED", "7")
    assert resolve_seed(3, {"seed": 5}) == 3
    assert resolve_seed(None, {"seed": 5}) == 5
    assert resolve_seed(None, {}) == 7
    monkeypatch.delenv("DISDRIFT_SEED")
    assert resolve_seed(None, {}) == 0
    monkeypatch.setenv("DISDRIFT_SEED", "x")
    with pytest.raises(ConfigError):
        resolve_seed(None, {})


def test_env_seed_matches_flag(tmp_path, capsys, monkeypatch):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    run(["simulate", "--preset", "sign-mult", "--delta", 0.125, "--seed", 42, "--out", a],
        capsys)
    monkeypatch.setenv("DISDRIFT_SEED", "42")
    run(["simulate", "--preset", "sign-mult", "--delta", 0.125, "--out", b], capsys)
    assert a.read_bytes() == b.read_bytes()


# ---------------------------------------------------------------- estimate-order

def test_estimate_order_footer(tmp_path, capsys):
    out = tmp_path / "order.csv"
    code, stdout, _ = run(["estimate-order", "--preset", "gbm", "--paths", 200, "--seed", 1,
                           "--out", out], capsys)
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "delta,rmse,stderr"
    assert len(lines) == 1 + 7 + 1
    assert lines[-1].startswith("# slope=") and ", ci=" in lines[-1]
    assert "slope" in stdout
    assert (tmp_path / "order.gp").exists()


def test_estimate_order_identical_across_workers(tmp_path, capsys):
    files = []
    for w in (1, 4, 16):
        out = tmp_path / f"w{w}.csv"
        assert run(["estimate-order", "--preset", "sign-mult", "--paths", 120, "--seed", 5,
                    "--workers", w, "--delta", 0.25, "--delta", 0.125, "--delta", 0.0625,
                    "--delta", 0.03125, "--out", out], capsys)[0] == 0
        files.append(out.read_bytes())
    assert files[0] == files[1] == files[2]


def test_estimate_order_short_ladder_rejected(capsys):
    code, _, err = run(["estimate-order", "--preset", "gbm", "--delta", 0.5, "--delta", 0.25],
                       capsys)
    assert code == 1 and "'delta_ladder'" in err


def test_exact_reference_requires_closed_form(capsys):
    code, _, err = run(["estimate-order", "--preset", "sign-mult", "--reference", "exact",
                        "--paths", 100], capsys)
    assert code == 1 and "'reference'" in err


# ---------------------------------------------------------------- adaptive-cost

def test_adaptive_cost_without_breakpoints(tmp_path, capsys):
    out = tmp_path / "cost.csv"
    code, _, _ = run(["adaptive-cost", "--preset", "gbm", "--paths", 20, "--delta", 0.3,
                      "--delta", 0.1, "--delta", 0.03, "--delta", 0.007, "--out", out], capsys)
    assert code == 0
    rows = read_rows(out)[1:]
    assert [float(r[1]) for r in rows] == [math.ceil(1 / d) for d in (0.3, 0.1, 0.03, 0.007)]
    assert all(float(r[2]) == 0.0 for r in rows)
    assert out.read_text().splitlines()[-1].startswith("# slope=")


def test_adaptive_cost_rejects_single_step(capsys):
    code, _, err = run(["adaptive-cost", "--preset", "sign-mult", "--delta", 0.1], capsys)
    assert code == 1 and "'delta_ladder'" in err


# ---------------------------------------------------------------- seminorm

def test_seminorm_rows(tmp_path, capsys):
    out = tmp_path / "semi.csv"
    code, _, _ = run(["seminorm", "--kappa", 0.25, "--kappa", 0.4, "--kappa", 0.45,
                      "--out", out], capsys)
    assert code == 0
    rows = read_rows(out)
    assert rows[0] == ["kappa", "seminorm", "predicted_order"]
    values = {float(r[0]): (float(r[1]), float(r[2])) for r in rows[1:]}
    assert values[0.4][1] == pytest.approx(0.7)
    assert values[0.45][0] > values[0.25][0]


def test_seminorm_of_constant_preset(capsys):
    code, out, _ = run(["seminorm", "--preset", "constant-b", "--kappa", 0.3, "--kappa", 0.7],
                       capsys)
    assert code == 0
    assert [float(r.split(",")[1]) for r in out.splitlines()[1:]] == [0.0, 0.0]


def test_seminorm_kappa_out_of_range(capsys):
    code, _, err = run(["seminorm", "--kappa", 1.2], capsys)
    assert code == 1 and "'kappas'" in err


# ---------------------------------------------------------------- rare-event

def test_rare_event_band_covering_start(capsys):
    code, out, _ = run(["rare-event", "--paths", 1000, "--band", 0.2], capsys)
    assert code == 0
    assert out.strip() == "inward=1.0 outward=1.0"


def test_rare_event_rejects_few_paths(capsys):
    code, _, err = run(["rare-event", "--paths", 999], capsys)
    assert code == 1 and "'paths'" in err


def test_rare_event_csv(tmp_path, capsys):
    out = tmp_path / "rare.csv"
    code, stdout, _ = run(["rare-event", "--paths", 1000, "--delta", 2.0 ** -6, "--out", out],
                          capsys)
    assert code == 0
    rows = read_rows(out)
    assert rows[0] == ["variant", "fraction"]
    assert [r[0] for r in rows[1:]] == ["inward", "outward"]
    assert stdout.startswith("inward=")


# ---------------------------------------------------------------- presets

def test_presets_listing(capsys):
    code, out, _ = run(["presets"], capsys)
    assert code == 0
    for name in ("ode-only", "chattering-ode", "sign-inward", "rare-event", "sign-decomposition"):
        assert name in out


def test_presets_schema(capsys):
    code, out, _ = run(["presets", "--schema"], capsys)
    assert code == 0
    schema = json.loads(out)
    assert schema["additionalProperties"] is False
    assert "scheme" in schema["properties"]


def test_format_csv():
    text = format_csv(["a", "b"], [(1, 0.1), (2, math.inf)], ["slope=0.5, ci=0.01"])
    assert text == "a,b\r\n1,0.1\r\n2,inf\r\n# slope=0.5, ci=0.01\r\n"


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "disdrift", "presets"], capture_output=True,
                         text=True)
    assert res.returncode == 0 and "gbm" in res.stdout
