import csv
import json

import numpy as np
import pytest

from tsvar.cli import main


def write_cfg(path, doc):
    path.write_text(json.dumps(doc), encoding="utf-8")
    return str(path)


CATALOG_DA = {"catalog": {"name": "discrete_action", "params": {}}}
CATALOG_LQ = {"catalog": {"name": "quantum_lq", "params": {}}}
EXPLICIT_DA = {
    "timescale": {"q": 1.0, "h": 1.0},
    "grid": {"b": 12.0, "steps": 14},
    "delay": {"alpha0": 2},
    "state": {"n": 1},
    "lagrangian": "0.5*Dy1^2 - 0.5*yd1^2",
    "prehistory": "1",
    "endpoint": [0.0],
    "solver": {"tol": 1e-8, "max_iter": 100},
}
EXPLICIT_LQ = {
    "timescale": {"q": 0.5, "h": 0.0},
    "grid": {"b": 1.0, "steps": 7},
    "delay": {"alpha0": 1},
    "state": {"n": 1},
    "control": {"m": 1, "dynamics": "-1*y1 + u1"},
    "lagrangian": "0.5*(yd1^2 + u1^2)",
    "prehistory": "1",
    "endpoint": [0.0],
}


def test_grid_table(capsys):
    assert main(["grid", "--q", "1", "--h", "1", "--b", "5", "--steps", "5"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].split() == ["index", "point", "nu"]
    assert len(lines) == 7
    assert lines[1].split() == ["0", "0", "1"]
    assert lines[-1].split() == ["5", "5", "1"]


def test_grid_q_powers(capsys):
    assert main(["grid", "--q", "0.5", "--h", "0", "--b", "1", "--steps", "3"]) == 0
    pts = [float(line.split()[1])
           for line in capsys.readouterr().out.strip().splitlines()[1:]]
    assert pts == pytest.approx([0.125, 0.25, 0.5, 1.0])


def test_grid_degenerate(capsys):
    assert main(["grid", "--q", "1", "--h", "0", "--b", "1", "--steps", "2"]) == 1
    assert "degenerate time scale" in capsys.readouterr().err


def test_solve_el_catalog(tmp_path):
    cfg = write_cfg(tmp_path / "c.json", CATALOG_DA)
    out = tmp_path / "report.json"
    csvp = tmp_path / "traj.csv"
    assert main(["solve-el", "--config", cfg, "--output", str(out),
                 "--csv", str(csvp)]) == 0
    doc = json.loads(out.read_text())
    assert doc["converged"] is True
    assert doc["residual_max"] <= 1e-8
    assert doc["iterations"] >= 1
    with open(csvp) as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["index", "t", "nu", "y_1"]
    assert len(rows) == 16  # header + 15 grid points


def test_solve_oc_catalog(tmp_path):
    cfg = write_cfg(tmp_path / "c.json", CATALOG_LQ)
    out = tmp_path / "report.json"
    assert main(["solve-oc", "--config", cfg, "--output", str(out)]) == 0
    doc = json.loads(out.read_text())
    groups = set(doc["residuals"])
    assert groups == {"adjoint_delayed", "adjoint_tail", "control",
                      "boundary", "dynamics"}
    assert doc["residual_max"] <= 1e-8
    cols = doc["trajectory"]["columns"]
    assert cols == ["index", "t", "nu", "y_1", "u_1", "lambda_1"]


def test_solve_kind_mismatch(tmp_path):
    cfg = write_cfg(tmp_path / "c.json", CATALOG_LQ)
    assert main(["solve-el", "--config", cfg, "--output",
                 str(tmp_path / "r.json")]) == 1


def test_explicit_matches_catalog(tmp_path):
    cfg_e = write_cfg(tmp_path / "e.json", EXPLICIT_DA)
    cfg_c = write_cfg(tmp_path / "c.json", CATALOG_DA)
    out_e, out_c = tmp_path / "re.json", tmp_path / "rc.json"
    assert main(["solve-el", "--config", cfg_e, "--output", str(out_e)]) == 0
    assert main(["solve-el", "--config", cfg_c, "--output", str(out_c)]) == 0
    ye = [r[3] for r in json.loads(out_e.read_text())["trajectory"]["rows"]]
    yc = [r[3] for r in json.loads(out_c.read_text())["trajectory"]["rows"]]
    assert np.max(np.abs(np.array(ye) - np.array(yc))) <= 1e-6


def test_explicit_control_matches_catalog(tmp_path):
    cfg_e = write_cfg(tmp_path / "e.json", EXPLICIT_LQ)
    cfg_c = write_cfg(tmp_path / "c.json", CATALOG_LQ)
    out_e, out_c = tmp_path / "re.json", tmp_path / "rc.json"
    assert main(["solve-oc", "--config", cfg_e, "--output", str(out_e)]) == 0
    assert main(["solve-oc", "--config", cfg_c, "--output", str(out_c)]) == 0
    for col in (3, 4, 5):
        ve = [r[col] for r in json.loads(out_e.read_text())["trajectory"]["rows"]
              if r[col] is not None]
        vc = [r[col] for r in json.loads(out_c.read_text())["trajectory"]["rows"]
              if r[col] is not None]
        assert np.max(np.abs(np.array(ve) - np.array(vc))) <= 1e-6


def test_delay_exceeds_grid(tmp_path, capsys):
    doc = dict(EXPLICIT_DA)
    doc["grid"] = {"b": 12.0, "steps": 2}
    cfg = write_cfg(tmp_path / "c.json", doc)
    assert main(["solve-el", "--config", cfg, "--output",
                 str(tmp_path / "r.json")]) == 1
    assert "delay exceeds grid" in capsys.readouterr().err


def test_unknown_key_rejected(tmp_path, capsys):
    doc = dict(EXPLICIT_DA)
    doc["lagrangain"] = "0"  # typo must be rejected, not ignored
    cfg = write_cfg(tmp_path / "c.json", doc)
    assert main(["solve-el", "--config", cfg, "--output",
                 str(tmp_path / "r.json")]) == 1
    assert "unknown keys" in capsys.readouterr().err


def test_catalog_and_lagrangian_exclusive(tmp_path):
    doc = dict(EXPLICIT_DA)
    doc["catalog"] = {"name": "discrete_action"}
    cfg = write_cfg(tmp_path / "c.json", doc)
    assert main(["solve-el", "--config", cfg, "--output",
                 str(tmp_path / "r.json")]) == 1


def test_residuals_roundtrip(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "c.json", CATALOG_DA)
    out, csvp = tmp_path / "r.json", tmp_path / "t.csv"
    main(["solve-el", "--config", cfg, "--output", str(out), "--csv", str(csvp)])
    capsys.readouterr()
    assert main(["residuals", "--config", cfg, "--trajectory", str(csvp)]) == 0
    text = capsys.readouterr().out
    overall = float(text.strip().splitlines()[-1].split("=")[1])
    assert overall <= 1e-7


def test_residuals_perturbed(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "c.json", CATALOG_DA)
    out, csvp = tmp_path / "r.json", tmp_path / "t.csv"
    main(["solve-el", "--config", cfg, "--output", str(out), "--csv", str(csvp)])
    rows = csvp.read_text().splitlines()
    cells = rows[8].split(",")
    cells[3] = repr(float(cells[3]) + 0.1)
    rows[8] = ",".join(cells)
    pert = tmp_path / "p.csv"
    pert.write_text("\n".join(rows) + "\n")
    capsys.readouterr()
    assert main(["residuals", "--config", cfg, "--trajectory", str(pert)]) == 0
    text = capsys.readouterr().out
    overall = float(text.strip().splitlines()[-1].split("=")[1])
    assert overall > 1e-3


def test_residuals_row_count_mismatch(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "c.json", CATALOG_DA)
    out, csvp = tmp_path / "r.json", tmp_path / "t.csv"
    main(["solve-el", "--config", cfg, "--output", str(out), "--csv", str(csvp)])
    rows = csvp.read_text().splitlines()
    (tmp_path / "short.csv").write_text("\n".join(rows[:-2]) + "\n")
    assert main(["residuals", "--config", cfg, "--trajectory",
                 str(tmp_path / "short.csv")]) == 1


def test_residuals_control_trajectory(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "c.json", CATALOG_LQ)
    out, csvp = tmp_path / "r.json", tmp_path / "t.csv"
    main(["solve-oc", "--config", cfg, "--output", str(out), "--csv", str(csvp)])
    capsys.readouterr()
    assert main(["residuals", "--config", cfg, "--trajectory", str(csvp)]) == 0
    text = capsys.readouterr().out
    overall = float(text.strip().splitlines()[-1].split("=")[1])
    assert overall <= 1e-7


def test_report_determinism(tmp_path):
    cfg = write_cfg(tmp_path / "c.json", CATALOG_LQ)
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    main(["solve-oc", "--config", cfg, "--output", str(a)])
    main(["solve-oc", "--config", cfg, "--output", str(b)])
    assert a.read_bytes() == b.read_bytes()


def test_nonconvergence_exit_code_and_partial_report(tmp_path):
    doc = {
        "timescale": {"q": 1.0, "h": 1.0},
        "grid": {"b": 8.0, "steps": 8},
        "delay": {"alpha0": 0},
        "state": {"n": 1},
        "lagrangian": "0.25*Dy1^4 + 0.5*y1^2",
        "prehistory": "3",
        "endpoint": [-2.0],
        "solver": {"tol": 1e-14, "max_iter": 1},
    }
    cfg = write_cfg(tmp_path / "c.json", doc)
    out = tmp_path / "r.json"
    assert main(["solve-el", "--config", cfg, "--output", str(out)]) == 2
    rep = json.loads(out.read_text())
    assert rep["converged"] is False
    assert len(rep["trajectory"]["rows"]) == 9


def test_limit_sweep_cli(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "c.json",
                    {"catalog": {"name": "quantum_lq",
                                 "params": {"alpha": 0, "alpha0": 0}}})
    out = tmp_path / "s.json"
    qlist = ",".join(str(1.0 - 2.0 ** -k) for k in range(4, 8))
    assert main(["limit-sweep", "--config", cfg, "--q-list", qlist,
                 "--output", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["verdict"] == "converging"
    devs = [lv["deviation"] for lv in doc["levels"]]
    assert all(b < a for a, b in zip(devs, devs[1:]))


def test_limit_sweep_single_level(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "c.json",
                    {"catalog": {"name": "quantum_lq",
                                 "params": {"alpha": 0, "alpha0": 0}}})
    out = tmp_path / "s.json"
    assert main(["limit-sweep", "--config", cfg, "--q-list", "0.9375",
                 "--output", str(out)]) == 0
    assert json.loads(out.read_text())["verdict"] == "insufficient levels"


def test_limit_sweep_rejects_one(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "c.json",
                    {"catalog": {"name": "quantum_lq", "params": {}}})
    assert main(["limit-sweep", "--config", cfg, "--q-list", "1.0,0.5",
                 "--output", str(tmp_path / "s.json")]) == 1
