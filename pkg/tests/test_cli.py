import csv
import io
import json
import math

import pytest

from mdiqkd import __version__
from mdiqkd.cli import (
    EXIT_INFEASIBLE,
    EXIT_OK,
    EXIT_SCHEMA,
    _parse_losses,
    main,
)
from mdiqkd.formats import fixture_path


def read_csv(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_keyrate_report(tmp_path):
    out = tmp_path / "r.json"
    code = main(["keyrate", "-i", str(fixture_path(40)), "-o", str(out)])
    assert code == EXIT_OK
    report = json.loads(out.read_text())
    assert report["version"] == __version__
    assert set(report["analyses"]) == {"asymptotic", "gaussian", "composable"}
    asym = report["analyses"]["asymptotic"]
    assert asym["rate_bps"] > 0 and not asym["no_key"]
    assert report["input"]["total_loss_db"] == 40
    assert not list(tmp_path.glob(".tmp-*"))


def test_keyrate_strict_mode_reports_inconsistent_data(tmp_path, capsys):
    code = main(["keyrate", "-i", str(fixture_path(30)), "--analysis", "asymptotic"])
    assert code == EXIT_INFEASIBLE
    assert "--relax-inconsistent" in capsys.readouterr().err
    out = tmp_path / "r.json"
    code = main(["keyrate", "-i", str(fixture_path(30)), "--analysis", "asymptotic",
                 "--relax-inconsistent", "-o", str(out)])
    assert code == EXIT_OK
    entry = json.loads(out.read_text())["analyses"]["asymptotic"]
    assert entry["relaxation"]["yield"] > 0


def test_keyrate_schema_errors(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"format": "mdiqkd-measurements/1"}))
    assert main(["keyrate", "-i", str(bad)]) == EXIT_SCHEMA
    assert main(["keyrate", "-i", str(tmp_path / "missing.json")]) == EXIT_SCHEMA
    assert "mdiqkd:" in capsys.readouterr().err


def test_failed_run_leaves_existing_output(tmp_path):
    out = tmp_path / "r.json"
    out.write_text("previous")
    main(["keyrate", "-i", str(fixture_path(30)), "--analysis", "asymptotic", "-o", str(out)])
    assert out.read_text() == "previous"


def test_simulate_sweep(tmp_path):
    out = tmp_path / "sweep.csv"
    code = main(["simulate", "--losses", "28", "30:34:2", "--analysis", "asymptotic",
                 "--quadrature-points", "64", "-o", str(out)])
    assert code == EXIT_OK
    rows = read_csv(out.read_text())
    header = list(rows[0])
    assert header[:3] == ["loss_db", "distance_km", "rate_bps_asymptotic"]
    assert header[3:5] == ["q_z_ss", "e_z_ss"] and header[-1] == "saturation"
    assert len(header) == 3 + 2 + 18 + 1
    assert [float(r["loss_db"]) for r in rows] == [28, 30, 32, 34]
    assert [r["saturation"] for r in rows] == ["1", "0", "0", "0"]
    rates = [float(r["rate_bps_asymptotic"]) for r in rows]
    assert all(a >= b for a, b in zip(rates, rates[1:]))


def test_simulate_config(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"model": {"indistinguishability": 0.9}, "n_total": 1e12}))
    assert main(["simulate", "-i", str(cfg), "--losses", "30", "--analysis", "gaussian",
                 "--quadrature-points", "32"]) == EXIT_OK
    rows = read_csv(capsys.readouterr().out)
    assert len(rows) == 1 and "rate_bps_gaussian" in rows[0]
    cfg.write_text(json.dumps({"model": {"colour": 1}}))
    assert main(["simulate", "-i", str(cfg), "--losses", "30"]) == EXIT_SCHEMA
    cfg.write_text(json.dumps({"params": {"u": 0.9}}))
    assert main(["simulate", "-i", str(cfg), "--losses", "30"]) == EXIT_SCHEMA


def test_optimize_rejects_all(capsys):
    assert main(["optimize", "--losses", "30", "--analysis", "all"]) == EXIT_SCHEMA


@pytest.mark.slow
def test_optimize_row(tmp_path):
    out = tmp_path / "opt.csv"
    code = main(["optimize", "--losses", "40", "--analysis", "asymptotic", "--starts", "1",
                 "--quadrature-points", "32", "-o", str(out)])
    assert code == EXIT_OK
    (row,) = read_csv(out.read_text())
    assert list(row) == ["loss_db", "distance_km", "s", "u", "v", "p_z_s", "p_x_u", "p_x_v",
                         "w", "p_x_w", "rate_bps", "no_key", "evaluations"]
    assert float(row["rate_bps"]) > 0 and row["no_key"] == "0"
    probs = sum(float(row[k]) for k in ("p_z_s", "p_x_u", "p_x_v", "p_x_w"))
    assert probs == pytest.approx(1.0)


def test_detuning_map_and_series(tmp_path):
    beat = tmp_path / "beat.csv"
    beat.write_text("time_s,delta_f_hz\n0,0\n1,30e6\n")
    out, series = tmp_path / "map.csv", tmp_path / "series.csv"
    code = main(["detuning", "--clock-hz", "1e9", "--detuning-min", "0", "--detuning-max",
                 "2e9", "--steps", "5", "-o", str(out), "--beat-note", str(beat),
                 "--series-output", str(series)])
    assert code == EXIT_OK
    rows = read_csv(out.read_text())
    assert list(rows[0]) == ["clock_hz", "delta_f_hz", "qber"]
    qber = [float(r["qber"]) for r in rows]
    assert qber[0] == pytest.approx(0.25) and qber[2] == 0.5 and qber[4] == pytest.approx(0.25)
    pen = read_csv(series.read_text())
    assert float(pen[1]["qber_penalty"]) == pytest.approx(0.0011, rel=0.05)


def test_detuning_raw_exceeds_half(capsys):
    assert main(["detuning", "--raw", "--detuning-min", "1e9", "--detuning-max", "1e9",
                 "--steps", "2"]) == EXIT_OK
    rows = read_csv(capsys.readouterr().out)
    assert float(rows[0]["qber"]) == pytest.approx(0.75)


def test_detuning_bad_beat_note(tmp_path, capsys):
    beat = tmp_path / "beat.csv"
    beat.write_text("time_s,delta_f_hz\n0,0\n1,nan\n")
    code = main(["detuning", "--steps", "3", "--beat-note", str(beat),
                 "-o", str(tmp_path / "m.csv"), "--series-output", str(tmp_path / "s.csv")])
    assert code == EXIT_SCHEMA
    assert "line 3" in capsys.readouterr().err


def test_parse_losses():
    assert _parse_losses(["30", "40:44:2"]) == [30.0, 40.0, 42.0, 44.0]
    assert _parse_losses(["0:1:0.1"])[-1] == pytest.approx(1.0)
    assert not math.isnan(_parse_losses(["1e1"])[0])
