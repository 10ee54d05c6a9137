import json

import pytest

from msmsim.cli import build_parser, config_from_args, main
from msmsim.config import load_config
from msmsim.output import TRACE_COLUMNS, read_trace_csv


def test_overrides_applied(tmp_path):
    cfg_path = tmp_path / "c.toml"
    cfg_path.write_text("[material]\nkappa = 0.15\n")
    args = build_parser().parse_args(
        ["simulate", "--config", str(cfg_path), "--out", str(tmp_path), "--protocol", "rotated:10",
         "--free-macro-strain", "--workpiece", "circular", "--steps-per-leg", "3"]
    )  # fmt: skip
    cfg = config_from_args(args)
    assert cfg.material.kappa == 0.15
    assert cfg.protocol_params.kind == "rotated"
    assert cfg.protocol_params.angle_deg == 10.0
    assert cfg.solver.free_macro_strain
    assert cfg.geometry.workpiece == "circular"
    assert len(cfg.protocol) == 16


def test_bad_config_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.toml"
    p.write_text("[material]\nnu_poly = 0.7\n")
    assert main(["simulate", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "nu_poly" in capsys.readouterr().err


def test_bad_protocol_exit_code(tmp_path):
    assert main(["simulate", "--protocol", "spiral", "--out", str(tmp_path)]) == 2


def test_simulate_writes_outputs(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["simulate", "--out", str(out), "--steps-per-leg", "1"]) == 0
    for name in ("trace.csv", "trace_canceled.csv", "summary.json", "volfrac_vs_H.dat", "mx_vs_H.dat", "config.toml"):
        assert (out / name).exists(), name
    cols = read_trace_csv(out / "trace.csv")
    assert tuple(cols) == TRACE_COLUMNS
    assert len(cols["i"]) >= 6
    summary = json.loads((out / "summary.json").read_text())
    assert set(summary) == {"switching_field_up", "loop_amplitude", "remanent_fraction", "spontaneous_strain", "partial"}
    assert load_config(out / "config.toml").protocol_params.steps_per_leg == 1
    assert "steps in" in capsys.readouterr().out
