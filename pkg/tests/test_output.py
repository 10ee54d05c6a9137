import csv
import json

import numpy as np
import pytest

from msmsim.config import SimulationConfig
from msmsim.energy import EnergyModel, initial_state
from msmsim.evolution import Trace, make_record
from msmsim.geometry import TwinLine
from msmsim.output import (
    BLOCKED,
    TRACE_COLUMNS,
    emit_plot_data,
    field_abscissa,
    last_cycle,
    read_trace_csv,
    spontaneous_strain,
    summarize,
    switching_field,
    write_summary,
    write_trace,
)

HEADER = (
    "i,t,Hx,Hy,vol_frac,mx_avg,my_avg,E_matrix,E_particle,E_zeeman,E_demag,"
    "E_anis,E_total,D_step,Diss_acc,est_lo,est_hi,backtracked"
)


@pytest.fixture(scope="module")
def model():
    return EnergyModel(SimulationConfig())


def synthetic_trace(model, fields, offsets):
    """Records for prescribed fields and twin offsets (no minimization)."""
    s0 = initial_state(model.config)
    recs = []
    for i, (H, d) in enumerate(zip(fields, offsets)):
        s = s0.copy(twin=TwinLine(s0.twin.angle, d))
        recs.append(make_record(model, i, float(i), np.array(H, float), s, recs[-1] if recs else None))
    tr = Trace()
    tr.records = recs
    return tr


def loop_fields():
    h = [0.0, 0.5, 1.0, 0.5, 0.0, -0.5, -1.0, -0.5, 0.0, 0.5, 1.0]
    return [(x, 0.0) for x in h]


@pytest.fixture(scope="module")
def loop(model):
    offs = [0.0, 0.0, 0.2, 0.2, 0.1, 0.1, 0.25, 0.25, 0.15, 0.15, 0.25]
    return synthetic_trace(model, loop_fields(), offs)


def test_header_only_for_empty_trace(tmp_path):
    main, canceled = write_trace(Trace(), tmp_path)
    assert main.read_text() == HEADER + "\n"
    assert canceled.read_text() == "episode," + HEADER + "\n"
    assert ",".join(TRACE_COLUMNS) == HEADER


def test_rows_and_roundtrip(tmp_path, loop):
    loop.canceled = [loop.records[3:5]]
    try:
        main, canceled = write_trace(loop, tmp_path)
    finally:
        loop.canceled = []
    cols = read_trace_csv(main)
    assert len(cols["i"]) == len(loop.records)
    # full precision: bit-exact after reading back
    assert np.array_equal(cols["E_total"], [r.energy.total for r in loop.records])
    assert np.array_equal(cols["vol_frac"], [r.vol_frac for r in loop.records])
    assert np.array_equal(cols["Hx"], [r.H[0] for r in loop.records])
    with canceled.open() as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 3 and rows[1][0] == "0"
    text = main.read_text()
    assert ";" not in text


def test_last_cycle(loop):
    a, b, partial = last_cycle(loop.records)
    assert (a, b, partial) == (2, 11, False)
    short = loop.records[:5]
    assert last_cycle(short)[2] is True
    assert last_cycle([]) == (0, 0, True)


def test_summary(loop, tmp_path):
    s = summarize(loop)
    vf = np.array([r.vol_frac for r in loop.records[2:11]])
    assert s.loop_amplitude == pytest.approx(vf.max() - vf.min())
    # first zero field after the peak is step 4
    assert s.remanent_fraction == loop.records[4].vol_frac
    assert s.switching_field_up == 1.0
    assert not s.blocked and not s.partial
    p = write_summary(s, tmp_path)
    d = json.loads(p.read_text())
    assert d["switching_field_up"] == 1.0
    assert summarize(loop) == s


def test_switching_blocked(model):
    tr = synthetic_trace(model, loop_fields()[:4], [0.0] * 4)
    assert switching_field(tr.records) == BLOCKED
    assert summarize(tr).blocked


def test_spontaneous_strain():
    assert spontaneous_strain(np.diag([0.026, -0.01])) == pytest.approx(0.026)
    A = np.array([[0.0, 0.02], [0.02, 0.0]])
    assert spontaneous_strain(A) == pytest.approx(0.02)
    assert spontaneous_strain(np.zeros((2, 2))) == 0.0


def test_field_abscissa():
    H = np.array([[0.0, 0.0], [0.5, 0.0], [-0.3, 0.0], [0.0, 0.7]])
    x = field_abscissa(H)
    assert np.allclose(x, [0.0, 0.5, -0.3, -0.7])
    e = np.array([np.cos(0.2), np.sin(0.2)])
    assert np.allclose(field_abscissa(np.outer([0.1, -0.4], e)), [0.1, -0.4])


def test_plot_data(loop, tmp_path):
    vf_path, mx_path = emit_plot_data(loop, tmp_path)
    for p, col in ((vf_path, "vol_frac"), (mx_path, "mx_avg")):
        lines = p.read_text().splitlines()
        assert lines[0] == f"# H {col}"
        assert len(lines) == len(loop.records) + 1
    data = np.loadtxt(mx_path)
    assert np.all(np.abs(data[:, 1]) <= 1.0)
    assert np.array_equal(data[:, 0], [r.H[0] for r in loop.records])
