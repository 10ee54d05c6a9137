"""Trace serialization, summary statistics and plot-ready data files."""

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

TRACE_COLUMNS = (
    "i", "t", "Hx", "Hy", "vol_frac", "mx_avg", "my_avg",
    "E_matrix", "E_particle", "E_zeeman", "E_demag", "E_anis", "E_total",
    "D_step", "Diss_acc", "est_lo", "est_hi", "backtracked",
)  # fmt: skip

SWITCH_THRESHOLD = 0.01
BLOCKED = "blocked"


def _fmt(x):
    # repr of a Python float is the shortest string that round-trips exactly
    return repr(float(x))


def record_row(rec):
    e = rec.energy
    return [
        str(int(rec.index)),
        _fmt(rec.t),
        _fmt(rec.H[0]),
        _fmt(rec.H[1]),
        _fmt(rec.vol_frac),
        _fmt(rec.m_avg[0]),
        _fmt(rec.m_avg[1]),
        _fmt(e.e_matrix),
        _fmt(e.e_particle),
        _fmt(e.e_zeeman),
        _fmt(e.e_demag),
        _fmt(e.e_anis),
        _fmt(e.total),
        _fmt(rec.d_step),
        _fmt(rec.diss_acc),
        _fmt(rec.est_lo),
        _fmt(rec.est_hi),
        "1" if rec.backtracked else "0",
    ]


def write_trace(trace, directory):
    """Write ``trace.csv`` (accepted steps) and ``trace_canceled.csv``.

    Canceled rows carry a leading ``episode`` column numbering the
    backtracking episode that removed them. Returns both paths.
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    main = d / "trace.csv"
    with main.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for rec in trace.records:
            w.writerow(record_row(rec))
    canceled = d / "trace_canceled.csv"
    with canceled.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("episode",) + TRACE_COLUMNS)
        for k, segment in enumerate(trace.canceled):
            for rec in segment:
                w.writerow([str(k)] + record_row(rec))
    return main, canceled


def read_trace_csv(path):
    """Columns of a trace CSV as float arrays keyed by header name."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    cols = {name: np.array([float(r[k]) for r in body]) for k, name in enumerate(header)}
    return cols


@dataclass(frozen=True)
class SummaryStats:
    switching_field_up: object  # Tesla, or BLOCKED
    loop_amplitude: float
    remanent_fraction: float
    spontaneous_strain: float
    partial: bool = False

    @property
    def blocked(self):
        return self.switching_field_up == BLOCKED

    def as_dict(self):
        return asdict(self)


def _fields(records):
    return np.array([r.H for r in records], dtype=float).reshape(-1, 2)


def principal_direction(H):
    """Unit direction of the first nonzero field sample (x axis if none)."""
    for h in H:
        n = math.hypot(h[0], h[1])
        if n > 0:
            return h / n
    return np.array([1.0, 0.0])


def field_abscissa(H, direction=None):
    """Signed field coordinate for hysteresis plots.

    The component along the protocol direction, minus the magnitude of the
    perpendicular component; a field turned by 90 degrees is thus plotted
    on the negative axis.
    """
    H = np.asarray(H, dtype=float).reshape(-1, 2)
    e = principal_direction(H) if direction is None else np.asarray(direction, float)
    along = H @ e
    perp = np.abs(H[:, 0] * e[1] - H[:, 1] * e[0])
    return along - perp


def last_cycle(records):
    """Slice bounds ``(a, b)`` of the last closed loop and a partial flag.

    A loop runs between the last two visits of the peak field along the
    protocol direction. Without two such visits the whole trace is used.
    """
    if not records:
        return 0, 0, True
    H = _fields(records)
    h = H @ principal_direction(H)
    top = h.max()
    if top <= 0:
        return 0, len(records), True
    peaks = np.flatnonzero(h >= top * (1.0 - 1e-9))
    # consecutive samples at the peak belong to the same visit
    visits = [p for k, p in enumerate(peaks) if k == 0 or p != peaks[k - 1] + 1]
    if len(visits) < 2:
        return 0, len(records), True
    return int(visits[-2]), int(visits[-1]) + 1, False


def switching_field(records, threshold=SWITCH_THRESHOLD):
    """``|H|`` at the first step whose volume fraction leaves the initial
    value by more than ``threshold``; ``BLOCKED`` if that never happens."""
    if not records:
        return BLOCKED
    vf0 = records[0].vol_frac
    for r in records:
        if abs(r.vol_frac - vf0) > threshold:
            return float(np.hypot(*r.H))
    return BLOCKED


def spontaneous_strain(A):
    """Largest absolute principal value of the symmetric part of ``A``."""
    A = np.asarray(A, dtype=float)
    S = 0.5 * (A + A.T)
    return float(np.max(np.abs(np.linalg.eigvalsh(S))))


def summarize(trace):
    records = trace.records
    a, b, partial = last_cycle(records)
    cyc = records[a:b]
    vf = np.array([r.vol_frac for r in cyc]) if cyc else np.zeros(1)
    amp = float(vf.max() - vf.min())
    # remanence: first zero field after the first peak inside the loop
    rem = float("nan")
    H = _fields(cyc)
    if len(cyc):
        h = H @ principal_direction(_fields(records))
        k0 = int(np.argmax(h))
        for k in range(k0, len(cyc)):
            if not np.any(H[k]):
                rem = float(cyc[k].vol_frac)
                break
    strain = 0.0
    if records:
        Hall = _fields(records)
        k = int(np.argmax(np.hypot(Hall[:, 0], Hall[:, 1])))
        strain = spontaneous_strain(records[k].state.A)
    return SummaryStats(switching_field(records), amp, rem, strain, partial)


def write_summary(stats, directory):
    path = Path(directory) / "summary.json"
    d = stats.as_dict()
    d = {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in d.items()}
    path.write_text(json.dumps(d, indent=2) + "\n")
    return path


def emit_plot_data(trace, directory, direction=None):
    """Write ``volfrac_vs_H.dat`` and ``mx_vs_H.dat`` in step order."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    recs = trace.records
    x = field_abscissa(_fields(recs), direction) if recs else np.zeros(0)
    out = []
    for name, col, values in (
        ("volfrac_vs_H.dat", "vol_frac", [r.vol_frac for r in recs]),
        ("mx_vs_H.dat", "mx_avg", [r.m_avg[0] for r in recs]),
    ):
        p = d / name
        with p.open("w") as fh:
            fh.write(f"# H {col}\n")
            for h, v in zip(x, values):
                fh.write(f"{_fmt(h)} {_fmt(v)}\n")
        out.append(p)
    return tuple(out)
