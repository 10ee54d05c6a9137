"""Dissipation, incremental minimization and the backtracking time stepper.

Each time step minimizes ``F(z) = E(t_i, z) + D(p_{i-1}, p(z))`` by a
preconditioned subgradient descent. ``D`` has a kink wherever a phase
entry of ``z`` equals its value at the previous step; there the zero
subgradient is selected and phase components whose one-sided slope does
not decrease ``F`` are dropped from the direction.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .energy import EnergyBreakdown, EnergyModel, initial_state
from .geometry import (
    N_KIN,
    line_polygon_chord,
    symmetric_difference_area,
    twin_frame,
    volume_fraction,
)

log = logging.getLogger(__name__)

STUCK = "stuck"
NEWTON_STEP_TOL = 1e-5


# --------------------------------------------------------------------------
# dissipation


def dissipation_distance(state_a, state_b, mesh, kappa):
    """``kappa`` times the area where the two phase fields differ."""
    return kappa * symmetric_difference_area(
        mesh, state_a.twin, state_b.twin, state_a.plus_phase, state_b.plus_phase
    )


def chord_length(mesh, twin):
    _, n = twin_frame(twin.angle)
    ends = line_polygon_chord(mesh.particle, n, mesh.center @ n + twin.offset)
    return 0.0 if ends is None else float(np.hypot(*(ends[1] - ends[0])))


def accumulated_dissipation(trace):
    """Sum of the step dissipations of the accepted records."""
    return float(sum(r.d_step for r in trace.records))


# --------------------------------------------------------------------------
# records


@dataclass
class StepRecord:
    index: int
    t: float
    H: np.ndarray
    state: object
    energy: EnergyBreakdown
    d_step: float
    diss_acc: float
    est_lo: float
    est_hi: float
    vol_frac: float
    m_avg: np.ndarray
    backtracked: bool = False
    seed: str = "warm"
    converged: bool = True
    iterations: int = 0
    estimate_ok: bool = True
    violation: float = 0.0
    lower_violated: bool = False

    @property
    def F(self):
        return self.energy.total + self.d_step


@dataclass
class Trace:
    records: list = field(default_factory=list)
    canceled: list = field(default_factory=list)
    episodes: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    budget_exceeded: bool = False

    def __len__(self):
        return len(self.records)

    def series(self, name):
        return np.array([getattr(r, name) for r in self.records])


# --------------------------------------------------------------------------
# descent machinery


def descent_direction(g, z, z_prev, phase_index, slopes, solve=None):
    """Descent direction of ``F`` or ``STUCK``.

    Parameters
    ----------
    g : gradient of the smooth part at ``z``, with the dissipation slope
        already added for phase entries away from their kink.
    slopes : dict ``k -> kappa*chord`` for phase entries sitting on the kink
        (``z[k] == z_prev[k]``), where the dissipation is ``slopes[k]*|dz_k|``.
    solve : callable ``(g, free_mask) -> v`` returning a preconditioned
        direction restricted to the free entries; defaults to ``-g``.

    At a kink the zero subgradient is used. Phase entries whose own one-sided
    slope is non-negative are dropped first; then, while the direction fails
    to descend, the phase entry with the largest one-sided slope is dropped
    (lowest index on ties).
    """
    g = np.asarray(g, dtype=float)
    if solve is None:

        def solve(gg, mask):
            return np.where(mask, -gg, 0.0)

    free = np.ones(g.size, dtype=bool)
    phase_index = list(phase_index)

    def one_sided(v, k):
        s = g[k] * v[k]
        if k in slopes:
            s += slopes[k] * abs(v[k])
        return s

    v = solve(g, free)
    for k in phase_index:
        if k in slopes and v[k] != 0.0 and one_sided(v, k) >= 0.0:
            free[k] = False
    v = solve(g, free)
    while True:
        if not np.any(v):
            return STUCK
        slope = float(g @ v) + sum(slopes[k] * abs(v[k]) for k in slopes)
        if slope < 0.0:
            return v
        cand = [k for k in phase_index if free[k] and v[k] != 0.0]
        if not cand:
            return STUCK
        worst = max(cand, key=lambda k: (one_sided(v, k), -k))
        free[worst] = False
        v = solve(g, free)


def directional_slope(g, v, slopes):
    return float(g @ v) + sum(s * abs(v[k]) for k, s in slopes.items())


def line_search(z, v, z_prev, phase_index, F, slope, c1=1e-4, bounds=None, f0=None,
                max_expand=12, min_step=1e-12):
    """Armijo step along ``v`` that never lets a phase entry cross its
    previous value.

    A step that would move ``z[k]`` (k in ``phase_index``) past
    ``z_prev[k]`` is shortened to land exactly on it. ``bounds`` maps an
    index to ``(lo, hi)`` box limits. Returns ``(alpha, z_new, F_new)``;
    ``alpha = 0`` if no acceptable step exists.
    """
    f0 = F(z) if f0 is None else f0
    alpha_max = math.inf
    landing = {}
    for k in phase_index:
        if v[k] == 0.0:
            continue
        dz = z[k] - z_prev[k]
        if dz != 0.0 and dz * v[k] < 0.0:
            a = -dz / v[k]
            if a < alpha_max:
                alpha_max = a
            landing[k] = a
    for k, (lo, hi) in (bounds or {}).items():
        if v[k] > 0.0:
            a = (hi - z[k]) / v[k]
        elif v[k] < 0.0:
            a = (lo - z[k]) / v[k]
        else:
            continue
        alpha_max = min(alpha_max, max(a, 0.0))

    def point(a):
        zn = z + a * v
        for k, ak in landing.items():
            if a >= ak:
                zn[k] = z_prev[k]
        for k, (lo, hi) in (bounds or {}).items():
            zn[k] = min(max(zn[k], lo), hi)
        return zn

    def ok(a, fa):
        return fa <= f0 + c1 * a * slope and fa < f0

    a = min(1.0, alpha_max)
    zn = point(a)
    fa = F(zn)
    if ok(a, fa):
        # expand while the full step keeps improving
        n = 0
        while a < alpha_max and n < max_expand:
            b = min(2.0 * a, alpha_max)
            zb = point(b)
            fb = F(zb)
            if not (ok(b, fb) and fb < fa):
                break
            a, zn, fa = b, zb, fb
            n += 1
        return a, zn, fa
    while a > min_step:
        a *= 0.5
        zn = point(a)
        fa = F(zn)
        if ok(a, fa):
            return a, zn, fa
    return 0.0, z.copy(), f0


# --------------------------------------------------------------------------
# the incremental problem


@dataclass
class EstimateCheck:
    passed: bool
    lhs: float
    lower: float
    upper: float
    tol: float

    @property
    def violation(self):
        return max(0.0, self.lhs - self.upper - self.tol, self.lower - self.tol - self.lhs)


class IncrementalSolver:
    """Minimizes ``E(t_i, .) + D(p_prev, .)`` for one time step."""

    def __init__(self, model):
        self.model = model
        self.config = model.config
        self.sp = model.solver
        self.kappa = model.material.kappa
        self.layout = model.layout
        self.mesh = model.mesh

    # F and its pieces
    def dissipation(self, prev, state):
        return dissipation_distance(prev, state, self.mesh, self.kappa)

    def F(self, z, template, prev, H):
        s = self.layout.unpack(z, template)
        return self.model.total(s, H) + self.dissipation(prev, s)

    def _bounds(self, template):
        L = self.layout
        dmax = self.mesh.support(template.twin.angle) - 1e-3 * self.mesh.radius
        return {L.offset: (-dmax, dmax)}

    def _gradient(self, z, template, H):
        L = self.layout
        f = lambda zz: self.model.energy_z(zz, template, H)  # noqa: E731
        h = self.sp.fd_step
        g = np.zeros_like(z)
        for i in range(z.size):
            # translations do not change the energy (periodic cell)
            if L.kin.start <= i < L.kin.start + 2:
                continue
            zp = z.copy()
            zm = z.copy()
            zp[i] += h
            zm[i] -= h
            g[i] = (f(zp) - f(zm)) / (2.0 * h)
        return g

    def _hessian(self, z, template, H):
        """Curvature model: FD Hessian of the cheap terms, exact demag
        curvature in the magnetization angles, and the d-d entry from the
        full energy."""
        L = self.layout
        model = self.model
        idx = [i for i in range(z.size) if not (L.kin.start <= i < L.kin.start + 2)]
        f = lambda zz: model.cheap_energy(self.layout.unpack(zz, template), H)  # noqa: E731
        n = z.size
        Hm = np.zeros((n, n))
        h = 1e-4
        f0 = f(z)
        fp = {}
        fm = {}
        for i in idx:
            zp = z.copy()
            zp[i] += h
            zm = z.copy()
            zm[i] -= h
            fp[i] = f(zp)
            fm[i] = f(zm)
            Hm[i, i] = (fp[i] - 2.0 * f0 + fm[i]) / (h * h)
        for a_, i in enumerate(idx):
            for j in idx[a_ + 1 :]:
                zpp = z.copy()
                zpp[i] += h
                zpp[j] += h
                zmm = z.copy()
                zmm[i] -= h
                zmm[j] -= h
                v = (f(zpp) - fp[i] - fp[j] + 2.0 * f0 - fm[i] - fm[j] + f(zmm)) / (2.0 * h * h)
                Hm[i, j] = Hm[j, i] = v
        # demagnetization curvature in the angles
        s = self.layout.unpack(z, template)
        D = model.demag_matrix(s)
        c = model.material.Ms2_over_mu0
        th = s.mag_angle
        M = np.array([np.cos(th[0]), np.sin(th[0]), np.cos(th[1]), np.sin(th[1])])
        dM = np.zeros((4, 2))
        dM[0:2, 0] = (-np.sin(th[0]), np.cos(th[0]))
        dM[2:4, 1] = (-np.sin(th[1]), np.cos(th[1]))
        Htt = 2.0 * c * (dM.T @ D @ dM)
        Htt[0, 0] -= 2.0 * c * float(M[0:2] @ (D @ M)[0:2])
        Htt[1, 1] -= 2.0 * c * float(M[2:4] @ (D @ M)[2:4])
        Hm[L.theta, L.theta] += Htt
        # full-energy curvature along the phase entries
        for k in self.layout.phase_index:
            hd = 1e-4 * (self.mesh.radius if k == L.offset else 1.0)
            zp = z.copy()
            zp[k] += hd
            zm = z.copy()
            zm[k] -= hd
            e0 = model.energy_z(z, template, H)
            Hm[k, k] = (
                model.energy_z(zp, template, H) - 2.0 * e0 + model.energy_z(zm, template, H)
            ) / (hd * hd)
        return Hm

    def _solver_for(self, Hm, blocked=()):
        L = self.layout
        gauge = np.zeros(Hm.shape[0], dtype=bool)
        gauge[L.kin.start : L.kin.start + 2] = True
        gauge[list(blocked)] = True
        scale = max(1.0, float(np.max(np.abs(np.diag(Hm)))))

        def solve(g, free):
            free = free & ~gauge
            v = np.zeros_like(g)
            if not np.any(free):
                return v
            Hf = Hm[np.ix_(free, free)]
            w, U = np.linalg.eigh(0.5 * (Hf + Hf.T))
            w = np.maximum(np.abs(w), 1e-14 * scale)
            v[free] = -(U @ ((U.T @ g[free]) / w))
            return v

        return solve

    def minimize(self, start, prev, H, max_iter=None):
        """Descent from ``start`` for the step whose previous state is ``prev``.

        Returns ``(state, converged, iterations)``.
        """
        L = self.layout
        sp = self.sp
        z = L.pack(start)
        zprev = L.pack(prev)
        Fz = lambda zz: self.F(zz, start, prev, H)  # noqa: E731
        bounds = self._bounds(start)
        lo, hi = bounds[L.offset]
        z[L.offset] = min(max(z[L.offset], lo), hi)
        f = Fz(z)
        max_iter = sp.max_iter if max_iter is None else max_iter
        converged = False
        it = 0
        for it in range(1, max_iter + 1):
            g = self._gradient(z, start, H)
            slopes = {}
            for k in L.phase_index:
                if k == L.offset:
                    ch = self.kappa * chord_length(self.mesh, L.unpack(z, start).twin)
                else:
                    ch = self.kappa * self.mesh.radius * 2.0  # rough slope for the angle
                dz = z[k] - zprev[k]
                if dz == 0.0:
                    slopes[k] = ch
                else:
                    g[k] += ch * math.copysign(1.0, dz)
            # minimal-norm subgradient for the convergence test
            r = g.copy()
            for k, s in slopes.items():
                r[k] = math.copysign(max(0.0, abs(g[k]) - s), g[k])
            r[L.kin.start : L.kin.start + 2] = 0.0
            # entries held at their box limit by an outward push
            blocked = [
                k for k, (blo, bhi) in bounds.items()
                if (z[k] >= bhi and g[k] < 0.0) or (z[k] <= blo and g[k] > 0.0)
            ]
            r[blocked] = 0.0
            Hm = self._hessian(z, start, H)
            v = descent_direction(g, z, zprev, L.phase_index, slopes, self._solver_for(Hm, blocked))
            if v is STUCK:
                converged = True
                break
            # small gradient alone is not enough: a nearly vanished twin has a
            # tiny gradient in its magnetization angle but an O(1) Newton step
            if np.max(np.abs(r)) < sp.grad_tol and np.max(np.abs(v)) < NEWTON_STEP_TOL:
                converged = True
                break
            slope = directional_slope(g, v, slopes)
            alpha, zn, fn = line_search(
                z, v, zprev, L.phase_index, Fz, slope, sp.armijo_c1, bounds, f0=f
            )
            if alpha == 0.0:
                converged = np.max(np.abs(r)) < 1e3 * sp.grad_tol
                break
            progress = f - fn
            z, f = zn, fn
            if progress <= 1e-15 * max(1.0, abs(f)):
                converged = True
                break
        state = L.unpack(z, start)
        return state, converged, it


# --------------------------------------------------------------------------
# stepping


def _seed_states(solver, start, names):
    out = []
    L = solver.layout
    dmax = solver.mesh.support(start.twin.angle) - solver.mesh.h
    for name in names:
        s = start.copy()
        if name == "flip1":
            s.mag_angle[0] += np.pi
        elif name == "flip2":
            s.mag_angle[1] += np.pi
        elif name == "flip_both":
            s.mag_angle += np.pi
        elif name in ("offset_plus", "offset_minus"):
            sign = 1.0 if name == "offset_plus" else -1.0
            z = L.pack(s)
            z[L.offset] = sign * dmax
            s = L.unpack(z, s)
        out.append((name, s))
    return out


def opposed_flip_seeds(state, H, allowed):
    """Flip seeds for twins whose magnetization points against ``H``.

    Reversing such a magnetization through the anisotropy barrier is out of
    reach of a local descent, so these seeds are worth trying every step.
    """
    H = np.asarray(H, dtype=float)
    opposed = [float(H @ state.magnetization(p)) < 0.0 for p in (1, 2)]
    names = []
    if opposed[0]:
        names.append("flip1")
    if opposed[1]:
        names.append("flip2")
    if all(opposed):
        names.append("flip_both")
    return tuple(n for n in names if n in allowed)


def _wrap_angles(state):
    s = state.copy()
    s.mag_angle = np.mod(s.mag_angle + np.pi, 2.0 * np.pi) - np.pi
    return s


def make_record(model, index, t, H, state, prev_rec, dH_prev=None, **flags):
    """Evaluate energies, dissipation and estimates for an accepted state."""
    e = model.breakdown(state, H)
    if prev_rec is None:
        d_step = 0.0
        diss = 0.0
        lo = hi = 0.0
    else:
        d_step = dissipation_distance(prev_rec.state, state, model.mesh, model.material.kappa)
        diss = prev_rec.diss_acc + d_step
        # integrals of dE/dt over the step for the old and the new state
        hi = model.zeeman_energy(prev_rec.state, H) - model.zeeman_energy(prev_rec.state, prev_rec.H)
        lo = model.zeeman_energy(state, H) - model.zeeman_energy(state, prev_rec.H)
    m_avg = model.particle_mean_magnetization(state)
    rec = StepRecord(
        index=index,
        t=float(t),
        H=np.asarray(H, dtype=float).copy(),
        state=state,
        energy=e,
        d_step=d_step,
        diss_acc=diss,
        est_lo=lo,
        est_hi=hi,
        vol_frac=volume_fraction(state, model.mesh),
        m_avg=m_avg,
        **flags,
    )
    if prev_rec is not None:
        chk = check_energy_estimates(prev_rec, rec, model.solver.tol_E_rel)
        rec.estimate_ok = chk.passed
        rec.violation = chk.violation
        rec.lower_violated = chk.lhs < chk.lower - chk.tol
    return rec


def check_energy_estimates(prev, cur, tol_rel=1e-3):
    """Two-sided discrete energy estimate for the step ``prev -> cur``.

    With ``lhs = E(t_i, z_i) + D(p_{i-1}, p_i) - E(t_{i-1}, z_{i-1})`` the
    step passes if ``est_lo - tol <= lhs <= est_hi + tol`` where ``est_hi``
    and ``est_lo`` integrate the explicit time derivative of the energy
    along the old and the new state respectively.
    """
    lhs = cur.energy.total + cur.d_step - prev.energy.total
    tol = tol_rel * max(1.0, abs(cur.energy.total))
    ok = (lhs <= cur.est_hi + tol) and (lhs >= cur.est_lo - tol)
    return EstimateCheck(ok, lhs, cur.est_lo, cur.est_hi, tol)


def incremental_step(solver, prev, index, t, H, seeds=("warm",), start=None):
    """Solve step ``index`` from the accepted record ``prev``.

    Every seed in ``seeds`` is minimized; the lowest ``F`` wins, ties going
    to the earlier seed. ``start`` overrides the warm start state.
    """
    model = solver.model
    base = prev.state if start is None else start
    best = None
    for name, s0 in _seed_states(solver, base, seeds):
        s, conv, its = solver.minimize(s0, prev.state, H)
        f = model.total(s, H) + solver.dissipation(prev.state, s)
        if best is None or f < best[0] - 1e-12 * max(1.0, abs(f)):
            best = (f, name, s, conv, its)
    f, name, s, conv, its = best
    s = _wrap_angles(s)
    return make_record(model, index, t, H, s, prev, seed=name, converged=conv, iterations=its)


def free_macro_strain_step(solver, prev, index, t, H, seeds=("warm",), start=None):
    """``incremental_step`` with the macroscopic strain among the unknowns."""
    if not solver.layout.free_A:
        raise ValueError("free_macro_strain_step needs a layout with free macroscopic strain")
    return incremental_step(solver, prev, index, t, H, seeds, start)


def relax_initial(solver, protocol, state=None):
    """Relax the initial state at ``t_0`` (the twin line may not move
    unless the energy pushes harder than the dissipation allows)."""
    model = solver.model
    s0 = initial_state(model.config) if state is None else state
    t0 = protocol.times[0]
    H0 = protocol.H(t0)
    s, conv, its = solver.minimize(s0, s0, H0)
    s = _wrap_angles(s)
    rec = make_record(model, 0, t0, H0, s, None, converged=conv, iterations=its)
    rec.d_step = dissipation_distance(s0, s, model.mesh, model.material.kappa)
    rec.diss_acc = rec.d_step
    return rec


def run_evolution(config, model=None, protocol=None, progress=None):
    """Sweep the protocol with warm starts, restart seeds and backtracking.

    When the two-sided estimate fails at step ``i`` (the new state would
    have been better already at ``t_{i-1}``), step ``i-1`` is re-solved from
    the new state; this walks backwards while the estimate keeps failing and
    the re-solve improves, after which the sweep resumes forward from the
    earliest revised step. Replaced records are archived in
    ``trace.canceled``.
    """
    model = EnergyModel(config) if model is None else model
    protocol = config.protocol if protocol is None else protocol
    solver = IncrementalSolver(model)
    sp = config.solver
    times = protocol.times
    fields = protocol.fields
    N = len(times)
    leg = max(1, config.protocol_params.steps_per_leg)
    trace = Trace()
    records = [relax_initial(solver, protocol)]
    episodes_in_leg = {}
    all_seeds = tuple(sp.seeds)
    i = 1
    while i < N:
        if i % sp.seed_interval == 0:
            use_seeds = all_seeds
        elif not sp.flip_opposed:
            use_seeds = ("warm",)
        else:
            use_seeds = ("warm",) + opposed_flip_seeds(records[i - 1].state, fields[i], all_seeds)
        rec = incremental_step(solver, records[i - 1], i, times[i], fields[i], use_seeds)
        if progress is not None:
            progress(rec)
        if rec.lower_violated:
            leg_id = (i - 1) // leg
            used = episodes_in_leg.get(leg_id, 0)
            if used < sp.max_backtrack_per_leg:
                episodes_in_leg[leg_id] = used + 1
                j0 = _backtrack(solver, records, rec, i, leg, trace, times, fields)
                if j0 is not None:
                    i = j0 + 1
                    continue
            else:
                trace.budget_exceeded = True
                trace.diagnostics.append(f"backtracking budget exhausted at step {i}")
        records.append(rec)
        i += 1
    trace.records = records
    for r in records:
        if not r.estimate_ok:
            trace.diagnostics.append(
                f"step {r.index}: energy estimate violated by {r.violation:.3e}"
            )
    return trace


def _backtrack(solver, records, failing, i, leg, trace, times, fields):
    """Revise steps before ``i``; returns the earliest revised index or None."""
    model = solver.model
    new_state = failing.state
    j = i - 1
    revised = {}
    while j >= 1 and j >= i - leg:
        old = records[j]
        prev = revised.get(j - 1, records[j - 1])
        s, conv, its = solver.minimize(new_state, prev.state, fields[j])
        s = _wrap_angles(s)
        cand = make_record(
            model, j, times[j], fields[j], s, prev, backtracked=True, seed="backtrack",
            converged=conv, iterations=its,
        )
        if cand.F >= old.F - 1e-9 * max(1.0, abs(old.F)):
            break
        revised[j] = cand
        new_state = s
        if cand.estimate_ok:
            break
        j -= 1
    if not revised:
        return None
    j0 = min(revised)
    canceled = records[j0:] + [failing]
    trace.canceled.append(canceled)
    trace.episodes.append({"trigger": i, "first_revised": j0, "canceled": len(canceled)})
    del records[j0:]
    # the revised records, earliest first, have consistent predecessors only
    # for the earliest one; recompute the rest forward from it
    records.append(revised[j0])
    return j0
