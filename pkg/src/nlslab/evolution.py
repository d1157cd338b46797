"""Strang-split time integration of the u- and v-equations.

u-equation::

    i u_t = p^2 u / 2 + F(u)

v-equation on (0, 1] (pseudo-conformal side)::

    i v_t = p^2 v / 2 + t^(alpha0 - 2) F~(t, v),
    F~(t, v) = sum_n conj(lam_n) exp(-i (n-1) |x|^2 / 2t) F_n(v)

The nonlinear substep solves the pointwise ODE ``i w' = G(w)`` by RK4, or by
an exact phase rotation when ``F`` is gauge invariant with a real coefficient.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .nonlinearity import CoefficientSeq, eval_F
from .spectral import Field, Grid, J_values, save_field

__all__ = [
    "BlowUpError",
    "BlowUpEvent",
    "TimeMesh",
    "TrajectoryField",
    "evolve",
    "f_tilde",
    "mass_derivative",
    "save_trajectory",
    "step_u",
    "step_v",
]

RK4_RATE_BUDGET = 0.02  # h * |G(w)/w| per RK4 substep; local error ~ budget^5 ~ 3e-9
BLOWUP_FACTOR = 1e6
MAX_SUBSTEPS = 100_000  # RK4 substeps per nonlinear half; more means the flow is blowing up


class BlowUpError(FloatingPointError):
    def __init__(self, message: str, t_last: float | None = None):
        super().__init__(message)
        self.t_last = t_last


@dataclass(frozen=True)
class BlowUpEvent:
    t_last_good: float
    reason: str


@dataclass(frozen=True)
class TimeMesh:
    """Strictly monotone time nodes with trapezoid weights."""

    nodes: np.ndarray
    kind: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.nodes, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise ValueError("a mesh needs at least two nodes")
        dt = np.diff(t)
        if not (np.all(dt > 0) or np.all(dt < 0)):
            raise ValueError("mesh nodes must be strictly monotone")
        object.__setattr__(self, "nodes", t)

    @classmethod
    def uniform(cls, t_start: float, t_end: float, steps: int) -> "TimeMesh":
        return cls(np.linspace(t_start, t_end, steps + 1), "uniform", {"dt": (t_end - t_start) / steps})

    @classmethod
    def geometric(cls, ratio: float = 0.9, t_min: float = 1e-3, t_max: float = 1.0) -> "TimeMesh":
        """Nodes ``t_max * ratio**k`` down to the last one not below ``t_min``."""
        if not 0 < ratio < 1:
            raise ValueError("ratio must lie in (0, 1)")
        m = int(math.floor(math.log(t_min / t_max) / math.log(ratio) + 1e-12))
        nodes = t_max * ratio ** np.arange(m + 1)
        return cls(nodes, "geometric", {"ratio": ratio, "t_min": t_min})

    @property
    def weights(self) -> np.ndarray:
        h = np.abs(np.diff(self.nodes))
        w = np.zeros_like(self.nodes)
        w[:-1] += h / 2
        w[1:] += h / 2
        return w

    @property
    def forward(self) -> bool:
        return self.nodes[1] > self.nodes[0]

    def __len__(self) -> int:
        return self.nodes.size

    def refined(self, factor: int = 2) -> "TimeMesh":
        """Insert ``factor - 1`` equally spaced points in every interval."""
        t = self.nodes
        parts = [np.linspace(a, b, factor + 1)[:-1] for a, b in zip(t[:-1], t[1:])]
        return TimeMesh(np.concatenate(parts + [t[-1:]]), self.kind + "-refined", dict(self.params))


@dataclass(frozen=True)
class TrajectoryField:
    """Snapshots on one grid, one per mesh node."""

    grid: Grid
    mesh: TimeMesh
    values: np.ndarray = field(repr=False)
    problem_tag: str = "u_equation"
    diagnostics: dict | None = field(default=None, repr=False)
    event: BlowUpEvent | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        if v.shape[1:] != self.grid.shape or v.shape[0] > len(self.mesh):
            raise ValueError("snapshot array does not match grid and mesh")
        if self.problem_tag not in ("u_equation", "v_equation"):
            raise ValueError(f"unknown problem tag {self.problem_tag!r}")
        object.__setattr__(self, "values", v)

    @property
    def times(self) -> np.ndarray:
        return self.mesh.nodes[: self.values.shape[0]]

    def field(self, i: int) -> Field:
        return Field(self.grid, self.values[i], float(self.times[i]))

    @property
    def snapshots(self) -> list[Field]:
        return [self.field(i) for i in range(self.values.shape[0])]

    def with_values(self, values: np.ndarray) -> "TrajectoryField":
        return TrajectoryField(self.grid, self.mesh, values, self.problem_tag)


# -- nonlinear pieces ---------------------------------------------------------


def _lambda_bound(seq: CoefficientSeq) -> float:
    if seq.tail_kind == "finite":
        return float(sum(abs(c) for c in seq.coeffs.values()))
    if seq.tail_kind == "geometric":
        return abs(seq.scale) / (1 - abs(seq.tail_param))
    return abs(seq.scale) / float(seq.tail_param)  # sum_n k!/(n..(n+k)) = 1/k


def _gauge_rate(seq: CoefficientSeq) -> float | None:
    """``lam`` when ``F = lam |u|^(alpha-1) u`` with real ``lam``, else None."""
    if seq.is_gauge_invariant and seq.has_real_coefficients:
        return seq.coefficient(1).real
    return None


def _pointwise_flow(G: Callable[[np.ndarray], np.ndarray], w: np.ndarray, tau: float, rate: float) -> np.ndarray:
    """RK4 for ``i w' = G(w)`` over ``tau``; ``rate`` bounds ``|G(w)| / |w|``."""
    need = abs(tau) * rate / RK4_RATE_BUDGET
    if not math.isfinite(need) or need > MAX_SUBSTEPS:
        raise BlowUpError("pointwise rate exceeds the resolvable range")
    m = max(1, int(math.ceil(need)))
    h = tau / m

    def rhs(z):
        try:
            return -1j * G(z)
        except ValueError as exc:
            raise BlowUpError(str(exc)) from exc

    for _ in range(m):
        k1 = rhs(w)
        k2 = rhs(w + 0.5 * h * k1)
        k3 = rhs(w + 0.5 * h * k2)
        k4 = rhs(w + h * k3)
        w = w + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return w


def _check(values: np.ndarray, cap: float | None, t: float | None) -> None:
    if not np.all(np.isfinite(values)):
        raise BlowUpError("non-finite values", t)
    if cap is not None and np.abs(values).max() > cap:
        raise BlowUpError("sup norm exceeded blow-up threshold", t)


def _nonlinear_u(values: np.ndarray, seq: CoefficientSeq, tau: float) -> np.ndarray:
    lam = _gauge_rate(seq)
    if lam is not None:
        return values * np.exp(-1j * lam * tau * np.abs(values) ** (seq.alpha - 1))
    rate = _lambda_bound(seq) * float(np.abs(values).max()) ** (seq.alpha - 1)
    return _pointwise_flow(lambda z: eval_F(seq, z), values, tau, rate)


def step_u(
    f: Field,
    dt: float,
    seq: CoefficientSeq,
    *,
    dealias: bool = True,
    blowup_cap: float | None = None,
) -> Field:
    """One Strang step of the u-equation (kinetic half, nonlinear, kinetic half)."""
    w = _u_step(f.grid, f.values, dt, seq, dealias, blowup_cap, f.time_tag)
    tag = None if f.time_tag is None else f.time_tag + dt
    return Field(f.grid, w, tag)


def _u_step(g: Grid, w, dt, seq, dealias, cap, t) -> np.ndarray:
    w = g.propagate(w, 0.5 * dt)
    if not seq.is_zero:
        w = _nonlinear_u(w, seq, dt)
        if dealias:
            w = g.dealias(w)
    w = g.propagate(w, 0.5 * dt)
    _check(w, cap, t)
    return w


def f_tilde(seq: CoefficientSeq, t: float, grid: Grid, values: np.ndarray) -> np.ndarray:
    """``F~(t, v) = e^{i phi} |v|^alpha conj(H(conj(w) e^{i phi}))`` with ``phi = |x|^2 / 2t``."""
    v = np.asarray(values, dtype=complex)
    r = np.abs(v)
    nz = r > 0
    w = np.where(nz, np.exp(1j * np.angle(v)), 1.0)
    rot = np.exp(0.5j * grid.r2 / t)
    out = rot * r**seq.alpha * np.conj(seq.phase(np.conj(w) * rot))
    return np.where(nz, out, 0.0)


def _nonlinear_v(values: np.ndarray, seq: CoefficientSeq, t_mid: float, tau: float, grid: Grid) -> np.ndarray:
    lam = _gauge_rate(seq)
    if lam is not None:
        return values * np.exp(-1j * lam * tau * np.abs(values) ** (seq.alpha - 1))
    rate = _lambda_bound(seq) * float(np.abs(values).max()) ** (seq.alpha - 1)
    return _pointwise_flow(lambda z: f_tilde(seq, t_mid, grid, z), values, tau, rate)


def _coef_integral(alpha0: float, a: float, b: float) -> float:
    """``int_a^b s^(alpha0 - 2) ds``."""
    e = alpha0 - 1.0
    if abs(e) < 1e-14:
        return math.log(b / a)
    return (b**e - a**e) / e


def step_v(
    f: Field,
    t_from: float,
    t_to: float,
    seq: CoefficientSeq,
    *,
    alpha0: float | None = None,
    dealias: bool = True,
    blowup_cap: float | None = None,
) -> Field:
    """One Strang step of the v-equation from ``t_from`` to ``t_to``.

    The weight ``s^(alpha0-2)`` is integrated exactly across the step and the
    chirp ``exp(-i (n-1)|x|^2 / 2s)`` is frozen at the midpoint.
    """
    if t_from <= 0 or t_to <= 0:
        raise ValueError("the v-equation lives on t > 0")
    w = _v_step(f.grid, f.values, t_from, t_to, seq, alpha0, dealias, blowup_cap)
    return Field(f.grid, w, t_to)


def _v_step(g: Grid, w, t_from, t_to, seq, alpha0, dealias, cap) -> np.ndarray:
    if alpha0 is None:
        alpha0 = g.d * (seq.alpha - 1.0) / 2.0
    dt = t_to - t_from
    w = g.propagate(w, 0.5 * dt)
    if not seq.is_zero:
        tau = _coef_integral(alpha0, t_from, t_to)
        w = _nonlinear_v(w, seq, 0.5 * (t_from + t_to), tau, g)
        if dealias:
            w = g.dealias(w)
    w = g.propagate(w, 0.5 * dt)
    _check(w, cap, t_from)
    return w


def mass_derivative(f: Field, seq: CoefficientSeq) -> float:
    """``d/dt ||u||^2 = 2 Im int conj(u) F(u) dx`` at ``u = f``."""
    g = f.grid
    integrand = np.conj(f.values) * eval_F(seq, f.values)
    return float(2.0 * np.imag(np.sum(integrand)) * g.cell)


# -- trajectories ---------------------------------------------------------------


def node_diagnostics(grid: Grid, values: np.ndarray, t: float, pull_time: float) -> dict:
    """mass, H1, H^{0,1} norm of the pullback ``U(-pull_time) u``, ``||J(pull_time) u||``, leak."""
    mass = float(grid.l2(values) ** 2)
    h1 = float(grid.l2(grid.japanese_p(values, 1.0)))
    back = grid.propagate(values, -pull_time)
    h01 = float(grid.l2(back) + grid.l2(np.sqrt(1.0 + grid.r2) * back))
    jn = float(np.sqrt(np.sum(grid.l2(J_values(grid, values, pull_time)) ** 2)))
    return {"t": t, "mass": mass, "H1": h1, "H01_pullback": h01, "J_norm": jn, "boundary_leak": grid.boundary_leak(values)}


def evolve(
    data: Field,
    mesh: TimeMesh,
    seq: CoefficientSeq,
    problem_tag: str = "u_equation",
    *,
    max_dt: float = 0.01,
    t0: float = 1.0,
    alpha0: float | None = None,
    dealias: bool = True,
    diagnostics: bool = True,
    on_step: Callable[[int, np.ndarray], None] | None = None,
) -> TrajectoryField:
    """Integrate from ``mesh.nodes[0]`` through every node.

    Each interval is split into equal Strang steps no longer than ``max_dt``.
    For the u-equation the pullback diagnostics use time ``t + t0``; for the
    v-equation they use ``t``. A blow-up stops the run and the returned
    trajectory carries the snapshots computed so far plus the event.
    """
    g = data.grid
    nodes = mesh.nodes
    out = np.empty((len(nodes),) + g.shape, dtype=complex)
    out[0] = data.values
    cap = BLOWUP_FACTOR * max(float(np.abs(data.values).max()), 1e-300)
    w = data.values
    event = None
    done = 1
    for i in range(1, len(nodes)):
        a, b = nodes[i - 1], nodes[i]
        m = max(1, int(math.ceil(abs(b - a) / max_dt - 1e-9)))
        h = (b - a) / m
        try:
            if seq.is_zero:
                m = 0  # free flow is exact in one multiplier
                w = g.propagate(w, b - a)
            for k in range(m):
                s0 = a + k * h
                if problem_tag == "u_equation":
                    w = _u_step(g, w, h, seq, dealias, cap, s0)
                else:
                    w = _v_step(g, w, s0, s0 + h, seq, alpha0, dealias, cap)
        except BlowUpError as exc:
            event = BlowUpEvent(float(a), str(exc))
            break
        out[i] = w
        done = i + 1
        if on_step is not None:
            on_step(i, w)
    vals = out[:done]
    diag = None
    if diagnostics:
        shift = t0 if problem_tag == "u_equation" else 0.0
        rows = [node_diagnostics(g, vals[i], float(nodes[i]), float(nodes[i]) + shift) for i in range(done)]
        diag = {k: np.array([r[k] for r in rows]) for k in rows[0]}
    return TrajectoryField(g, mesh, vals, problem_tag, diag, event)


def save_trajectory(traj: TrajectoryField, out_dir: str | Path, *, every: int = 1, extra: dict | None = None) -> Path:
    """Manifest JSON, per-snapshot binary fields and a diagnostics CSV."""
    out_dir = Path(out_dir)
    (out_dir / "fields").mkdir(parents=True, exist_ok=True)
    names = []
    for i in range(0, traj.values.shape[0], every):
        name = f"snap_{i:05d}"
        save_field(traj.field(i), out_dir / "fields" / name)
        names.append(f"fields/{name}")
    manifest = {
        "grid": traj.grid.to_dict(),
        "problem_tag": traj.problem_tag,
        "mesh": {"kind": traj.mesh.kind, "params": traj.mesh.params, "nodes": traj.times.tolist()},
        "snapshots": names,
        "event": None if traj.event is None else {"t_last_good": traj.event.t_last_good, "reason": traj.event.reason},
    }
    if extra:
        manifest.update(extra)
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1))
    if traj.diagnostics is not None:
        cols = ["t", "mass", "H1", "H01_pullback", "J_norm", "boundary_leak"]
        with (out_dir / "diagnostics.csv").open("w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(cols)
            for i in range(len(traj.diagnostics["t"])):
                wr.writerow([repr(float(traj.diagnostics[c][i])) for c in cols])
    return out_dir / "manifest.json"
