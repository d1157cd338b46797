"""Pseudo-conformal transform, its norm identities and scattering profiles."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .evolution import TimeMesh, TrajectoryField, evolve
from .nonlinearity import CoefficientSeq
from .spectral import Field, Grid, J_values, dilate, save_field

__all__ = [
    "ScatterReport",
    "extract_profile",
    "h11_both_directions",
    "j_combination_check",
    "lemma_l7_check",
    "pct_backward",
    "pct_forward",
    "save_scatter_report",
]

PCT_MAX_TU = 3.0


def pct_forward(u: Field, t_u: float, *, leak_tol: float = 1e-5, max_tu: float = PCT_MAX_TU) -> Field:
    """``v(s, x) = s^{-d/2} e^{i|x|^2/2s} conj(u(t_u, x/s))`` with ``s = 1/(1+t_u)``.

    Stretching by ``1/s`` samples ``u`` outside the box, where it is taken to
    vanish; ``u`` must therefore have decayed at the boundary.
    """
    if t_u < 0:
        raise ValueError("transform defined for t_u >= 0")
    if t_u > max_tu:
        raise ValueError(f"t_u={t_u} exceeds the resampling window (<= {max_tu})")
    g = u.grid
    s = 1.0 / (1.0 + t_u)
    if t_u > 0 and u.boundary_leak() > leak_tol:
        raise ValueError(f"field has not decayed at the boundary (leak {u.boundary_leak():.1e})")
    stretched = dilate(g, u.values, s)  # s^{-d/2} u(x/s)
    return Field(g, np.exp(0.5j * g.r2 / s) * np.conj(stretched), s)


def pct_backward(v: Field, s: float) -> Field:
    """Inverse of ``pct_forward``: returns ``u`` at ``t_u = (1-s)/s``."""
    if not 0 < s <= 1:
        raise ValueError("transform defined for 0 < s <= 1")
    g = v.grid
    shrunk = dilate(g, v.values, 1.0 / s)  # s^{d/2} v(s x)
    return Field(g, np.exp(0.5j * s * g.r2) * np.conj(shrunk), (1.0 - s) / s)


def lemma_l7_check(traj: TrajectoryField, *, times=None, leak_tol: float = 1e-5) -> list[dict]:
    """Gaps in ``||u(t)|| = ||v(1/(1+t))||`` and ``||J(t+1) u(t)|| = ||p v(1/(1+t))||``.

    ``v`` is the transform of each snapshot. Rows carry ``t``, ``mass_gap``
    and ``jnorm_gap`` (relative).
    """
    g = traj.grid
    ts = traj.times
    idx = range(len(ts)) if times is None else [int(np.argmin(np.abs(ts - t))) for t in times]
    rows = []
    for i in idx:
        t = float(ts[i])
        if t > PCT_MAX_TU:
            continue
        u = traj.field(i)
        v = pct_forward(u, t, leak_tol=leak_tol)
        nu, nv = g.l2(u.values), g.l2(v.values)
        ju = np.sqrt(np.sum(g.l2(J_values(g, u.values, t + 1.0)) ** 2))
        pv = np.sqrt(sum(g.l2(g.p(v.values, ax)) ** 2 for ax in range(g.d)))
        rows.append({
            "t": t,
            "mass_gap": float(abs(nu - nv) / max(nu, 1e-300)),
            "jnorm_gap": float(abs(ju - pv) / max(ju, 1e-300)),
        })
    return rows


def _h01(g: Grid, values: np.ndarray) -> float:
    return float(g.l2(values) + g.l2(np.sqrt(1.0 + g.r2) * values))


def _h11(g: Grid, values: np.ndarray) -> float:
    return float(g.l2(g.japanese_p(values, 1.0)) + g.l2(np.sqrt(1.0 + g.r2) * values))


@dataclass
class ScatterReport:
    """Pullback Cauchy table and the profile estimate."""

    times: np.ndarray
    cauchy_norms: np.ndarray
    mass: np.ndarray
    pullback_norms: np.ndarray
    profile: Field
    rate_fit: float
    monotone: bool
    norm_kind: str = "H01"
    both_directions: "ScatterReport | None" = None
    extra: dict = field(default_factory=dict)

    def gap(self, t_a: float, t_b: float | None = None) -> float:
        """Cauchy norm between the pullbacks nearest to ``t_a`` and ``t_b`` (default final)."""
        ia = int(np.argmin(np.abs(self.times - t_a)))
        if t_b is None:
            return float(self.cauchy_norms[ia])
        ib = int(np.argmin(np.abs(self.times - t_b)))
        return float(self.extra["pairwise"](ia, ib))


def _pullbacks(traj: TrajectoryField, t0: float) -> np.ndarray:
    g = traj.grid
    ts = traj.times
    return np.stack([g.propagate(traj.values[i], -(float(ts[i]) + t0)) for i in range(len(ts))])


def _rate(times: np.ndarray, vals: np.ndarray) -> float:
    """Least-squares log-log slope over the last decade, excluding the final node."""
    t, v = np.abs(times[:-1]), vals[:-1]
    sel = (t >= t.max() / 10.0) & (v > 0) & (t > 0)
    if sel.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(t[sel]), np.log(v[sel]), 1)[0])


def _monotone(vals: np.ndarray, tol: float = 0.05) -> bool:
    tail = vals[len(vals) // 2 : -1]
    return bool(np.all(tail[1:] <= tail[:-1] * (1.0 + tol) + 1e-300))


def extract_profile(traj: TrajectoryField, t0: float = 1.0, *, norm: str = "H01") -> ScatterReport:
    """Profile ``u+ = U(-T-t0) u(T)`` and the Cauchy table against it."""
    g = traj.grid
    P = _pullbacks(traj, t0)
    fn = _h01 if norm == "H01" else _h11
    final = P[-1]
    cauchy = np.array([fn(g, P[i] - final) for i in range(len(P))])
    mass = np.array([float(g.l2(traj.values[i]) ** 2) for i in range(len(P))])
    pnorm = np.array([fn(g, P[i]) for i in range(len(P))])
    rep = ScatterReport(
        times=np.asarray(traj.times, dtype=float),
        cauchy_norms=cauchy,
        mass=mass,
        pullback_norms=pnorm,
        profile=Field(g, final, float(traj.times[-1])),
        rate_fit=_rate(traj.times, cauchy),
        monotone=_monotone(cauchy),
        norm_kind=norm,
    )
    rep.extra["pairwise"] = lambda a, b: fn(g, P[a] - P[b])
    return rep


def h11_both_directions(
    u0: Field,
    seq: CoefficientSeq,
    T: float,
    *,
    steps: int = 40,
    max_dt: float = 0.01,
) -> ScatterReport:
    """Forward and backward runs with ``H^{1,1}`` pullback tables (``t0 = 0``).

    The forward report is returned with the backward one attached as
    ``both_directions``; backward times are negative.
    """
    fw = evolve(u0, TimeMesh.uniform(0.0, T, steps), seq, max_dt=max_dt, t0=0.0, diagnostics=False)
    bw = evolve(u0, TimeMesh.uniform(0.0, -T, steps), seq, max_dt=max_dt, t0=0.0, diagnostics=False)
    rep_f = extract_profile(fw, 0.0, norm="H11")
    rep_b = extract_profile(bw, 0.0, norm="H11")
    rep_f.both_directions = rep_b
    for ev in (fw.event, bw.event):
        if ev is not None:
            rep_f.extra["event"] = ev
    return rep_f


def j_combination_check(f: Field) -> tuple[float, float, float]:
    """``(||p f|| + ||x f||, 3 ||J(1) f|| + 2 ||J(2) f||, ||p f - (J(1) - J(2)) f||)``."""
    g = f.grid
    v = f.values
    j1 = J_values(g, v, 1.0)
    j2 = J_values(g, v, 2.0)
    pv = np.stack([g.p(v, ax) for ax in range(g.d)])
    xv = np.stack([c * v for c in g.coords])
    nrm = lambda a: float(np.sqrt(np.sum(g.l2(a) ** 2)))  # noqa: E731
    lhs = nrm(pv) + nrm(xv)
    rhs = 3 * nrm(j1) + 2 * nrm(j2)
    return lhs, rhs, nrm(pv - (j1 - j2))


def save_scatter_report(rep: ScatterReport, out_dir: str | Path, name: str = "scatter") -> None:
    """JSON summary, CSV table ``(t, cauchy_norm, mass, H01)`` and the profile field."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with (out_dir / f"{name}.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "cauchy_norm", "mass", rep.norm_kind])
        for row in zip(rep.times, rep.cauchy_norms, rep.mass, rep.pullback_norms):
            w.writerow([repr(float(x)) for x in row])
    save_field(rep.profile, out_dir / "fields" / f"{name}_profile")
    doc = {
        "norm": rep.norm_kind,
        "rate_fit": rep.rate_fit,
        "monotone": rep.monotone,
        "final_time": float(rep.times[-1]),
        "profile": f"fields/{name}_profile",
    }
    if rep.both_directions is not None:
        save_scatter_report(rep.both_directions, out_dir, name + "_backward")
        doc["backward"] = name + "_backward.json"
    (out_dir / f"{name}.json").write_text(json.dumps(doc, indent=1))
