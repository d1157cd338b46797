"""Integral map Phi for the v-equation, its X/Y norms and the Picard iteration.

The v-equation ``i dv/dt = p^2 v / 2 + t^(alpha0-2) F~(t, v)`` is integrated
backwards from ``t = 1``. For ``n >= 2`` the Duhamel term

    I_n(t) = int_1^t s^(alpha0-2) U(t-s) e^{-i(n-1)|x|^2/2s} F_n(v(s)) ds

is replaced by five terms ``A_{1..5,n}`` obtained by writing
``s^(alpha0-2) V_n = R_n d/ds(s^(alpha0-1) V_n)`` and integrating by parts.
Every time integral is accumulated in the interaction frame (integrand
pulled back by ``U(-s)``, result pushed forward by ``U(t)``) with product
trapezoid weights that integrate the explicit power of ``s`` exactly.

Resolvents are applied through the oscillator factorisation by default; the
dense route is available as ``backend="direct"`` and can be sampled as a
cross-check.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla

from .evolution import TimeMesh, TrajectoryField, f_tilde
from .nonlinearity import CoefficientSeq, eval_Fn, eval_Fn_wirtinger
from .oscillator import (
    DEFAULT_K,
    HermiteBasis,
    ResolventSpec,
    _poly_blocks,
    build_dRn_dt,
    os_eigen_factors,
    resolvent_generator,
    vn_phase,
)
from .spectral import AdmissiblePairs, Field, Grid

__all__ = [
    "NonContractionError",
    "PhiContext",
    "PhiTermSet",
    "PhiTerms",
    "PicardResult",
    "XYNorms",
    "apply_phi",
    "compute_A",
    "compute_In",
    "compute_terms",
    "contraction_ratio",
    "epsilon_search",
    "error_functional",
    "free_trajectory",
    "phi_terms",
    "picard_iterate",
    "product_weights",
    "random_perturbation",
    "scaled_pair_ratios",
    "v1_from_u0",
    "write_contraction_csv",
    "write_history_csv",
    "trajectory_field",
    "xy_norms",
]


class NonContractionError(RuntimeError):
    """The Picard increments stopped shrinking."""


# -- quadrature --------------------------------------------------------------


def _moment(q: float, a: float, b: float) -> float:
    if abs(q + 1.0) < 1e-14:
        return math.log(b / a)
    return (b ** (q + 1.0) - a ** (q + 1.0)) / (q + 1.0)


def product_weights(nodes: np.ndarray, q: float) -> tuple[np.ndarray, np.ndarray]:
    """Left/right weights of ``int_a^b s^q f(s) ds`` with ``f`` linear on each interval.

    Intervals run from ``nodes[i]`` to ``nodes[i+1]`` and keep their
    orientation, so a decreasing mesh yields signed (negative) integrals.
    """
    t = np.asarray(nodes, dtype=float)
    wl = np.empty(t.size - 1)
    wr = np.empty(t.size - 1)
    for i, (a, b) in enumerate(zip(t[:-1], t[1:])):
        m0, m1 = _moment(q, a, b), _moment(q + 1.0, a, b)
        wr[i] = (m1 - a * m0) / (b - a)
        wl[i] = (b * m0 - m1) / (b - a)
    return wl, wr


def _cumulative(g: np.ndarray, wl: np.ndarray, wr: np.ndarray) -> np.ndarray:
    """``X[j] = int_{t_0}^{t_j}`` of the weighted integrand; ``X[0] = 0``."""
    out = np.zeros_like(g)
    inc = wl[:, None] * g[:-1] + wr[:, None] * g[1:]
    out[1:] = np.cumsum(inc, axis=0)
    return out


def _propagate_rows(grid: Grid, vals: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Row ``i`` becomes ``U(times[i]) vals[i]``."""
    spec = grid.fft(vals)
    spec *= np.exp(-0.5j * np.asarray(times)[:, None] * grid.k2[None, :])
    return grid.ifft(spec)


# -- resolvent backends ------------------------------------------------------


@dataclass
class PhiContext:
    """Static data shared by repeated applications of Phi on one mesh.

    ``backend`` is ``"factorized"`` (oscillator eigenbasis) or ``"direct"``
    (dense LU per node). ``cross_check_every`` samples that many nodes of a
    factorized run against the dense route and records the worst relative
    discrepancy in ``diagnostics["cross_check"]``.
    """

    grid: Grid
    mesh: TimeMesh
    seq: CoefficientSeq
    alpha0: float
    K: int = DEFAULT_K
    tol: float = 1e-4
    backend: str = "factorized"
    n_max: int | None = None
    cross_check_every: int = 0
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.grid.d != 1:
            raise ValueError("the integral map is implemented in one dimension")
        if self.backend not in ("factorized", "direct"):
            raise ValueError(f"unknown backend {self.backend!r}")
        t = self.mesh.nodes
        if abs(t[0] - 1.0) > 1e-14 or t[-1] >= t[0] or t[-1] <= 0:
            raise ValueError("mesh must start at t=1 and decrease towards 0")
        if self.n_max is None:
            self.n_max = self.seq.default_nmax()
        if any(n < 1 for n in self.seq.support(self.n_max)):
            raise ValueError("the integral map needs lam_n = 0 for n <= 0")
        self.diagnostics.setdefault("truncation_loss", 0.0)
        self.diagnostics.setdefault("cross_check", 0.0)

    @property
    def indices(self) -> list[int]:
        return [n for n in self.seq.support(self.n_max)]

    def frame_apply(self, n: int, s: float, stack: np.ndarray, with_derivative: bool) -> tuple[np.ndarray, np.ndarray | None]:
        """``U(s) R_n(s) V_n(s) h`` for each row ``h`` and, optionally,
        ``U(s) s dR_n/ds V_n(s) h_0`` for the first row."""
        if self.backend == "direct":
            return self._frame_direct(n, s, stack, with_derivative)
        return self._frame_factorized(n, s, stack, with_derivative)

    def _frame_factorized(self, n, s, stack, with_derivative):
        g = self.grid
        basis = HermiteBasis(g, self.K, (s * s / (n - 1.0)) ** 0.25)
        S = basis.samples
        mu = os_eigen_factors(n, self.alpha0, 1.0, basis.size)
        inp = vn_phase(g, n, s)[None, :] * stack
        coef = (inp @ S.T) * g.dx
        resid = inp - coef @ S
        nrm = g.l2(inp)
        loss = np.where(nrm > 0, g.l2(resid) / np.where(nrm > 0, nrm, 1.0), 0.0)
        worst = float(np.max(loss))
        self.diagnostics["truncation_loss"] = max(self.diagnostics["truncation_loss"], worst)
        if self.tol is not None and worst > self.tol:
            from .oscillator import TruncationError

            raise TruncationError(f"Hermite truncation loss {worst:.2e} at n={n}, t={s:g}")
        out = (mu[None, :] * coef) @ S
        der = None
        if with_derivative:
            c = math.sqrt(n - 1.0)
            blk = _poly_blocks(basis.size)
            Q = (blk["x2"] - blk["p2"] - 2.0 * c * blk["A"])[: basis.size, : basis.size]
            # s dR/ds = (i c / 2) P R_os Q R_os P^-1
            der = (0.5j * c) * ((mu * (Q @ (mu * coef[0]))) @ S)
        return out, der

    def _frame_direct(self, n, s, stack, with_derivative):
        g = self.grid
        spec = ResolventSpec(n, self.alpha0, s)
        lu = sla.lu_factor(resolvent_generator(g, spec), check_finite=False)
        vh = np.stack([g.propagate(vn_phase(g, n, s) * h, -s) for h in stack])
        rv = sla.lu_solve(lu, vh.T, check_finite=False).T
        out = np.stack([g.propagate(r, s) for r in rv])
        der = None
        if with_derivative:
            dR = build_dRn_dt(g, n, s, self.alpha0).entries
            der = g.propagate(s * (dR @ vh[0]), s)
        return out, der


# -- Phi ---------------------------------------------------------------------


@dataclass
class PhiTerms:
    """Per-``n`` pieces of Phi on the mesh nodes (arrays of shape ``(M, N)``)."""

    n: int
    A: dict
    I: np.ndarray | None = None

    @property
    def A_sum(self) -> np.ndarray:
        return sum(self.A.values())


def compute_terms(ctx: PhiContext, v: np.ndarray, n: int, *, want_I: bool = False) -> PhiTerms:
    """``A_{1..5,n}`` (and optionally ``I_n``) for the trajectory ``v`` on the mesh."""
    g, t, a0, seq = ctx.grid, ctx.mesh.nodes, ctx.alpha0, ctx.seq
    M = t.size
    alpha = seq.alpha
    w1 = np.empty((M, g.n), dtype=complex)   # frame R V F_n, for A2
    g3 = np.empty_like(w1)                    # frame s dR/ds V F_n
    g4 = np.empty_like(w1)
    g5 = np.empty_like(w1)
    gI = np.empty_like(w1) if want_I else None
    check_at = set()
    if ctx.backend == "factorized" and ctx.cross_check_every:
        check_at = set(np.linspace(0, M - 1, ctx.cross_check_every).astype(int).tolist())
    for i, s in enumerate(t):
        vi = v[i]
        Fn = eval_Fn(n, alpha, vi)
        dz, dzb = eval_Fn_wirtinger(n, alpha, vi)
        p2v = g.p2(vi)
        Ft = f_tilde(seq, s, g, vi)
        stack = np.stack([Fn, dz * p2v - dzb * np.conj(p2v), dz * Ft - dzb * np.conj(Ft)])
        out, der = ctx.frame_apply(n, s, stack, True)
        if i in check_at:
            ref, dref = ctx._frame_direct(n, s, stack, True)
            scale = max(g.l2(ref[0]), 1e-300)
            err = max(g.l2(out[0] - ref[0]) / scale, g.l2(der - dref) / max(g.l2(dref), 1e-300))
            ctx.diagnostics["cross_check"] = max(ctx.diagnostics["cross_check"], float(err))
        w1[i], g3[i], g4[i], g5[i] = out[0], der, out[1], out[2]
        if want_I:
            gI[i] = vn_phase(g, n, s) * Fn
    # pull the integrands back to the interaction frame
    back = lambda arr: _propagate_rows(g, arr, -t)  # noqa: E731
    fwd = lambda arr: _propagate_rows(g, arr, t)  # noqa: E731
    A = {}
    A["A1"] = -_propagate_rows(g, np.repeat(w1[:1], M, axis=0), t - 1.0)
    A["A2"] = (t ** (a0 - 1.0))[:, None] * w1
    A["A3"] = -fwd(_cumulative(back(g3), *product_weights(t, a0 - 2.0)))
    A["A4"] = 0.5j * fwd(_cumulative(back(g4), *product_weights(t, a0 - 1.0)))
    A["A5"] = 1j * fwd(_cumulative(back(g5), *product_weights(t, 2.0 * a0 - 3.0)))
    I = fwd(_cumulative(back(gI), *product_weights(t, a0 - 2.0))) if want_I else None
    return PhiTerms(n, A, I)


def _duhamel_I1(ctx: PhiContext, v: np.ndarray) -> np.ndarray:
    g, t = ctx.grid, ctx.mesh.nodes
    F1 = eval_Fn(1, ctx.seq.alpha, v)
    gI = _propagate_rows(g, F1, -t)
    return _propagate_rows(g, _cumulative(gI, *product_weights(t, ctx.alpha0 - 2.0)), t)


@dataclass
class PhiTermSet:
    """All pieces of Phi(v): the free part, ``I_1`` and ``A_{j,n}`` keyed by ``(j, n)``.

    Arrays are node-major ``(M, N)`` on the context mesh; ``I_1`` is ``None``
    when ``lam_1 = 0``.
    """

    linear: np.ndarray
    i1: np.ndarray | None
    a_terms: dict
    n_max: int
    lams: dict

    def assemble(self) -> np.ndarray:
        # fixed ascending-n order keeps the sum reproducible
        out = self.linear.copy()
        if self.i1 is not None:
            out = out - 1j * self.lams[1] * self.i1
        for n in sorted({n for _, n in self.a_terms}):
            acc = sum(self.a_terms[(j, n)] for j in range(1, 6))
            out = out - 1j * self.lams[n] * acc
        return out


def phi_terms(ctx: PhiContext, v: np.ndarray, v1_data: np.ndarray) -> PhiTermSet:
    """Evaluate every term of Phi(v) on the mesh nodes.

    The linear part uses ``v1_data``; the boundary term ``A_1`` uses the
    trajectory's own value at ``t = 1`` so that ``sum_j A_{j,n} = I_n`` holds
    for any solution of the v-equation.
    """
    lin = free_trajectory(ctx.grid, ctx.mesh, v1_data)
    lams, a_terms, i1 = {}, {}, None
    for n in ctx.indices:
        lam = complex(np.conj(ctx.seq.coefficient(n)))
        if lam == 0:
            continue
        lams[n] = lam
        if n == 1:
            i1 = _duhamel_I1(ctx, v)
        else:
            terms = compute_terms(ctx, v, n)
            for j in range(1, 6):
                a_terms[(j, n)] = terms.A[f"A{j}"]
    return PhiTermSet(lin, i1, a_terms, int(ctx.n_max), lams)


def apply_phi(ctx: PhiContext, v: np.ndarray, v1_data: np.ndarray) -> np.ndarray:
    """Phi(v) on the mesh nodes (see ``phi_terms``)."""
    return phi_terms(ctx, v, v1_data).assemble()


def compute_In(ctx: PhiContext, v: np.ndarray, n: int) -> np.ndarray:
    """Duhamel term ``I_n`` by product-trapezoid quadrature on the mesh."""
    if n == 1:
        return _duhamel_I1(ctx, v)
    return compute_terms(ctx, v, n, want_I=True).I


def compute_A(ctx: PhiContext, v: np.ndarray, n: int, j: int) -> np.ndarray:
    """Single term ``A_{j,n}``, ``j`` in 1..5, ``n >= 2``."""
    if j not in range(1, 6):
        raise ValueError("j must lie in 1..5")
    if n < 2:
        raise ValueError("A-terms are defined for n >= 2")
    return compute_terms(ctx, v, n).A[f"A{j}"]


# -- norms -------------------------------------------------------------------


@dataclass(frozen=True)
class XYNorms:
    """``||v||_X = sup_t ||v||_{H^1} + ||v||_{L^q0 H^1_r0}`` and
    ``||v||_Y = ||dv/dt||_{L^q1 H^-1_r1}`` on a mesh."""

    pairs: AdmissiblePairs
    x_value: float
    y_value: float

    @property
    def total(self) -> float:
        return self.x_value + self.y_value


def _time_lq(mesh: TimeMesh, vals: np.ndarray, q: float) -> float:
    if np.isinf(q):
        return float(np.max(vals))
    return float(np.sum(mesh.weights * vals**q) ** (1.0 / q))


def _x_norm(grid: Grid, mesh: TimeMesh, v: np.ndarray, pairs: AdmissiblePairs) -> float:
    jp = grid.japanese_p(v, 1.0)
    sup = float(np.max(grid.l2(jp)))
    lr = np.array([grid.lr(row, pairs.r0) for row in jp])
    return sup + _time_lq(mesh, lr, pairs.q0)


def _y_of_derivative(grid: Grid, mesh: TimeMesh, dv: np.ndarray, pairs: AdmissiblePairs) -> float:
    m = grid.japanese_p(dv, -1.0)
    return _time_lq(mesh, np.array([grid.lr(row, pairs.r1) for row in m]), pairs.q1)


def xy_norms(grid: Grid, mesh: TimeMesh, v: np.ndarray, alpha0: float) -> XYNorms:
    """Discrete X and Y norms; ``dv/dt`` by second-order differences on the nodes."""
    pairs = AdmissiblePairs.for_degree(grid.d, alpha0)
    dv = np.gradient(v, mesh.nodes, axis=0, edge_order=2)
    return XYNorms(pairs, _x_norm(grid, mesh, v, pairs), _y_of_derivative(grid, mesh, dv, pairs))


def error_functional(ctx: PhiContext, v: np.ndarray) -> tuple[np.ndarray, float]:
    """``E(v) = i dv/dt - p^2 v / 2 - t^(alpha0-2) F~(t, v)`` and its Y-type norm.

    The linear part is differentiated in the interaction frame,
    ``i dv/dt - p^2 v/2 = i U(t) d/dt (U(-t) v)``, which removes the stiff
    free oscillation from the finite differences.
    """
    g, t = ctx.grid, ctx.mesh.nodes
    w = _propagate_rows(g, v, -t)
    dw = np.gradient(w, t, axis=0, edge_order=2)
    E = 1j * _propagate_rows(g, dw, t)
    for i, s in enumerate(t):
        E[i] -= s ** (ctx.alpha0 - 2.0) * f_tilde(ctx.seq, s, g, v[i])
    pairs = AdmissiblePairs.for_degree(g.d, ctx.alpha0)
    val = _y_of_derivative(g, ctx.mesh, E, pairs)
    if t.size >= 5:
        # same functional on every other node: a large change means the mesh is too coarse
        sub = TimeMesh(t[::2])
        w2 = w[::2]
        E2 = 1j * _propagate_rows(g, np.gradient(w2, sub.nodes, axis=0, edge_order=2), sub.nodes)
        for i, s in enumerate(sub.nodes):
            E2[i] -= s ** (ctx.alpha0 - 2.0) * f_tilde(ctx.seq, s, g, v[2 * i])
        coarse = _y_of_derivative(g, sub, E2, pairs)
        ctx.diagnostics["mesh_coarse"] = bool(abs(coarse - val) > 0.2 * max(val, 1e-300))
    return E, val


# -- data and iteration ------------------------------------------------------


def v1_from_u0(u0: Field) -> np.ndarray:
    """``v(1) = e^{i|x|^2/2} conj(u0)``."""
    return np.exp(0.5j * u0.grid.r2) * np.conj(u0.values)


def free_trajectory(grid: Grid, mesh: TimeMesh, v1_data: np.ndarray) -> np.ndarray:
    """``U(t-1) v(1)`` on every node."""
    t = mesh.nodes
    return _propagate_rows(grid, np.repeat(np.asarray(v1_data)[None, :], t.size, axis=0), t - 1.0)


@dataclass
class PicardResult:
    v: np.ndarray
    history: list[dict]
    converged: bool


def picard_iterate(
    ctx: PhiContext,
    v1_data: np.ndarray,
    v0: np.ndarray | None = None,
    *,
    max_iter: int = 12,
    tol: float = 1e-8,
    stall_ratio: float = 0.9,
    stall_count: int = 3,
) -> PicardResult:
    """Iterate ``v <- Phi(v)`` until the X-increment drops below ``tol``.

    History rows hold ``iter``, ``increment_X`` and ``residual_Y``. Three
    consecutive increment ratios above ``stall_ratio`` raise
    ``NonContractionError``.
    """
    g, mesh = ctx.grid, ctx.mesh
    pairs = AdmissiblePairs.for_degree(g.d, ctx.alpha0)
    v = free_trajectory(g, mesh, v1_data) if v0 is None else np.array(v0, dtype=complex)
    hist: list[dict] = []
    prev = None
    stalls = 0
    for k in range(1, max_iter + 1):
        nv = apply_phi(ctx, v, v1_data)
        inc = _x_norm(g, mesh, nv - v, pairs)
        v = nv
        _, res = error_functional(ctx, v)
        hist.append({"iter": k, "increment_X": inc, "residual_Y": res})
        if inc <= tol:
            return PicardResult(v, hist, True)
        if prev is not None and prev > 0:
            stalls = stalls + 1 if inc / prev > stall_ratio else 0
            if stalls >= stall_count:
                raise NonContractionError(f"increments stalled at iteration {k} (ratio {inc / prev:.3f})")
        prev = inc
    return PicardResult(v, hist, False)


def contraction_ratio(ctx: PhiContext, v1_data: np.ndarray, va: np.ndarray, vb: np.ndarray) -> float:
    """``||Phi(va) - Phi(vb)||_X / ||va - vb||_X``."""
    g, mesh = ctx.grid, ctx.mesh
    pairs = AdmissiblePairs.for_degree(g.d, ctx.alpha0)
    den = _x_norm(g, mesh, va - vb, pairs)
    if den == 0:
        raise ValueError("the two trajectories coincide")
    num = _x_norm(g, mesh, apply_phi(ctx, va, v1_data) - apply_phi(ctx, vb, v1_data), pairs)
    return num / den


def random_perturbation(grid: Grid, mesh: TimeMesh, rng: np.random.Generator, modes: int = 4) -> np.ndarray:
    """Smooth random trajectory: Gaussian envelope times a low-order polynomial in
    ``x`` whose coefficients vary linearly in time."""
    x = grid.x1
    t = mesh.nodes
    c0 = rng.standard_normal(modes) + 1j * rng.standard_normal(modes)
    c1 = rng.standard_normal(modes) + 1j * rng.standard_normal(modes)
    env = np.exp(-0.5 * x * x)
    basis = np.stack([x**k for k in range(modes)]) / np.array([math.factorial(k) for k in range(modes)])[:, None]
    out = np.empty((t.size, grid.n), dtype=complex)
    for i, s in enumerate(t):
        out[i] = env * ((c0 + (1.0 - s) * c1) @ basis)
    return out


def scaled_pair_ratios(
    ctx: PhiContext,
    make_v1: Callable[[float], np.ndarray],
    M: float,
    pairs: int,
    rng: np.random.Generator,
    *,
    rel_size: float = 0.25,
) -> list[dict]:
    """Contraction ratios for ``pairs`` random pairs inside the ball of radius ``M``.

    Each trajectory is the free flow of ``make_v1(M)`` plus a smooth random
    perturbation of X-norm ``rel_size * M``; membership
    ``||v||_X + ||v||_Y <= M`` is checked and recorded.
    """
    g, mesh = ctx.grid, ctx.mesh
    v1 = make_v1(M)
    base = free_trajectory(g, mesh, v1)
    xp = AdmissiblePairs.for_degree(g.d, ctx.alpha0)
    rows = []
    for k in range(pairs):
        tr = []
        for _ in range(2):
            dv = random_perturbation(g, mesh, rng)
            dv *= rel_size * M / _x_norm(g, mesh, dv, xp)
            tr.append(base + dv)
        nrm = max(xy_norms(g, mesh, w, ctx.alpha0).total for w in tr)
        rows.append({
            "M": M,
            "pair_id": k,
            "ratio": contraction_ratio(ctx, v1, tr[0], tr[1]),
            "ball_norm": nrm,
            "in_ball": bool(nrm <= M),
        })
    return rows


def epsilon_search(
    ratio_at: Callable[[float], float],
    eps_start: float,
    *,
    target: float = 0.5,
    shrink: float = 0.5,
    max_tries: int = 8,
) -> tuple[float, list[tuple[float, float]]]:
    """Shrink ``eps`` until ``ratio_at(eps) <= target``; returns ``(eps, trail)``."""
    eps = eps_start
    trail = []
    for _ in range(max_tries):
        r = ratio_at(eps)
        trail.append((eps, r))
        if r <= target:
            return eps, trail
        eps *= shrink
    raise NonContractionError(f"no contraction down to eps={eps / shrink:g}")


def write_contraction_csv(rows: Sequence[dict], path: str | Path, epsilon: float) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epsilon", "M", "pair_id", "ratio"])
        for r in rows:
            w.writerow([repr(float(epsilon)), repr(float(r["M"])), r["pair_id"], repr(float(r["ratio"]))])


def write_history_csv(history: Sequence[dict], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "increment_X", "residual_Y"])
        for r in history:
            w.writerow([r["iter"], repr(float(r["increment_X"])), repr(float(r["residual_Y"]))])


def trajectory_field(ctx: PhiContext, v: np.ndarray, tag: str = "v_equation") -> TrajectoryField:
    return TrajectoryField(ctx.grid, ctx.mesh, v, tag, None, None)
