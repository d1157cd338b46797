"""Dense operators in one dimension: harmonic-oscillator resolvents and friends.

Two representations live here.

* Grid matrices (``OperatorMatrix``) act on samples of a 1-d ``Grid``. They
  realise ``H_n(t)``, ``R_n(t)``, ``dR_n/dt`` and ``V_n(t)`` directly.
* The Hermite basis ``h_k`` of ``H_os = p^2 + x^2`` diagonalises ``R_{n,os}``.
  Scaled copies ``beta^(-1/2) h_k(x / beta)`` give the factorised resolvent,
  and truncated coefficient matrices give operator norms in ``B(L^2)``.

Throughout ``c = sqrt(n - 1)`` and ``beta = (t^2 / (n - 1))^(1/4)``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg as sla

from .spectral import Field, Grid

__all__ = [
    "vn_derivative_order",
    "vn_derivative_residual",
    "HermiteBasis",
    "LemmaRow",
    "OperatorMatrix",
    "ResolventSpec",
    "TruncationError",
    "apply_resolvent_direct",
    "apply_resolvent_factorized",
    "build_Hn",
    "build_Htilde",
    "build_Vn",
    "build_dRn_dt",
    "decade_growth",
    "lrest2_bounds",
    "lrest2_value",
    "os_eigen_factors",
    "os_operator_norm",
    "resolvent_matrix",
    "rest_derivative_norm",
    "resolvent_norm_scaling",
    "rest_derivative_bound",
    "write_lemma_csv",
]

DEFAULT_K = 256


class TruncationError(RuntimeError):
    """Raised when a Hermite expansion loses too much of its input."""


# -- Hermite functions -------------------------------------------------------


def hermite_functions(y: np.ndarray, K: int) -> np.ndarray:
    """Orthonormal Hermite functions ``h_0..h_{K-1}`` at points ``y``; shape (K, len(y))."""
    y = np.asarray(y, dtype=float)
    out = np.empty((K, y.size))
    out[0] = np.pi**-0.25 * np.exp(-0.5 * y**2)
    if K > 1:
        out[1] = np.sqrt(2.0) * y * out[0]
    for k in range(1, K - 1):
        out[k + 1] = np.sqrt(2.0 / (k + 1)) * y * out[k] - np.sqrt(k / (k + 1)) * out[k - 1]
    return out


def ladder_matrices(size: int) -> tuple[np.ndarray, np.ndarray]:
    """Matrices of ``x`` and ``p`` in the Hermite basis, truncated to ``size``."""
    off = np.sqrt(np.arange(1, size) / 2.0)
    X = np.diag(off, 1) + np.diag(off, -1)
    # p = i (a^+ - a) / sqrt(2)
    P = 1j * (np.diag(off, -1) - np.diag(off, 1))
    return X.astype(complex), P


def os_eigen_factors(n: int, alpha0: float, theta: float, K: int) -> np.ndarray:
    """Eigenvalues of ``R_{n,os}^theta`` on ``h_0..h_{K-1}`` (principal branch)."""
    k = np.arange(K)
    base = (alpha0 - 1.0) + 0.5j * np.sqrt(n - 1.0) * (2 * k + 1)
    return base ** (-theta)


@dataclass(frozen=True)
class HermiteBasis:
    """Scaled Hermite functions ``beta^(-1/2) h_k(x / beta)`` sampled on a 1-d grid.

    The basis is cut at ``K`` functions, and further so that every function
    keeps its turning point inside the box and its top wavenumber below the
    grid cutoff (``margin`` is the safety factor).
    """

    grid: Grid
    K: int = DEFAULT_K
    beta: float = 1.0
    margin: float = 0.85

    def __post_init__(self):
        if self.grid.d != 1:
            raise ValueError("Hermite basis is one-dimensional")
        if self.K < 1:
            raise ValueError("need at least one Hermite function")
        if self.beta <= 0:
            raise ValueError("scale must be positive")

    @property
    def eigenvalues(self) -> np.ndarray:
        return 2.0 * np.arange(self.size) + 1.0

    @property
    def size(self) -> int:
        g = self.grid
        kmax = np.pi / g.dx
        lim = min(self.margin * g.L / self.beta, self.margin * kmax * self.beta)
        fit = int(max(1, np.floor((lim**2 - 1.0) / 2.0)))
        return min(self.K, fit)

    @property
    def samples(self) -> np.ndarray:
        return _hermite_samples(self.grid, self.size, self.beta)

    def analysis(self, values: np.ndarray) -> np.ndarray:
        return (self.samples @ values) * self.grid.dx

    def synthesis(self, coeffs: np.ndarray) -> np.ndarray:
        return self.samples.T @ coeffs

    def truncation_loss(self, values: np.ndarray) -> float:
        nrm = self.grid.l2(values)
        if nrm == 0:
            return 0.0
        return float(self.grid.l2(values - self.synthesis(self.analysis(values))) / nrm)

    def gram_error(self) -> float:
        S = self.samples
        G = (S @ S.T) * self.grid.dx
        return float(np.abs(G - np.eye(len(G))).max())


@lru_cache(maxsize=64)
def _hermite_samples(grid: Grid, K: int, beta: float) -> np.ndarray:
    S = hermite_functions(grid.x1 / beta, K) / np.sqrt(beta)
    S.setflags(write=False)
    return S


# -- grid operators ----------------------------------------------------------


@dataclass(frozen=True)
class OperatorMatrix:
    """Dense matrix acting on the samples of a 1-d grid."""

    grid: Grid
    entries: np.ndarray
    label: str = ""

    def __post_init__(self):
        N = self.grid.n
        if self.grid.d != 1 or self.entries.shape != (N, N):
            raise ValueError("operator matrices need a 1-d grid and an N x N array")
        if not np.all(np.isfinite(self.entries)):
            raise ValueError(f"non-finite entries in {self.label or 'operator'}")

    def __matmul__(self, other):
        if isinstance(other, OperatorMatrix):
            return OperatorMatrix(self.grid, self.entries @ other.entries, f"{self.label}*{other.label}")
        if isinstance(other, Field):
            return other.with_values(self.entries @ other.values)
        return self.entries @ other

    def adjoint(self) -> "OperatorMatrix":
        return OperatorMatrix(self.grid, self.entries.conj().T, f"{self.label}^*")

    def norm(self) -> float:
        """Largest singular value (the grid inner product has uniform weight)."""
        return float(np.linalg.norm(self.entries, 2))

    def hermitian_defect(self) -> float:
        E = self.entries
        return float(np.abs(E - E.conj().T).max() / max(np.abs(E).max(), 1e-300))


@lru_cache(maxsize=8)
def _grid_xp(grid: Grid) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    eye = np.eye(grid.n)
    P = grid.p(eye).T
    P2 = grid.p2(eye).T
    X = np.diag(grid.x1).astype(complex)
    for m in (P, P2, X):
        m.setflags(write=False)
    return X, P, P2


def _check_nt(n: int, t: float) -> None:
    if n < 2:
        raise ValueError("resolvent index n must be >= 2")
    if t <= 0:
        raise ValueError("time must be positive")


def build_Hn(grid: Grid, n: int, t: float) -> OperatorMatrix:
    """``H_n(t) = p^2/2 + (n-1)/(2 t^2) (x + t p)^2``."""
    _check_nt(n, t)
    X, P, P2 = _grid_xp(grid)
    B = X + t * P
    H = 0.5 * P2 + (n - 1) / (2.0 * t * t) * (B @ B)
    return OperatorMatrix(grid, H, f"H_{n}({t:g})")


def build_Htilde(grid: Grid, n: int, t: float) -> OperatorMatrix:
    """``H~_n(t) = (p - (n-1) x / t)^2 / 2 + (n-1) x^2 / (2 t^2)``."""
    _check_nt(n, t)
    X, P, _ = _grid_xp(grid)
    B = P - (n - 1) / t * X
    H = 0.5 * (B @ B) + (n - 1) / (2.0 * t * t) * (X @ X)
    return OperatorMatrix(grid, H, f"H~_{n}({t:g})")


def _dHn_dt(grid: Grid, n: int, t: float) -> np.ndarray:
    X, P, _ = _grid_xp(grid)
    B = X + t * P
    return -(n - 1) / t**3 * (B @ B) + (n - 1) / (2.0 * t * t) * (B @ P + P @ B)


def vn_phase(grid: Grid, n: int, t: float) -> np.ndarray:
    """``exp(-i (n-1) x^2 / (2 t))`` sampled on the grid."""
    return np.exp(-0.5j * (n - 1) * grid.r2 / t)


def build_Vn(grid: Grid, n: int, t: float, materialize: bool = False):
    """``V_n(t) = U(-t) exp(-i (n-1) |x|^2 / (2t))``.

    Returns a callable on value arrays (any dimension), or an
    ``OperatorMatrix`` when ``materialize`` is set (1-d only).
    """
    if t <= 0:
        raise ValueError("time must be positive")
    if n < 1:
        raise ValueError("index n must be >= 1")
    phase = vn_phase(grid, n, t)

    def apply(values: np.ndarray) -> np.ndarray:
        return grid.propagate(phase * values, -t)

    if not materialize:
        return apply
    if grid.d != 1:
        raise ValueError("materialised V_n is one-dimensional")
    return OperatorMatrix(grid, apply(np.eye(grid.n)).T, f"V_{n}({t:g})")


def vn_derivative_residual(grid: Grid, n: int, t: float, h: float, values: np.ndarray) -> float:
    """``|| (i (V(t+h) - V(t-h)) / 2h + H_n(t) V(t)) f ||`` relative to ``||H_n(t) V(t) f||``."""
    fwd = build_Vn(grid, n, t + h)(values)
    bwd = build_Vn(grid, n, t - h)(values)
    hv = build_Hn(grid, n, t).entries @ build_Vn(grid, n, t)(values)
    return float(grid.l2(1j * (fwd - bwd) / (2 * h) + hv) / grid.l2(hv))


def vn_derivative_order(grid: Grid, n: int, t: float, values: np.ndarray, hs=(1e-2, 5e-3, 2.5e-3)) -> list[float]:
    """Observed convergence orders of the centred difference between successive ``h``."""
    errs = [vn_derivative_residual(grid, n, t, h, values) for h in hs]
    return [float(np.log(errs[i] / errs[i + 1]) / np.log(hs[i] / hs[i + 1])) for i in range(len(hs) - 1)]


@dataclass(frozen=True)
class ResolventSpec:
    """Selects ``R_n(t)^theta``, ``R~_n(t)^theta`` or ``R_{n,os}^theta``."""

    n: int
    alpha0: float
    t: float = 1.0
    kind: str = "plain"
    theta: float = 1.0

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("resolvent index n must be >= 2")
        if self.kind not in ("plain", "tilde", "oscillator"):
            raise ValueError(f"unknown resolvent kind {self.kind!r}")
        if self.kind != "oscillator" and self.t <= 0:
            raise ValueError("time must be positive")
        if not 0 <= self.theta <= 2:
            raise ValueError("power must lie in [0, 2]")
        if self.alpha0 <= 1:
            raise ValueError("alpha0 must exceed 1")

    @property
    def beta(self) -> float:
        if self.kind == "oscillator":
            return 1.0
        return (self.t**2 / (self.n - 1)) ** 0.25


def resolvent_generator(grid: Grid, spec: ResolventSpec) -> np.ndarray:
    """Dense ``alpha0 - 1 + i t H``, the inverse of the resolvent."""
    if spec.kind == "plain":
        H, scale = build_Hn(grid, spec.n, spec.t).entries, spec.t
    elif spec.kind == "tilde":
        H, scale = build_Htilde(grid, spec.n, spec.t).entries, spec.t
    else:
        X, _, P2 = _grid_xp(grid)
        H, scale = P2 + X @ X, 0.5 * np.sqrt(spec.n - 1.0)
    return (spec.alpha0 - 1.0) * np.eye(grid.n) + 1j * scale * H


@lru_cache(maxsize=32)
def _lu(grid: Grid, spec: ResolventSpec):
    return sla.lu_factor(resolvent_generator(grid, spec), check_finite=False)


def apply_resolvent_direct(spec: ResolventSpec, f: Field, *, check: bool = False) -> Field:
    """Solve ``(alpha0 - 1 + i t H) w = f`` densely (power 1 only).

    With ``check`` the relative residual is verified against 1e-9.
    """
    if spec.theta != 1.0:
        raise ValueError("the direct route handles power 1 only")
    g = f.grid
    if g.d != 1:
        raise ValueError("dense resolvents are one-dimensional")
    lu = _lu(g, spec)
    w = sla.lu_solve(lu, f.values, check_finite=False)
    if check:
        res = resolvent_generator(g, spec) @ w - f.values
        rel = g.l2(res) / max(g.l2(f.values), 1e-300)
        if rel > 1e-9:
            cond = np.linalg.cond(resolvent_generator(g, spec))
            raise np.linalg.LinAlgError(f"resolvent residual {rel:.2e} (condition {cond:.2e})")
    return f.with_values(w)


def resolvent_matrix(grid: Grid, spec: ResolventSpec) -> OperatorMatrix:
    lu = _lu(grid, spec)
    return OperatorMatrix(grid, sla.lu_solve(lu, np.eye(grid.n)), f"R_{spec.n}({spec.t:g})")


def _os_sandwich(basis: HermiteBasis, factors: np.ndarray, values: np.ndarray, tol: float) -> np.ndarray:
    """``D(beta) R_os^theta D(beta)^-1`` applied to grid samples."""
    coef = basis.analysis(values)
    if tol is not None:
        resid = values - basis.synthesis(coef)
        nrm = basis.grid.l2(values)
        if nrm > 0 and basis.grid.l2(resid) > tol * nrm:
            raise TruncationError(
                f"Hermite truncation loss {basis.grid.l2(resid) / nrm:.2e} with {basis.size} functions"
            )
    return basis.synthesis(factors[: basis.size] * coef)


def apply_resolvent_factorized(
    spec: ResolventSpec,
    f: Field,
    *,
    K: int = DEFAULT_K,
    tol: float | None = 1e-6,
) -> Field:
    """Apply ``R^theta`` through the oscillator diagonalisation.

    ``R_n(t)^theta = U(-t) D(beta) R_os^theta D(beta)^-1 U(t)`` and
    ``R~_n(t)^theta = e^{i phi} D(beta) R_os^theta D(beta)^-1 e^{-i phi}`` with
    ``phi = (n-1) x^2 / (2t)``. The dilation is folded into the basis.
    """
    g = f.grid
    if g.d != 1:
        raise ValueError("dense resolvents are one-dimensional")
    basis = HermiteBasis(g, K, spec.beta)
    mu = os_eigen_factors(spec.n, spec.alpha0, spec.theta, basis.size)
    v = f.values
    if spec.kind == "oscillator":
        return f.with_values(_os_sandwich(basis, mu, v, tol))
    if spec.kind == "plain":
        w = _os_sandwich(basis, mu, g.propagate(v, spec.t), tol)
        return f.with_values(g.propagate(w, -spec.t))
    chirp = vn_phase(g, spec.n, spec.t)
    w = _os_sandwich(basis, mu, chirp * v, tol)
    return f.with_values(np.conj(chirp) * w)


def build_dRn_dt(grid: Grid, n: int, t: float, alpha0: float) -> OperatorMatrix:
    """``dR_n/dt = -R_n (i H_n + i t dH_n/dt) R_n`` as a dense grid matrix."""
    _check_nt(n, t)
    R = resolvent_matrix(grid, ResolventSpec(n, alpha0, t)).entries
    mid = 1j * build_Hn(grid, n, t).entries + 1j * t * _dHn_dt(grid, n, t)
    return OperatorMatrix(grid, -R @ mid @ R, f"dR_{n}/dt({t:g})")


# -- B(L^2) norms in the Hermite basis ---------------------------------------


@lru_cache(maxsize=16)
def _poly_blocks(K: int, pad: int = 8) -> dict:
    X, P = ladder_matrices(K + pad)
    X2, P2 = X @ X, P @ P
    A = 0.5 * (X @ P + P @ X)
    out = {"x": X, "p": P, "x2": X2, "p2": P2, "A": A, "xp_px": 2 * A, "x4": X2 @ X2, "p4": P2 @ P2}
    for m in out.values():
        m.setflags(write=False)
    return out


@lru_cache(maxsize=16)
def _abs_power_gram(K: int, power: float, which: str, npts: int = 8192) -> np.ndarray:
    """``<h_j, |x|^power h_k>`` (or ``|p|^power``), j, k < K, by fine quadrature."""
    half = np.sqrt(2.0 * K + 1.0) + 12.0
    y = np.linspace(-half, half, npts + 1)
    dy = y[1] - y[0]
    H = hermite_functions(y, K)
    M = (H * np.abs(y) ** power) @ H.T * dy
    if which == "p":
        k = np.arange(K)
        M = M * (1j ** (k[:, None] - k[None, :])).real
    return M


def _left_gram_norm(M: np.ndarray, mu: np.ndarray) -> float:
    """sqrt of the top eigenvalue of ``diag(mu)^* M diag(mu)``."""
    G = np.conj(mu)[:, None] * M * mu[None, :]
    G = 0.5 * (G + G.conj().T)
    return float(np.sqrt(max(np.linalg.eigvalsh(G)[-1], 0.0)))


def os_operator_norm(op: str, n: int, alpha0: float, theta: float = 1.0, K: int = DEFAULT_K) -> float:
    """``B(L^2)`` norm of an operator built from ``R = R_{n,os}^theta``.

    ``op`` names one of::

        R              ||R||
        p2R  x2R  AR   ||W R|| with W = p^2, x^2, x.p + p.x
        Rp2  Rx2  RA   ||R W||
        pR   xR        || |p|^{2 theta} R ||, || |x|^{2 theta} R ||
        Rx   Rp        || R |x|^{2 theta} ||, || R |p|^{2 theta} ||
        Rpcx           || R |p + sqrt(n-1) x|^{2 theta} ||

    The value is the norm of the compression to ``span{h_0..h_{K-1}}``,
    which increases with ``K`` towards the full norm.
    """
    mu = os_eigen_factors(n, alpha0, theta, K)
    if op == "R":
        return float(np.abs(mu).max())
    if op in ("p2R", "x2R", "AR", "Rp2", "Rx2", "RA"):
        key = {"p2": "p2", "x2": "x2", "A": "xp_px"}[op.replace("R", "")]
        W = _poly_blocks(K)[key][:, :K]
        # ||R W|| = ||W R^*|| for self-adjoint W
        m = mu if op.endswith("R") else np.conj(mu)
        return float(np.linalg.norm(W * m[None, :], 2))
    if op in ("pR", "xR", "Rx", "Rp", "Rpcx"):
        which = "x" if "x" in op and op != "Rpcx" else "p"
        M = _weight_gram(K, 4.0 * theta, which)
        m = mu if op in ("pR", "xR") else np.conj(mu)
        val = _left_gram_norm(M, m)
        if op == "Rpcx":
            # p + c x is an oscillator rotation of sqrt(n) p, and rotations commute with R_os
            val *= n**theta
        return val
    raise ValueError(f"unknown operator {op!r}")


def _weight_gram(K: int, power: float, which: str) -> np.ndarray:
    """Gram matrix of ``|x|^power`` or ``|p|^power`` on the first K functions."""
    if float(power).is_integer() and int(power) % 2 == 0:
        m = int(power) // 2
        blocks = _poly_blocks(K, pad=max(8, m + 2))
        base = blocks["x"] if which == "x" else blocks["p"]
        Wm = np.linalg.matrix_power(base, m) if m else np.eye(len(base))
        return (Wm.conj().T @ Wm)[:K, :K] if m else np.eye(K)
    return _abs_power_gram(K, power, which)


def decade_growth(ns: Sequence[float], values: Sequence[float]) -> float:
    """Largest ratio ``v(n2) / v(n1) - 1`` over ``n1 < n2 <= 10 n1``."""
    worst = 0.0
    for i, n1 in enumerate(ns):
        for j in range(i + 1, len(ns)):
            if ns[j] <= 10 * n1 and values[i] > 0:
                worst = max(worst, values[j] / values[i] - 1.0)
    return worst


@dataclass(frozen=True)
class LemmaRow:
    lemma_id: str
    n: int
    t: float
    gamma: float
    measured: float
    compensated: float
    passed: bool


NORM_BOUNDS = {
    # lemma id -> (operator, exponent e with measured ~ n^e)
    "K2_16_1": ("R", -0.5),
    "K2_15_2": ("p2R", -0.5),
    "K2_15_2_x2": ("x2R", -0.5),
    "K2_15_2_A": ("AR", -0.5),
    "K2_15_2_Rp2": ("Rp2", -0.5),
    "K2_15_2_Rx2": ("Rx2", -0.5),
    "K2_15_2_RA": ("RA", -0.5),
    "K2_17_1": ("R", None),
    "10_30_1_p": ("pR", None),
    "10_30_1_pcx": ("Rpcx", None),
    "10_30_1_x": ("xR", None),
    "10_30_1_Rx": ("Rx", None),
}


def resolvent_norm_scaling(
    n_list: Iterable[int],
    alpha0: float,
    theta: float = 1.0,
    bound_id: str = "K2_16_1",
    K: int = DEFAULT_K,
    growth_tol: float = 0.25,
) -> list[LemmaRow]:
    """Measured norms of an ``R_{n,os}`` family and their ``n``-compensated values.

    ``bound_id`` selects the operator from ``NORM_BOUNDS``. Powers-of-theta
    families use the exponent ``-theta/2`` (``+theta/2`` for the rotated
    weight). ``passed`` is the family-wide check that compensated values do
    not grow by more than ``growth_tol`` within any decade of ``n``.
    """
    if bound_id not in NORM_BOUNDS:
        raise ValueError(f"unknown bound {bound_id!r}")
    op, e = NORM_BOUNDS[bound_id]
    th = 1.0 if e is not None else theta
    if e is None:
        e = theta / 2 if op == "Rpcx" else -theta / 2
    ns = list(n_list)
    meas = [os_operator_norm(op, n, alpha0, th, K) for n in ns]
    comp = [m * n ** (-e) for m, n in zip(meas, ns)]
    ok = decade_growth(ns, comp) <= growth_tol
    return [LemmaRow(bound_id, n, float("nan"), th, m, c, ok) for n, m, c in zip(ns, meas, comp)]


LREST2 = ("Rest3", "Rest4", "Rest0", "x_weight", "pcx_weight")


def lrest2_value(which: str, n: int, gamma: float, alpha0: float, K: int = DEFAULT_K) -> tuple[float, float]:
    """``(measured, exponent)`` for one composite of the resolvent family.

    After conjugating out ``U(t)``, ``V_n(t)`` and the dilation, each composite
    is an operator on ``R_{n,os}^{gamma/2}`` and is independent of ``t``::

        Rest3       (n-1)^{gamma/4} || |p|^gamma R^{gamma/2} ||      ~ 1
        Rest4       (n-1)^{-gamma/4} || |x|^gamma R^{gamma/2} ||     ~ n^{-gamma/2}
        Rest0       || R^{gamma/2} ||                                ~ n^{-gamma/4}
        x_weight    (n-1)^{-gamma/4} || R^{gamma/2} |x|^gamma ||     ~ n^{-gamma/2}
        pcx_weight  (n-1)^{gamma/4} || R^{gamma/2} |p + c x|^gamma || ~ n^{gamma/2}
    """
    th = gamma / 2
    c4 = (n - 1.0) ** (gamma / 4)
    if which == "Rest3":
        return c4 * os_operator_norm("pR", n, alpha0, th, K), 0.0
    if which == "Rest4":
        return os_operator_norm("xR", n, alpha0, th, K) / c4, -gamma / 2
    if which == "Rest0":
        return os_operator_norm("R", n, alpha0, th, K), -gamma / 4
    if which == "x_weight":
        return os_operator_norm("Rx", n, alpha0, th, K) / c4, -gamma / 2
    if which == "pcx_weight":
        return c4 * os_operator_norm("Rpcx", n, alpha0, th, K), gamma / 2
    raise ValueError(f"unknown composite {which!r}")


def lrest2_bounds(
    n_list: Iterable[int],
    t_list: Iterable[float],
    gamma: float,
    which: str,
    alpha0: float = 1.5,
    K: int = DEFAULT_K,
    growth_tol: float = 0.25,
) -> list[LemmaRow]:
    """Compensated composite norms over an ``(n, t)`` lattice."""
    if not 0 <= gamma <= 2:
        raise ValueError("gamma must lie in [0, 2]")
    ns, ts = list(n_list), list(t_list)
    vals = {n: lrest2_value(which, n, gamma, alpha0, K) for n in ns}
    comp = [vals[n][0] * n ** (-vals[n][1]) for n in ns]
    ok = decade_growth(ns, comp) <= growth_tol
    return [
        LemmaRow(which, n, float(t), gamma, vals[n][0], c, ok)
        for t in ts
        for n, c in zip(ns, comp)
    ]


def rest_derivative_norm(n: int, t: float, alpha0: float, K: int = DEFAULT_K) -> float:
    """``|| U(t) dR_n/dt U(-t) ||`` from the oscillator form.

    ``dR_n/dt = (i c / 2t) P R_os (x^2 - p^2 - 2 c A) R_os P^-1`` with
    ``P = U(-t) D(beta)`` unitary, so the norm is
    ``(c / 2t) || R_os (x^2 - p^2 - 2 c A) R_os ||``.
    """
    c = np.sqrt(n - 1.0)
    b = _poly_blocks(K)
    Q = (b["x2"] - b["p2"] - 2 * c * b["A"])[:, :K]
    mu_out = os_eigen_factors(n, alpha0, 1.0, Q.shape[0])
    mu_in = mu_out[:K]
    return float(c / (2 * t) * np.linalg.norm(mu_out[:, None] * Q * mu_in[None, :], 2))


def rest_derivative_bound(
    n_list: Iterable[int], t_list: Iterable[float], alpha0: float = 1.5, K: int = DEFAULT_K, growth_tol: float = 0.25
) -> list[LemmaRow]:
    """Rows for ``t n^{-1/2} || U(t) dR_n/dt U(-t) ||`` (zero outer powers)."""
    ns, ts = list(n_list), list(t_list)
    rows = []
    for t in ts:
        meas = [rest_derivative_norm(n, t, alpha0, K) for n in ns]
        comp = [m * t / np.sqrt(n) for m, n in zip(meas, ns)]
        ok = decade_growth(ns, comp) <= growth_tol
        rows += [LemmaRow("K5_4_1", n, float(t), 0.0, m, c_, ok) for n, m, c_ in zip(ns, meas, comp)]
    return rows


def write_lemma_csv(rows: Iterable[LemmaRow], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lemma_id", "n", "t", "gamma/theta", "measured", "compensated", "pass"])
        for r in rows:
            w.writerow([r.lemma_id, r.n, r.t, r.gamma, repr(r.measured), repr(r.compensated), r.passed])
