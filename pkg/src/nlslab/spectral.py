"""Periodic pseudospectral discretisation of R^d.

The box ``[-L, L)^d`` with ``n`` points per axis stands in for the whole
space. Functions of ``p = -i grad`` are Fourier multipliers, functions of
``x`` are pointwise products. Odd multipliers have their Nyquist mode zeroed
so that ``p`` stays self-adjoint on the grid.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.fft as sfft

__all__ = [
    "commutation_UJ_check",
    "AdmissiblePairs",
    "Field",
    "Grid",
    "NormSpec",
    "apply_J",
    "apply_fourier_multiplier",
    "conjugation_identity_check",
    "dilate",
    "fractional_hardy_sample",
    "free_propagate",
    "load_field",
    "norm",
    "save_field",
]

DEFAULT_POINT_BUDGET = 2**22


def japanese(z):
    """``<z> = (1 + |z|^2)^(1/2)``."""
    return np.sqrt(1.0 + np.abs(z) ** 2)


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid on ``[-L, L)^d`` with ``n`` points per axis."""

    d: int
    n: int
    L: float
    budget: int = DEFAULT_POINT_BUDGET

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ValueError(f"unsupported dimension d={self.d}")
        if self.n < 4 or self.n & (self.n - 1):
            raise ValueError("points per axis must be a power of two >= 4")
        if self.L <= 0:
            raise ValueError("half width must be positive")
        if self.n**self.d > self.budget:
            raise ValueError(f"grid has {self.n ** self.d} points, budget is {self.budget}")

    @property
    def dx(self) -> float:
        return 2.0 * self.L / self.n

    @property
    def cell(self) -> float:
        return self.dx**self.d

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.d

    @property
    def size(self) -> int:
        return self.n**self.d

    @cached_property
    def x1(self) -> np.ndarray:
        return -self.L + self.dx * np.arange(self.n)

    @cached_property
    def xi1(self) -> np.ndarray:
        """Wavenumbers in FFT order, ``(pi/L) * {-n/2, ..., n/2 - 1}``."""
        return 2.0 * np.pi * np.fft.fftfreq(self.n, d=self.dx)

    @cached_property
    def xi1_odd(self) -> np.ndarray:
        k = self.xi1.copy()
        k[self.n // 2] = 0.0
        return k

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        """Broadcastable per-axis position arrays."""
        out = []
        for ax in range(self.d):
            shape = [1] * self.d
            shape[ax] = self.n
            out.append(self.x1.reshape(shape))
        return tuple(out)

    @cached_property
    def freqs(self) -> tuple[np.ndarray, ...]:
        out = []
        for ax in range(self.d):
            shape = [1] * self.d
            shape[ax] = self.n
            out.append(self.xi1.reshape(shape))
        return tuple(out)

    @cached_property
    def freqs_odd(self) -> tuple[np.ndarray, ...]:
        out = []
        for ax in range(self.d):
            shape = [1] * self.d
            shape[ax] = self.n
            out.append(self.xi1_odd.reshape(shape))
        return tuple(out)

    @cached_property
    def r2(self) -> np.ndarray:
        """``|x|^2`` on the grid."""
        return sum(c**2 for c in self.coords) * np.ones(self.shape)

    @cached_property
    def k2(self) -> np.ndarray:
        """``|xi|^2`` on the frequency grid."""
        return sum(k**2 for k in self.freqs) * np.ones(self.shape)

    # -- transforms ---------------------------------------------------------

    def fft(self, values: np.ndarray) -> np.ndarray:
        axes = tuple(range(-self.d, 0))
        return sfft.fftn(values, axes=axes)

    def ifft(self, values: np.ndarray) -> np.ndarray:
        axes = tuple(range(-self.d, 0))
        return sfft.ifftn(values, axes=axes)

    def multiply(self, values: np.ndarray, symbol: np.ndarray) -> np.ndarray:
        """Apply the Fourier multiplier with symbol sampled on the frequency grid."""
        return self.ifft(symbol * self.fft(values))

    def p(self, values: np.ndarray, axis: int = 0) -> np.ndarray:
        return self.multiply(values, self.freqs_odd[axis])

    def p2(self, values: np.ndarray) -> np.ndarray:
        return self.multiply(values, self.k2)

    def japanese_p(self, values: np.ndarray, power: float) -> np.ndarray:
        return self.multiply(values, (1.0 + self.k2) ** (power / 2))

    def propagate(self, values: np.ndarray, t: float) -> np.ndarray:
        """``U(t) = exp(-i t p^2 / 2)``."""
        if t == 0:
            return np.array(values, dtype=complex, copy=True)
        return self.multiply(values, np.exp(-0.5j * t * self.k2))

    def dealias(self, values: np.ndarray) -> np.ndarray:
        """Zero every mode above two thirds of the Nyquist wavenumber."""
        kmax = np.pi / self.dx
        mask = np.ones(self.shape, dtype=bool)
        for k in self.freqs:
            mask = mask & (np.abs(k) < (2.0 / 3.0) * kmax)
        return self.ifft(np.where(mask, self.fft(values), 0.0))

    # -- quadrature ---------------------------------------------------------

    def inner(self, f: np.ndarray, g: np.ndarray) -> complex:
        axes = tuple(range(-self.d, 0))
        return np.sum(np.conj(f) * g, axis=axes) * self.cell

    def l2(self, values: np.ndarray) -> float:
        axes = tuple(range(-self.d, 0))
        return np.sqrt(np.sum(np.abs(values) ** 2, axis=axes) * self.cell)

    def lr(self, values: np.ndarray, r: float) -> float:
        if r < 1:
            raise ValueError("Lebesgue exponent must be >= 1")
        if np.isinf(r):
            return float(np.max(np.abs(values)))
        return float((np.sum(np.abs(values) ** r) * self.cell) ** (1.0 / r))

    def boundary_leak(self, values: np.ndarray) -> float:
        """Max modulus on the outermost shell relative to the overall max."""
        a = np.abs(values)
        top = a.max()
        if top == 0:
            return 0.0
        shell = 0.0
        for ax in range(self.d):
            shell = max(shell, np.take(a, [0, -1], axis=ax).max())
        return float(shell / top)

    def to_dict(self) -> dict:
        return {"d": self.d, "n": self.n, "L": self.L}


@dataclass(frozen=True)
class Field:
    """Complex grid function with optional time tag."""

    grid: Grid
    values: np.ndarray = field(repr=False)
    time_tag: float | None = None

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=complex)
        if vals.shape != self.grid.shape:
            raise ValueError(f"values shape {vals.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("field contains non-finite values")
        object.__setattr__(self, "values", vals)

    def with_values(self, values, time_tag: float | None = None) -> "Field":
        return Field(self.grid, values, self.time_tag if time_tag is None else time_tag)

    def boundary_leak(self) -> float:
        return self.grid.boundary_leak(self.values)


def apply_fourier_multiplier(f: Field, m: Callable[..., np.ndarray]) -> Field:
    """Return ``m(p) f``; ``m`` receives one frequency array per axis."""
    symbol = np.asarray(m(*f.grid.freqs), dtype=complex) * np.ones(f.grid.shape)
    if not np.all(np.isfinite(symbol)):
        raise ValueError("multiplier has non-finite values")
    return f.with_values(f.grid.multiply(f.values, symbol))


def free_propagate(f: Field, t: float) -> Field:
    tag = None if f.time_tag is None else f.time_tag + t
    return Field(f.grid, f.grid.propagate(f.values, t), tag)


def J_values(grid: Grid, values: np.ndarray, t: float) -> np.ndarray:
    """``J(t) f = x f - t p f``, stacked over axes (leading axis of length d)."""
    comps = [grid.coords[ax] * values - t * grid.p(values, ax) for ax in range(grid.d)]
    return np.stack(comps)


def apply_J(f: Field, t: float, axis: int = 0) -> Field:
    """Component ``axis`` of ``J(t) f = x f - t p f``."""
    g = f.grid
    return f.with_values(g.coords[axis] * f.values - t * g.p(f.values, axis))


_DILATE_BLOCK = 512


def dilate(grid: Grid, values: np.ndarray, beta: float) -> np.ndarray:
    """Unitary dilation ``beta^(-d/2) f(x / beta)`` via band-limited interpolation.

    Sample points outside the box are set to zero, so ``f`` must decay.
    """
    if beta <= 0:
        raise ValueError("dilation factor must be positive")
    if beta == 1.0:
        return np.array(values, dtype=complex, copy=True)
    xi = grid.xi1.copy()
    xi[grid.n // 2] = 0.0
    y = grid.x1 / beta
    rows = np.nonzero((y >= -grid.L) & (y < grid.L))[0]
    nyq = grid.n // 2
    out = np.asarray(values, dtype=complex)
    for ax in range(grid.d):
        coef = np.moveaxis(sfft.fft(out, axis=ax), ax, -1)
        coef[..., nyq] = 0.0
        res = np.zeros(coef.shape, dtype=complex)
        # evaluation matrix built in row blocks to bound memory on large grids
        for lo in range(0, len(rows), _DILATE_BLOCK):
            r = rows[lo : lo + _DILATE_BLOCK]
            evalm = np.exp(1j * np.outer(y[r] + grid.L, xi)) / grid.n
            res[..., r] = coef @ evalm.T
        out = np.moveaxis(res, -1, ax)
    return out * beta ** (-grid.d / 2.0)


# -- norms -------------------------------------------------------------------


@dataclass(frozen=True)
class NormSpec:
    """Which norm to evaluate.

    kind is one of ``"L2", "Lr", "H1", "H1r", "Hab", "X1t", "Hm1r"``;
    ``r`` is the Lebesgue exponent, ``a``/``b`` the H^{a,b} powers, ``t`` the
    time in ``X^1(t)``.
    """

    kind: str
    r: float = 2.0
    a: float = 0.0
    b: float = 0.0
    t: float = 0.0

    def __post_init__(self):
        if self.kind not in ("L2", "Lr", "H1", "H1r", "Hab", "X1t", "Hm1r"):
            raise ValueError(f"unknown norm kind {self.kind!r}")
        if self.r < 1:
            raise ValueError("Lebesgue exponent must be >= 1")


def norm_values(grid: Grid, values: np.ndarray, spec: NormSpec) -> float:
    kind = spec.kind
    if kind == "L2":
        return float(grid.l2(values))
    if kind == "Lr":
        return grid.lr(values, spec.r)
    if kind == "H1":
        return float(grid.l2(grid.japanese_p(values, 1.0)))
    if kind == "H1r":
        return grid.lr(grid.japanese_p(values, 1.0), spec.r)
    if kind == "Hm1r":
        return grid.lr(grid.japanese_p(values, -1.0), spec.r)
    if kind == "Hab":
        weight = (1.0 + grid.r2) ** (spec.b / 2)
        return float(grid.l2(grid.japanese_p(values, spec.a)) + grid.l2(weight * values))
    jv = J_values(grid, values, spec.t)
    return float(grid.l2(values) + np.sqrt(np.sum(grid.l2(jv) ** 2)))


def norm(f: Field, spec: NormSpec) -> float:
    return norm_values(f.grid, f.values, spec)


@dataclass(frozen=True)
class AdmissiblePairs:
    """Space-time exponents used by the X and Y norms."""

    d: int
    q0: float
    r0: float
    q1: float
    r1: float

    @classmethod
    def for_degree(cls, d: int, alpha0: float) -> "AdmissiblePairs":
        if d == 1:
            return cls(1, 12.0, 3.0, 1.0, 2.0)
        if d == 2:
            r0 = 2.0 / (2.0 - alpha0)
            return cls(2, 2.0 / (alpha0 - 1.0), r0, 1.0, r0)
        if d == 3:
            return cls(3, 4.0, 3.0, 1.0, 3.0)
        raise ValueError(f"unsupported dimension d={d}")


# -- operator identities -----------------------------------------------------

IDENTITIES = ("phase", "kinetic", "dilation_A", "dilation_D")
COMMUTATORS = ("A_p2", "A_x2", "p2_x2", "p_x")


def _apply_A(grid: Grid, v: np.ndarray) -> np.ndarray:
    # A = (x.p + p.x)/2
    out = np.zeros_like(v)
    for ax in range(grid.d):
        x = grid.coords[ax]
        out = out + 0.5 * (x * grid.p(v, ax) + grid.p(x * v, ax))
    return out


def _rel(lhs: np.ndarray, rhs: np.ndarray, ref: np.ndarray) -> float:
    scale = np.sqrt(np.sum(np.abs(rhs) ** 2))
    if scale == 0:
        scale = np.sqrt(np.sum(np.abs(ref) ** 2))
    return float(np.sqrt(np.sum(np.abs(lhs - rhs) ** 2)) / scale)


def commutation_UJ_check(f: Field, t1: float, t2: float) -> float:
    """Relative residual of ``U(t1) J(t2) f = J(t1 + t2) U(t1) f`` (all axes)."""
    g = f.grid
    lhs = np.stack([g.propagate(c, t1) for c in J_values(g, f.values, t2)])
    rhs = J_values(g, g.propagate(f.values, t1), t1 + t2)
    return _rel(lhs, rhs, f.values)


def conjugation_identity_check(which: str, a: float, f: Field) -> float:
    """Relative L2 discrepancy between both sides of an operator identity.

    ``which`` selects one of the conjugation identities (first coordinate
    axis; both the ``x`` and ``p`` rows are checked and the worst row is
    returned)::

        phase       e^{-ia x^2} (x, p) e^{ia x^2}   = (x, p + 2 a x)
        kinetic     e^{-ia p^2} (x, p) e^{ia p^2}   = (x - 2 a p, p)
        dilation_A  e^{ia A} (x, p) e^{-ia A}       = (e^a x, e^-a p)
        dilation_D  D(a)^-1 (x, p) D(a)             = (a x, p / a)

    or one of the commutators (``a`` ignored)::

        A_p2   i[A, p^2] = -2 p^2      A_x2   i[A, x^2] = 2 x^2
        p2_x2  i[p^2, x^2] = 4 A       p_x    i[p, x] = 1
    """
    g, v = f.grid, f.values
    x = g.coords[0]
    P = lambda w: g.p(w, 0)  # noqa: E731
    if which == "phase":
        ph = np.exp(1j * a * g.r2)
        lhs_x = np.conj(ph) * x * (ph * v)
        lhs_p = np.conj(ph) * P(ph * v)
        return max(_rel(lhs_x, x * v, v), _rel(lhs_p, P(v) + 2 * a * x * v, v))
    if which == "kinetic":
        fwd = lambda w: g.propagate(w, -2.0 * a)  # noqa: E731
        bwd = lambda w: g.propagate(w, 2.0 * a)  # noqa: E731
        lhs_x = bwd(x * fwd(v))
        lhs_p = bwd(P(fwd(v)))
        return max(_rel(lhs_x, x * v - 2 * a * P(v), v), _rel(lhs_p, P(v), v))
    if which in ("dilation_A", "dilation_D"):
        # e^{-iaA} is the unitary dilation by e^a; D(a) agrees with dilation by a up to a phase
        beta = np.exp(a) if which == "dilation_A" else a
        inner = dilate(g, v, beta)
        lhs_x = dilate(g, x * inner, 1.0 / beta)
        lhs_p = dilate(g, P(inner), 1.0 / beta)
        return max(_rel(lhs_x, beta * x * v, v), _rel(lhs_p, P(v) / beta, v))
    if which == "A_p2":
        lhs = 1j * (_apply_A(g, g.p2(v)) - g.p2(_apply_A(g, v)))
        return _rel(lhs, -2 * g.p2(v), v)
    if which == "A_x2":
        lhs = 1j * (_apply_A(g, g.r2 * v) - g.r2 * _apply_A(g, v))
        return _rel(lhs, 2 * g.r2 * v, v)
    if which == "p2_x2":
        lhs = 1j * (g.p2(g.r2 * v) - g.r2 * g.p2(v))
        return _rel(lhs, 4 * _apply_A(g, v), v)
    if which == "p_x":
        lhs = 1j * (P(x * v) - x * P(v))
        return _rel(lhs, v, v)
    raise ValueError(f"unknown identity {which!r}")


def fractional_hardy_sample(f: Field, s: float, r: float) -> float:
    """Ratio ``|| |x|^-s f ||_{L^r} / || |p|^s f ||_{L^r}``.

    In d=1 the weight ``|x|^(-s r)`` is averaged exactly over every cell. In
    higher dimension only the origin cell is averaged (over the ball of equal
    volume).
    """
    g = f.grid
    if not 0 <= s < g.d / r:
        raise ValueError("need 0 <= s < d/r")
    if s == 0:
        return 1.0
    if g.d == 1:
        # exact cell averages of |x|^(-s r) (product integration of the singular weight)
        q = s * r
        lo, hi = g.x1 - g.dx / 2, g.x1 + g.dx / 2
        prim = lambda y: np.sign(y) * np.abs(y) ** (1 - q) / (1 - q)  # noqa: E731
        weight = ((prim(hi) - prim(lo)) / g.dx) ** (1.0 / r)
    else:
        rad = np.sqrt(g.r2)
        with np.errstate(divide="ignore"):
            weight = rad ** (-s)
        origin = rad == 0
        if np.any(origin):
            vol = {2: np.pi, 3: 4.0 * np.pi / 3.0}[g.d]
            rho = (g.cell / vol) ** (1.0 / g.d)
            weight[origin] = g.d / (g.d - s) * rho ** (-s)
    num = g.lr(weight * f.values, r)
    den = g.lr(g.multiply(f.values, g.k2 ** (s / 2)), r)
    return num / den


# -- snapshot files ----------------------------------------------------------


def save_field(f: Field, path: str | Path) -> None:
    """Write ``path.bin`` (little-endian f64 re/im pairs) and ``path.json``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.ascontiguousarray(f.values, dtype="<c16").tofile(path.with_suffix(".bin"))
    meta = {"grid": f.grid.to_dict(), "time_tag": f.time_tag, "shape": list(f.values.shape)}
    path.with_suffix(".json").write_text(json.dumps(meta, indent=1))


def load_field(path: str | Path) -> Field:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    grid = Grid(**meta["grid"])
    values = np.fromfile(path.with_suffix(".bin"), dtype="<c16").reshape(meta["shape"])
    return Field(grid, values, meta["time_tag"])
