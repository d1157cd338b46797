"""Coefficient calculus for homogeneous nonlinearities.

A homogeneous nonlinearity ``F`` of degree ``alpha`` is identified with the
Fourier coefficients of ``theta -> F(exp(i theta))``::

    F(u) = sum_n lam_n |u|**(alpha - n) * u**n = |u|**alpha * H(u / |u|),
    H(w) = sum_n lam_n w**n.

Everything in this module works through the phase function ``H`` and its
derivative, which keeps evaluation vectorised and lets the infinite families
(geometric and ``h_k`` series) use their closed forms instead of truncation.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy.special import gammaln

__all__ = [
    "A1_WEIGHT_EXPONENT",
    "AssumptionReport",
    "CoefficientSeq",
    "DegreeParams",
    "SingularityError",
    "check_assumptions",
    "coefficients_from_phase",
    "eval_F",
    "eval_Fn",
    "eval_Fn_wirtinger",
    "eval_wirtinger",
    "strauss_exponent",
]

A1_WEIGHT_EXPONENT = 3.5

# admissible degree windows per dimension: (lo, hi) open interval, d=3 is a point
_ALPHA_WINDOW = {1: (3.5, 5.0), 2: (2.0, 3.0), 3: (2.0, 2.0)}


class SingularityError(ValueError):
    """A Wirtinger derivative has no finite value at the requested point."""


def strauss_exponent(d: int) -> float:
    """Return the Strauss exponent ``1 + (2 - d + sqrt(d^2 + 12 d + 4)) / (2 d)``."""
    if d not in (1, 2, 3):
        raise ValueError(f"unsupported dimension d={d}; expected 1, 2 or 3")
    return 1.0 + (2.0 - d + math.sqrt(d * d + 12.0 * d + 4.0)) / (2.0 * d)


@dataclass(frozen=True)
class DegreeParams:
    """Degree of the nonlinearity expressed both as ``alpha`` and ``alpha0``.

    ``alpha = 1 + 2 alpha0 / d``.
    """

    d: int
    alpha: float

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ValueError(f"unsupported dimension d={self.d}")

    @property
    def alpha0(self) -> float:
        return self.d * (self.alpha - 1.0) / 2.0

    @property
    def strauss(self) -> float:
        return strauss_exponent(self.d)

    @property
    def admissible(self) -> bool:
        lo, hi = _ALPHA_WINDOW[self.d]
        if self.d == 3:
            return self.alpha == 2.0
        return lo < self.alpha < hi

    @classmethod
    def from_alpha0(cls, d: int, alpha0: float) -> "DegreeParams":
        return cls(d, 1.0 + 2.0 * alpha0 / d)


def _hk_coefficients(k: int, n: np.ndarray) -> np.ndarray:
    # k! / (n (n+1) ... (n+k)) = k! Gamma(n) / Gamma(n+k+1)
    n = np.asarray(n, dtype=float)
    return np.exp(gammaln(k + 1.0) + gammaln(n) - gammaln(n + k + 1.0))


def _hk(k: int, z: np.ndarray) -> np.ndarray:
    """Closed form of ``h_k(z) = sum_{n>=1} k!/(n...(n+k)) z^n`` for ``|z| <= 1``."""
    z = np.asarray(z, dtype=complex)
    if z.ndim == 0:
        return _hk(k, z.reshape(1)).reshape(())
    out = np.empty_like(z)
    at_one = z == 1.0
    zz = np.where(at_one, 0.5, z)
    small = np.abs(zz) < 0.25
    # closed form loses digits near z = 0 (it divides by z), use the series there
    q = (zz - 1.0) / np.where(small, 1.0, zz)
    log_term = -np.log1p(-zz)
    val = q**k * log_term
    for m in range(1, k + 1):
        val = val + q ** (k - m) / m
    if np.any(small):
        ns = np.arange(1, 60)
        coef = _hk_coefficients(k, ns)
        series = np.polynomial.polynomial.polyval(zz[small], np.concatenate([[0.0], coef]))
        val = np.where(small, 0.0, val)
        val[small] = series
    out[...] = val
    out[at_one] = 1.0 / k
    return out


def _hk_derivative(k: int, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=complex)
    if z.ndim == 0:
        return _hk_derivative(k, z.reshape(1)).reshape(())
    at_one = z == 1.0
    zz = np.where(at_one, 0.5, z)
    small = np.abs(zz) < 0.25
    safe = np.where(small, 1.0, zz)
    q = (safe - 1.0) / safe
    dq = 1.0 / safe**2
    log_term = -np.log1p(-safe)
    val = k * q ** (k - 1) * dq * log_term + q**k / (1.0 - safe)
    for m in range(1, k):
        val = val + (k - m) / m * q ** (k - m - 1) * dq
    if np.any(small):
        ns = np.arange(1, 60)
        coef = _hk_coefficients(k, ns) * ns
        val[small] = np.polynomial.polynomial.polyval(zz[small], coef)
    if np.any(at_one):
        val[at_one] = np.inf if k == 1 else 1.0 / (k - 1)
    return val


@dataclass(frozen=True)
class CoefficientSeq:
    """Coefficients ``{lam_n}`` of a homogeneous nonlinearity of degree ``alpha``.

    Parameters
    ----------
    alpha : float
        Degree of homogeneity, must exceed 1.
    coeffs : mapping int -> complex
        Explicit coefficients for ``tail_kind == "finite"``.
    tail_kind : {"finite", "geometric", "hk"}
        ``"geometric"`` means ``lam_n = scale * a**(n-1)`` for ``n >= 1``;
        ``"hk"`` means ``lam_n = scale * k! / (n (n+1) ... (n+k))``.
    tail_param : float
        ``a`` for the geometric family, ``k`` for the ``h_k`` family.
    scale : complex
        Overall factor for the closed-form families.
    """

    alpha: float
    coeffs: Mapping[int, complex] = field(default_factory=dict)
    tail_kind: str = "finite"
    tail_param: float = 0.0
    scale: complex = 1.0

    def __post_init__(self):
        if not self.alpha > 1.0:
            raise ValueError(f"alpha must exceed 1, got {self.alpha}")
        if self.tail_kind not in ("finite", "geometric", "hk"):
            raise ValueError(f"unknown tail kind {self.tail_kind!r}")
        if self.tail_kind == "geometric" and not abs(self.tail_param) < 1.0:
            raise ValueError("geometric tail requires |a| < 1")
        if self.tail_kind == "hk":
            k = self.tail_param
            if k != int(k) or k < 1:
                raise ValueError("h_k tail requires a positive integer k")
        clean = {int(n): complex(c) for n, c in dict(self.coeffs).items()}
        if not all(np.isfinite(c) for c in clean.values()):
            raise ValueError("coefficients must be finite")
        object.__setattr__(self, "coeffs", clean)
        object.__setattr__(self, "scale", complex(self.scale))

    # -- constructors -------------------------------------------------------

    @classmethod
    def single(cls, n: int, lam: complex, alpha: float) -> "CoefficientSeq":
        return cls(alpha, {n: lam})

    @classmethod
    def gauge_invariant(cls, lam: complex, alpha: float) -> "CoefficientSeq":
        return cls(alpha, {1: lam})

    @classmethod
    def modulus_type(cls, lam: complex, alpha: float) -> "CoefficientSeq":
        return cls(alpha, {0: lam})

    @classmethod
    def geometric(cls, a: float, alpha: float, scale: complex = 1.0) -> "CoefficientSeq":
        return cls(alpha, tail_kind="geometric", tail_param=float(a), scale=scale)

    @classmethod
    def hk_series(cls, k: int, alpha: float, scale: complex = 1.0) -> "CoefficientSeq":
        return cls(alpha, tail_kind="hk", tail_param=int(k), scale=scale)

    @classmethod
    def zero(cls, alpha: float) -> "CoefficientSeq":
        return cls(alpha, {})

    # -- coefficient access -------------------------------------------------

    def coefficient(self, n: int) -> complex:
        if self.tail_kind == "finite":
            return self.coeffs.get(int(n), 0j)
        if n < 1:
            return 0j
        if self.tail_kind == "geometric":
            return self.scale * self.tail_param ** (n - 1)
        return self.scale * float(_hk_coefficients(int(self.tail_param), np.array([n]))[0])

    def default_nmax(self) -> int:
        """Truncation index used when the series is summed term by term."""
        if self.tail_kind == "geometric":
            return 12 if abs(self.tail_param) <= 0.5 else _geometric_nmax(self.tail_param)
        if self.tail_kind == "hk":
            return 32
        return max(self.coeffs, default=1)

    def support(self, nmax: int | None = None) -> list[int]:
        """Indices with non-zero coefficient, truncated at ``nmax`` for tails."""
        if self.tail_kind == "finite":
            return sorted(n for n, c in self.coeffs.items() if c != 0)
        nmax = self.default_nmax() if nmax is None else nmax
        return list(range(1, nmax + 1))

    def truncated(self, nmax: int) -> "CoefficientSeq":
        terms = {n: self.coefficient(n) for n in self.support(nmax) if n <= nmax}
        return CoefficientSeq(self.alpha, terms)

    @property
    def is_zero(self) -> bool:
        if self.tail_kind == "finite":
            return all(c == 0 for c in self.coeffs.values())
        return self.scale == 0

    @property
    def is_gauge_invariant(self) -> bool:
        return self.tail_kind == "finite" and set(self.support()) <= {1}

    @property
    def has_real_coefficients(self) -> bool:
        if self.tail_kind == "finite":
            return all(c.imag == 0 for c in self.coeffs.values())
        return self.scale.imag == 0

    # -- phase function -----------------------------------------------------

    def phase(self, w) -> np.ndarray:
        """``H(w) = sum_n lam_n w**n`` for ``|w| = 1``."""
        w = np.asarray(w, dtype=complex)
        if self.tail_kind == "geometric":
            a = self.tail_param
            return self.scale * w / (1.0 - a * w)
        if self.tail_kind == "hk":
            return self.scale * _hk(int(self.tail_param), w)
        out = np.zeros_like(w)
        for n, c in self.coeffs.items():
            if c != 0:
                out = out + c * w**n
        return out

    def phase_derivative(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=complex)
        if self.tail_kind == "geometric":
            a = self.tail_param
            return self.scale / (1.0 - a * w) ** 2
        if self.tail_kind == "hk":
            with np.errstate(invalid="ignore"):  # singular at w = 1, caught by callers
                return self.scale * _hk_derivative(int(self.tail_param), w)
        out = np.zeros_like(w)
        for n, c in self.coeffs.items():
            if c != 0 and n != 0:
                out = out + c * n * w ** (n - 1)
        return out

    # -- serialisation ------------------------------------------------------

    def to_dict(self) -> dict:
        tail: dict = {"kind": self.tail_kind}
        if self.tail_kind != "finite":
            tail["param"] = self.tail_param
            tail["scale"] = [self.scale.real, self.scale.imag]
        return {
            "alpha": self.alpha,
            "coeffs": [[n, c.real, c.imag] for n, c in sorted(self.coeffs.items())],
            "tail": tail,
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "CoefficientSeq":
        tail = doc.get("tail", {"kind": "finite"})
        kind = tail.get("kind", "finite")
        coeffs = {int(n): complex(re, im) for n, re, im in doc.get("coeffs", [])}
        if kind == "finite":
            return cls(float(doc["alpha"]), coeffs)
        scale = complex(*tail.get("scale", [1.0, 0.0]))
        return cls(float(doc["alpha"]), coeffs, kind, tail["param"], scale)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "CoefficientSeq":
        return cls.from_dict(json.loads(text))


def _geometric_nmax(a: float, rel: float = 1e-12) -> int:
    n = 1
    while abs(a) ** (n - 1) * (1 + n * n) ** 1.75 > rel:
        n += 1
    return n


def _split(u):
    u = np.asarray(u, dtype=complex)
    r = np.abs(u)
    nz = r > 0
    w = np.where(nz, np.exp(1j * np.angle(u)), 1.0)  # safe for subnormal u
    return u, r, w, nz


def eval_F(seq: CoefficientSeq, u):
    """Evaluate ``F(u) = |u|**alpha * H(u/|u|)``; ``F(0) = 0``."""
    u, r, w, nz = _split(u)
    with np.errstate(over="ignore", invalid="ignore"):  # reported just below
        val = np.where(nz, r**seq.alpha * seq.phase(w), 0.0)
    if not np.all(np.isfinite(val)):
        raise ValueError("nonlinearity evaluation produced non-finite values")
    return val if val.ndim else complex(val)


def eval_Fn(n: int, alpha: float, u):
    """``F_n(u) = |u|**(alpha - n) * u**n`` with ``F_n(0) = 0``."""
    u, r, w, nz = _split(u)
    val = np.where(nz, r**alpha * w**n, 0.0)
    return val if val.ndim else complex(val)


def eval_wirtinger(seq: CoefficientSeq, u):
    """Return ``(dF/dz, dF/dzbar)`` at ``u``.

    With ``w = u/|u|``::

        dF/dz    = |u|**(alpha-1) * (alpha/2 * H(w)/w + H'(w)/2)
        dF/dzbar = |u|**(alpha-1) * (alpha/2 * w H(w) - w**2 H'(w)/2)

    Both vanish continuously at ``u = 0`` because ``alpha > 1``.
    """
    u, r, w, nz = _split(u)
    h = seq.phase(w)
    dh = seq.phase_derivative(w)
    if not np.all(np.isfinite(dh[nz] if np.ndim(dh) else dh)):
        raise SingularityError("phase derivative is singular at the requested point")
    amp = np.where(nz, r ** (seq.alpha - 1.0), 0.0)
    dz = amp * (0.5 * seq.alpha * h / w + 0.5 * dh)
    dzbar = amp * (0.5 * seq.alpha * w * h - 0.5 * w**2 * dh)
    dz = np.where(nz, dz, 0.0)
    dzbar = np.where(nz, dzbar, 0.0)
    if dz.ndim == 0:
        return complex(dz), complex(dzbar)
    return dz, dzbar


def eval_Fn_wirtinger(n: int, alpha: float, u):
    """Wirtinger derivatives of a single ``F_n``::

        dF_n/dz = (alpha + n)/2 |u|^(alpha-n) u^(n-1),
        dF_n/dzbar = (alpha - n)/2 |u|^(alpha-n-2) u^(n+1).
    """
    u, r, w, nz = _split(u)
    amp = np.where(nz, r ** (alpha - 1.0), 0.0)
    dz = np.where(nz, 0.5 * (alpha + n) * amp * w ** (n - 1), 0.0)
    dzbar = np.where(nz, 0.5 * (alpha - n) * amp * w ** (n + 1), 0.0)
    if dz.ndim == 0:
        return complex(dz), complex(dzbar)
    return dz, dzbar


def coefficients_from_phase(
    f: Callable[[np.ndarray], np.ndarray], nmax: int, quad_points: int | None = None, alpha: float = 2.0
) -> CoefficientSeq:
    """Estimate ``lam_n``, ``|n| <= nmax``, by the trapezoid rule on ``[0, 2 pi)``.

    ``f`` receives an array of angles and returns ``F(exp(i theta))``.
    """
    if quad_points is None:
        quad_points = 8 * nmax + 8
    if quad_points < 4 * nmax:
        raise ValueError("quad_points must be at least 4 * nmax")
    theta = 2.0 * np.pi * np.arange(quad_points) / quad_points
    samples = np.asarray(f(theta), dtype=complex)
    if samples.shape != theta.shape or not np.all(np.isfinite(samples)):
        raise ValueError("phase samples must be finite with one value per angle")
    spectrum = np.fft.fft(samples) / quad_points
    coeffs = {}
    for n in range(-nmax, nmax + 1):
        coeffs[n] = complex(spectrum[n % quad_points])
    return CoefficientSeq(alpha, coeffs)


@dataclass(frozen=True)
class AssumptionReport:
    """Outcome of the weighted-summability and sign checks.

    ``a1_sum`` is the summed head of ``sum <n>^{7/2} |lam_n|``; the exact value
    lies in ``[a1_sum, a1_sum + a1_tail_bound]``. Divergence is reported as
    ``inf``.
    """

    a1_sum: float
    a1_tail_bound: float
    a1_pass: bool
    a2_pass: bool


def _weight(n):
    return (1.0 + np.asarray(n, dtype=float) ** 2) ** (A1_WEIGHT_EXPONENT / 2)


def check_assumptions(seq: CoefficientSeq, rel_tail: float = 1e-12) -> AssumptionReport:
    if seq.tail_kind == "finite":
        total = float(sum(_weight(n) * abs(c) for n, c in seq.coeffs.items()))
        a2 = all(c == 0 for n, c in seq.coeffs.items() if n <= 0)
        return AssumptionReport(total, 0.0, True, a2)

    s = abs(seq.scale)
    if seq.tail_kind == "geometric":
        a = abs(seq.tail_param)
        if a == 0.0 or s == 0.0:
            return AssumptionReport(float(_weight(1) * s), 0.0, True, True)
        head = 0.0
        n = 1
        while True:
            term = float(_weight(n)) * s * a ** (n - 1)
            head += term
            rho = float((_weight(n + 1) / _weight(n))) * a
            if rho < 1.0:
                tail = term * rho / (1.0 - rho)
                if tail <= rel_tail * head:
                    return AssumptionReport(head, tail, True, True)
            n += 1

    k = int(seq.tail_param)
    # <n>^{7/2} k!/(n...(n+k)) ~ n^{5/2-k}: summable iff k > 7/2
    if k + 1 - A1_WEIGHT_EXPONENT <= 1.0:
        return AssumptionReport(math.inf, math.inf, False, True)
    nhead = 10**6
    ns = np.arange(1, nhead + 1, dtype=float)
    head = float(np.sum(_weight(ns) * _hk_coefficients(k, ns))) * s
    # c_n <= k!/n^{k+1} and <n>^{7/2} <= n^{7/2} (1 + 1/N^2)^{7/4} for n > N
    expo = k + 1 - A1_WEIGHT_EXPONENT
    tail = s * math.factorial(k) * (1 + 1 / nhead**2) ** 1.75 * nhead ** (1 - expo) / (expo - 1)
    return AssumptionReport(head, tail, True, True)
