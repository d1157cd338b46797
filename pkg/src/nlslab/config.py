"""Experiment configuration: TOML/JSON loading, defaults and validation."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

try:  # Python >= 3.11
    import tomllib as _toml
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as _toml

from .nonlinearity import CoefficientSeq, DegreeParams, check_assumptions

__all__ = ["ConfigError", "ExperimentConfig", "SUBCOMMANDS", "load_config", "config_hash"]

SUBCOMMANDS = ("coeffs", "simulate", "scatter", "contraction", "lemma-check", "identity-check")

# per-subcommand defaults, echoed into every artifact
_DEFAULTS: dict[str, dict[str, Any]] = {
    "coeffs": {"n_show": 12},
    "simulate": {"dealias": True, "diag_every": 1},
    "scatter": {"gap_tol": 1e-4, "l7_tol": 1e-4, "both_directions": False, "h11_gap_tol": 5e-4, "h11_steps": 40},
    "contraction": {
        "pairs": 10,
        "M_list": [0.02, 0.04, 0.08],
        "ratio_tol": 0.5,
        "slope_rel_tol": 0.25,
        "picard_max_iter": 12,
        "picard_tol": 1e-8,
        "residual_factor": 1e-3,
        "rel_size": 0.15,
        "K": 256,
        "backend": "factorized",
        "cross_check_every": 0,
    },
    "lemma-check": {
        "lemmas": ["K2_16_1", "K2_15_2"],
        "n_list": [2, 5, 10, 20, 50, 100, 200, 500, 1024],
        "t_list": [0.25, 0.5, 1.0],
        "gamma_list": [0.0, 1.0, 2.0],
        "K": 256,
        "growth_tol": 0.25,
    },
    "identity-check": {
        "checks": ["conjugation", "commutators", "UJ", "factorization", "vn_order", "In_identity"],
        "a": 0.3,
        "identity_tol": 1e-8,
        "uj_tol": 1e-10,
        "factorization_tol": 1e-6,
        "order_tol": 0.1,
        "In_tol": 1e-3,
    },
}

_GRID_DEFAULTS = {"n": 1024, "L": 20.0}
_MESH_DEFAULTS = {"T": 1.0, "steps": 20, "max_dt": 0.01, "ratio": 0.9, "t_min": 0.05}


class ConfigError(ValueError):
    """The configuration is malformed or violates a structural assumption."""


def _seq_from_section(sec: Mapping[str, Any], alpha: float) -> CoefficientSeq:
    kind = sec.get("kind", "single")
    lam = sec.get("lam", [1.0, 0.0])
    lam = complex(*lam) if isinstance(lam, (list, tuple)) else complex(lam)
    if kind == "single":
        return CoefficientSeq.single(int(sec.get("n", 1)), lam, alpha)
    if kind == "gauge_invariant":
        return CoefficientSeq.gauge_invariant(lam, alpha)
    if kind == "modulus_type":
        return CoefficientSeq.modulus_type(lam, alpha)
    if kind == "geometric":
        return CoefficientSeq.geometric(float(sec["a"]), alpha, lam)
    if kind == "hk":
        return CoefficientSeq.hk_series(int(sec["k"]), alpha, lam)
    if kind == "coeffs":
        return CoefficientSeq(alpha, {int(n): complex(re, im) for n, re, im in sec["coeffs"]})
    if kind == "zero":
        return CoefficientSeq.zero(alpha)
    raise ConfigError(f"unknown nonlinearity kind {kind!r}")


@dataclass
class ExperimentConfig:
    """Fully defaulted experiment description.

    ``raw`` keeps the merged document (defaults included) so that the
    hash and the echoed copy in the artifacts describe the whole run.
    """

    experiment: str
    d: int
    alpha: float
    seq: CoefficientSeq
    grid: dict
    mesh: dict
    epsilon: float
    M: float
    t0: float
    rng_seed: int
    enforce_assumptions: bool
    options: dict
    raw: dict = field(repr=False, default_factory=dict)

    @property
    def alpha0(self) -> float:
        return DegreeParams(self.d, self.alpha).alpha0

    @property
    def hash(self) -> str:
        return config_hash(self.raw)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        raw = copy.deepcopy(self.raw)
        raw["rng_seed"] = int(seed)
        return ExperimentConfig.from_mapping(raw, self.raw.get("subcommand"))

    @classmethod
    def from_mapping(cls, doc: Mapping[str, Any], subcommand: str | None = None) -> "ExperimentConfig":
        if not isinstance(doc, Mapping):
            raise ConfigError("configuration must be a table")
        doc = copy.deepcopy(dict(doc))
        sub = subcommand or doc.get("subcommand")
        if sub is not None and sub not in SUBCOMMANDS:
            raise ConfigError(f"unknown subcommand {sub!r}")
        try:
            d = int(doc.get("d", 1))
            nl = dict(doc.get("nonlinearity", {}))
            if "alpha" in nl:
                alpha = float(nl["alpha"])
            elif "alpha0" in nl:
                alpha = DegreeParams.from_alpha0(d, float(nl["alpha0"])).alpha
            else:
                raise ConfigError("nonlinearity needs alpha or alpha0")
            params = DegreeParams(d, alpha)
            seq = _seq_from_section(nl, alpha)
            grid = {**_GRID_DEFAULTS, **dict(doc.get("grid", {}))}
            mesh = {**_MESH_DEFAULTS, **dict(doc.get("mesh", {}))}
            eps = float(doc.get("epsilon", 0.02))
            M = float(doc.get("M", 5.0 * eps))
            t0 = float(doc.get("t0", 1.0))
            seed = int(doc.get("rng_seed", 0))
            enforce = bool(doc.get("enforce_assumptions", True))
            opts = {**_DEFAULTS.get(sub, {}), **dict(doc.get("options", {}))}
            grid["n"], grid["L"] = int(grid["n"]), float(grid["L"])
        except ConfigError:
            raise
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(str(exc)) from exc

        if d == 3 and alpha != 2.0:
            raise ConfigError("d=3 runs require alpha = 2")
        if not params.admissible:
            raise ConfigError(f"alpha={alpha} lies outside the admissible window for d={d}")
        if grid["n"] < 8 or grid["n"] & (grid["n"] - 1) or grid["L"] <= 0:
            raise ConfigError("grid needs n a power of two >= 8 and L > 0")
        if eps < 0 or M <= 0 or seed < 0:
            raise ConfigError("epsilon must be >= 0, M > 0 and rng_seed >= 0")
        rep = check_assumptions(seq)
        if enforce and sub != "coeffs" and not (rep.a1_pass and rep.a2_pass):
            raise ConfigError(f"coefficient sequence fails assumptions (A1={rep.a1_pass}, A2={rep.a2_pass})")

        raw = {
            "experiment": str(doc.get("experiment", sub or "experiment")),
            "subcommand": sub,
            "d": d,
            "nonlinearity": {**nl, "alpha": alpha},
            "grid": grid,
            "mesh": mesh,
            "epsilon": eps,
            "M": M,
            "t0": t0,
            "rng_seed": seed,
            "enforce_assumptions": enforce,
            "options": opts,
        }
        return cls(raw["experiment"], d, alpha, seq, grid, mesh, eps, M, t0, seed, enforce, opts, raw)


def config_hash(raw: Mapping[str, Any]) -> str:
    """Git blob-style SHA-1 of the canonical JSON form."""
    body = json.dumps(raw, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha1(b"blob %d\0" % len(body) + body).hexdigest()


def load_config(path: str | Path, subcommand: str | None = None) -> ExperimentConfig:
    """Read a TOML (or ``.json``) file and validate it."""
    path = Path(path)
    try:
        text = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    try:
        if path.suffix.lower() == ".json":
            doc = json.loads(text)
        else:
            doc = _toml.loads(text.decode())
    except (ValueError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return ExperimentConfig.from_mapping(doc, subcommand)
