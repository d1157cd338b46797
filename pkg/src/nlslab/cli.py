"""Command-line experiment runner.

Usage::

    nlslab SUBCOMMAND [--config PATH] [--out DIR] [--workers N]
                      [--rng-seed SEED] [--strict] [--lemma IDS]

Exit codes: 0 all records pass, 1 some record fails, 2 invalid
configuration (nothing written), 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .config import SUBCOMMANDS, ConfigError, ExperimentConfig, load_config
from .evolution import BlowUpError, TimeMesh, evolve, save_trajectory
from .nonlinearity import (
    CoefficientSeq,
    DegreeParams,
    check_assumptions,
    coefficients_from_phase,
)
from .oscillator import (
    LREST2,
    NORM_BOUNDS,
    ResolventSpec,
    TruncationError,
    apply_resolvent_direct,
    apply_resolvent_factorized,
    decade_growth,
    lrest2_bounds,
    resolvent_norm_scaling,
    rest_derivative_bound,
    vn_derivative_order,
    write_lemma_csv,
)
from .picard import (
    NonContractionError,
    PhiContext,
    compute_terms,
    picard_iterate,
    scaled_pair_ratios,
    v1_from_u0,
    write_contraction_csv,
    write_history_csv,
)
from .report import ReportRecord, write_artifacts
from .scattering import extract_profile, h11_both_directions, lemma_l7_check, save_scatter_report
from .spectral import (
    COMMUTATORS,
    IDENTITIES,
    Field,
    Grid,
    commutation_UJ_check,
    conjugation_identity_check,
)

__all__ = ["main", "run"]

NUMERICAL_ERRORS = (TruncationError, BlowUpError, NonContractionError, FloatingPointError, np.linalg.LinAlgError)

DEFAULT_DOC = {"d": 1, "nonlinearity": {"alpha": 4.0, "kind": "single", "n": 2, "lam": [1.0, 0.0]}}


class _Run:
    """Collects records and warnings for one subcommand invocation."""

    def __init__(self, cfg: ExperimentConfig, out: Path, workers: int):
        self.cfg = cfg
        self.out = out
        self.workers = max(1, int(workers))
        self.records: list[ReportRecord] = []
        self.warnings: list[str] = []
        self.extra: dict = {}

    def rec(self, metric: str, value: float, tol: float | None = None, comparator: str = "le") -> None:
        self.records.append(ReportRecord.check(self.cfg.experiment, self.cfg.hash, metric, value, tol, comparator))

    def warn(self, msg: str) -> None:
        self.warnings.append(msg)

    def pmap(self, fn: Callable, items: list) -> list:
        if self.workers == 1 or len(items) < 2:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            return list(pool.map(fn, items))


def _grid(cfg: ExperimentConfig, key: str | None = None) -> Grid:
    spec = cfg.options.get(key, cfg.grid) if key else cfg.grid
    return Grid(cfg.d, int(spec["n"]), float(spec["L"]))


def _gaussian(g: Grid, amp: float) -> Field:
    return Field(g, amp * np.exp(-0.5 * g.r2))


# -- subcommands -------------------------------------------------------------


def _run_coeffs(run: _Run) -> None:
    cfg = run.cfg
    seq = cfg.seq
    nshow = int(cfg.options["n_show"])
    rep = check_assumptions(seq)
    idx = seq.support(nshow) if seq.tail_kind != "finite" else seq.support()
    with (run.out / "coeffs.csv").open("w") as fh:
        fh.write("n,lambda_re,lambda_im,abs\n")
        for n in idx:
            c = seq.coefficient(n)
            fh.write(f"{n},{c.real!r},{c.imag!r},{abs(c)!r}\n")
    nmax = max([abs(n) for n in idx] + [1])
    est = coefficients_from_phase(lambda th: seq.phase(np.exp(1j * th)), nmax, quad_points=4096, alpha=seq.alpha)
    err = max(abs(est.coefficient(n) - seq.coefficient(n)) for n in range(-nmax, nmax + 1))
    params = DegreeParams(cfg.d, cfg.alpha)
    run.rec("A1_pass", float(rep.a1_pass), 1.0, "ge")
    run.rec("A2_pass", float(rep.a2_pass), 1.0, "ge")
    run.rec("A1_weighted_sum", rep.a1_sum)
    run.rec("roundtrip_max_error", err, 1e-10)
    run.rec("strauss_exponent", params.strauss)
    run.rec("alpha0", params.alpha0)


def _run_simulate(run: _Run) -> None:
    cfg = run.cfg
    g = _grid(cfg)
    mesh = TimeMesh.uniform(0.0, float(cfg.mesh["T"]), int(cfg.mesh["steps"]))
    traj = evolve(_gaussian(g, cfg.epsilon), mesh, cfg.seq, max_dt=float(cfg.mesh["max_dt"]), t0=cfg.t0,
                  dealias=bool(cfg.options["dealias"]))
    if traj.event is not None:
        raise BlowUpError(traj.event.reason, traj.event.t_last_good)
    save_trajectory(traj, run.out, every=int(cfg.options["diag_every"]))
    mass = traj.diagnostics["mass"]
    drift = float(np.max(np.abs(mass - mass[0])) / mass[0]) if mass[0] > 0 else 0.0
    gi_real = all(n == 1 for n in cfg.seq.support()) and cfg.seq.has_real_coefficients
    run.rec("mass_rel_change", drift, 1e-10 if gi_real else None)
    run.rec("max_boundary_leak", float(np.max(traj.diagnostics["boundary_leak"])))
    if float(np.max(traj.diagnostics["boundary_leak"])) > 1e-6:
        run.warn("field reaches the box boundary")


def _run_scatter(run: _Run) -> None:
    cfg = run.cfg
    o = cfg.options
    g = _grid(cfg)
    T = float(cfg.mesh["T"])
    mesh = TimeMesh.uniform(0.0, T, int(cfg.mesh["steps"]))
    u0 = _gaussian(g, cfg.epsilon)
    traj = evolve(u0, mesh, cfg.seq, max_dt=float(cfg.mesh["max_dt"]), t0=cfg.t0)
    if traj.event is not None:
        raise BlowUpError(traj.event.reason, traj.event.t_last_good)
    rep = extract_profile(traj, cfg.t0)
    save_scatter_report(rep, run.out)
    run.rec("pullback_gap_half_to_final", rep.gap(T / 2.0, T), float(o["gap_tol"]))
    run.rec("cauchy_monotone", float(rep.monotone), 1.0, "ge")
    run.rec("rate_fit", rep.rate_fit)
    rows = lemma_l7_check(traj)
    if rows:
        run.rec("l7_mass_gap", max(r["mass_gap"] for r in rows), float(o["l7_tol"]))
        run.rec("l7_jnorm_gap", max(r["jnorm_gap"] for r in rows), float(o["l7_tol"]))
    if o["both_directions"]:
        both = h11_both_directions(u0, cfg.seq, T, steps=int(o["h11_steps"]), max_dt=float(cfg.mesh["max_dt"]))
        save_scatter_report(both, run.out, "h11")
        run.rec("h11_gap_forward", both.gap(T / 2.0, T), float(o["h11_gap_tol"]))
        run.rec("h11_gap_backward", both.both_directions.gap(-T / 2.0, -T), float(o["h11_gap_tol"]))
    if float(traj.field(len(traj.times) - 1).boundary_leak()) > 1e-6:
        run.warn("final field reaches the box boundary")


def _run_contraction(run: _Run) -> None:
    cfg = run.cfg
    o = cfg.options
    if cfg.d != 1:
        raise ConfigError("contraction runs are one-dimensional")
    g = _grid(cfg)
    mesh = TimeMesh.geometric(float(cfg.mesh["ratio"]), float(cfg.mesh["t_min"]), 1.0)
    ctx = PhiContext(g, mesh, cfg.seq, cfg.alpha0, K=int(o["K"]), backend=str(o["backend"]),
                     cross_check_every=int(o["cross_check_every"]))
    scale = cfg.epsilon / cfg.M

    def make_v1(M: float) -> np.ndarray:
        return v1_from_u0(_gaussian(g, scale * M))

    rng = np.random.default_rng(cfg.rng_seed)
    rows = scaled_pair_ratios(ctx, make_v1, cfg.M, int(o["pairs"]), rng, rel_size=float(o["rel_size"]))
    run.rec("max_contraction_ratio", max(r["ratio"] for r in rows), float(o["ratio_tol"]))
    if not all(r["in_ball"] for r in rows):
        run.warn("some perturbed trajectories left the ball")
    slope_rows = []
    for M in o["M_list"]:
        slope_rows += scaled_pair_ratios(ctx, make_v1, float(M), 1, np.random.default_rng(cfg.rng_seed),
                                         rel_size=float(o["rel_size"]))
    Ms = np.array([r["M"] for r in slope_rows])
    rs = np.array([r["ratio"] for r in slope_rows])
    slope = float(np.polyfit(np.log(Ms), np.log(rs), 1)[0])
    target = cfg.alpha - 1.0
    run.rec("ratio_log_slope_rel_error", abs(slope - target) / target, float(o["slope_rel_tol"]))
    run.rec("ratio_log_slope", slope)
    write_contraction_csv(rows + slope_rows, run.out / "contraction.csv", cfg.epsilon)

    res = picard_iterate(ctx, make_v1(cfg.M), max_iter=int(o["picard_max_iter"]), tol=float(o["picard_tol"]))
    write_history_csv(res.history, run.out / "history.csv")
    run.rec("picard_converged", float(res.converged), 1.0, "ge")
    run.rec("picard_iterations", len(res.history), float(o["picard_max_iter"]))
    run.rec("picard_final_increment", res.history[-1]["increment_X"], float(o["picard_tol"]))
    run.rec("fixed_point_residual_Y", res.history[-1]["residual_Y"], float(o["residual_factor"]) * cfg.M)
    incs = [h["increment_X"] for h in res.history]
    if len(incs) > 1:
        run.rec("max_increment_ratio", max(b / a for a, b in zip(incs[:-1], incs[1:]) if a > 0), 0.6)
    run.rec("max_truncation_loss", ctx.diagnostics["truncation_loss"])
    if ctx.diagnostics.get("mesh_coarse"):
        run.warn("error functional is mesh sensitive")


def _lemma_tasks(run: _Run, lemmas: list[str]) -> list[tuple]:
    o = run.cfg.options
    tasks = []
    for lem in lemmas:
        if lem in NORM_BOUNDS:
            tasks.append(("norm", lem, None))
        elif lem in LREST2:
            tasks += [("rest2", lem, float(gm)) for gm in o["gamma_list"]]
        elif lem == "L_Rest2":
            tasks += [("rest2", w, float(gm)) for w in LREST2 for gm in o["gamma_list"]]
        elif lem == "K5_4_1":
            tasks.append(("deriv", lem, None))
        else:
            raise ConfigError(f"unknown lemma id {lem!r}")
    return tasks


def _run_lemma(run: _Run) -> None:
    cfg = run.cfg
    o = cfg.options
    ns = [int(n) for n in o["n_list"]]
    ts = [float(t) for t in o["t_list"]]
    K, tol = int(o["K"]), float(o["growth_tol"])
    a0 = cfg.alpha0 if cfg.d == 1 else 1.5

    def work(task):
        kind, lem, gm = task
        if kind == "norm":
            return task, resolvent_norm_scaling(ns, a0, float(o.get("theta", 1.0)), lem, K, tol)
        if kind == "rest2":
            return task, lrest2_bounds(ns, ts[:1], gm, lem, a0, K, tol)
        return task, rest_derivative_bound(ns, ts, a0, K, tol)

    all_rows = []
    for (kind, lem, gm), rows in run.pmap(work, _lemma_tasks(run, list(o["lemmas"]))):
        all_rows += rows
        label = lem if gm is None else f"{lem}[gamma={gm:g}]"
        times = sorted({repr(r.t) for r in rows})  # repr groups nan rows too
        for t in times:
            sub = [r for r in rows if repr(r.t) == t]
            comp = [r.compensated for r in sub]
            tag = label if len(times) == 1 else f"{label}[t={float(t):g}]"
            run.rec(f"{tag}:decade_growth", decade_growth([r.n for r in sub], comp), tol)
            run.rec(f"{tag}:spread", max(comp) / min(comp) - 1.0 if min(comp) > 0 else float("inf"))
        if kind == "norm" and NORM_BOUNDS[lem][0] == "R":
            c = np.sqrt(np.array([r.n for r in rows]) - 1.0)
            closed = 1.0 / np.abs(a0 - 1.0 + 0.5j * c)
            meas = np.array([r.measured for r in rows])
            run.rec(f"{label}:closed_form_rel_error", float(np.max(np.abs(meas - closed) / closed)), 1e-8)
    write_lemma_csv(all_rows, run.out / "lemma.csv")


def _run_identity(run: _Run) -> None:
    cfg = run.cfg
    o = cfg.options
    checks = list(o["checks"])
    g = _grid(cfg)
    rng = np.random.default_rng(cfg.rng_seed)
    x = g.coords[0]
    f = Field(g, np.exp(-0.5 * g.r2) * (1.0 + 0.2 * x))
    if "conjugation" in checks:
        for w in IDENTITIES:
            a = float(o["a"]) if w != "dilation_D" else 1.0 + float(o["a"])
            run.rec(f"identity:{w}", conjugation_identity_check(w, a, f), float(o["identity_tol"]))
    if "commutators" in checks:
        for w in COMMUTATORS:
            run.rec(f"commutator:{w}", conjugation_identity_check(w, 0.0, f), float(o["identity_tol"]))
    if "UJ" in checks:
        c = rng.standard_normal(4)
        t1, t2 = rng.uniform(-1.0, 1.0, 2)
        poly = sum(c[k] * x**k for k in range(4))
        h = Field(g, np.exp(-0.5 * g.r2) * poly)
        run.rec("UJ_commutation", commutation_UJ_check(h, float(t1), float(t2)), float(o["uj_tol"]))
    one_d = [c for c in ("factorization", "vn_order", "In_identity") if c in checks]
    if one_d and cfg.d != 1:
        run.warn(f"skipped one-dimensional checks {one_d} for d={cfg.d}")
        return
    dense = Grid(1, int(o.get("dense_grid", {}).get("n", 1024)), float(o.get("dense_grid", {}).get("L", 16.0)))
    gauss = Field(dense, np.exp(-0.5 * dense.r2))
    if "factorization" in checks:
        worst = 0.0
        for n in (2, 3, 10):
            for t in (0.25, 0.5, 1.0):
                spec = ResolventSpec(n, 1.5, t)
                a = apply_resolvent_direct(spec, gauss).values
                b = apply_resolvent_factorized(spec, gauss).values
                worst = max(worst, float(dense.l2(a - b) / dense.l2(a)))
        run.rec("factorization_rel_error", worst, float(o["factorization_tol"]))
    if "vn_order" in checks:
        slopes = vn_derivative_order(dense, 3, 0.5, gauss.values)
        run.rec("vn_order_deviation", max(abs(s - 2.0) / 2.0 for s in slopes), float(o["order_tol"]))
    if "In_identity" in checks:
        _identity_In(run, o)


def _identity_In(run: _Run, o: dict) -> None:
    g = Grid(1, int(o.get("In_grid", {}).get("n", 512)), float(o.get("In_grid", {}).get("L", 12.0)))
    eps = float(o.get("In_eps", 0.5))
    v1 = Field(g, v1_from_u0(_gaussian(g, eps)), 1.0)
    alpha = run.cfg.alpha if run.cfg.d == 1 else 4.0
    base = int(o.get("In_steps", 750))
    for n in o.get("In_n", [2, 3, 5]):
        seq = CoefficientSeq.single(int(n), 1.0, alpha)
        errs = []
        for steps in (base, 4 * base):
            mesh = TimeMesh.uniform(1.0, 0.25, steps)
            tr = evolve(v1, mesh, seq, "v_equation", max_dt=1.0, alpha0=DegreeParams(1, alpha).alpha0,
                        diagnostics=False)
            ctx = PhiContext(g, mesh, seq, DegreeParams(1, alpha).alpha0, tol=1e-3)
            terms = compute_terms(ctx, tr.values, int(n), want_I=True)
            worst = 0.0
            for t in (0.25, 0.5):
                j = int(np.argmin(np.abs(mesh.nodes - t)))
                worst = max(worst, float(g.l2(terms.I[j] - terms.A_sum[j]) / g.l2(terms.I[j])))
            errs.append(worst)
        run.rec(f"In_identity[n={n}]", errs[-1], float(o["In_tol"]))
        run.rec(f"In_identity[n={n}]:refinement_gain", errs[0] / errs[-1], 1.0, "ge")


RUNNERS = {
    "coeffs": _run_coeffs,
    "simulate": _run_simulate,
    "scatter": _run_scatter,
    "contraction": _run_contraction,
    "lemma-check": _run_lemma,
    "identity-check": _run_identity,
}


# -- entry points ------------------------------------------------------------


def run(
    subcommand: str,
    config: ExperimentConfig,
    out: str | Path,
    *,
    workers: int = 1,
    strict: bool = False,
) -> tuple[int, dict]:
    """Execute one subcommand; returns ``(exit_code, summary)``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    r = _Run(config, out, workers)
    status = "ok"
    error = None
    try:
        RUNNERS[subcommand](r)
    except NUMERICAL_ERRORS as exc:
        status, error = "numerical_failure", f"{type(exc).__name__}: {exc}"
    passed = all(rec.passed for rec in r.records) and (not strict or not r.warnings)
    summary = {
        "version": __version__,
        "experiment": config.experiment,
        "subcommand": subcommand,
        "config_hash": config.hash,
        "config": config.raw,
        "status": status,
        "error": error,
        "warnings": r.warnings,
        "strict": strict,
        "passed": bool(passed and status == "ok"),
    }
    (out / "fields").mkdir(exist_ok=True)
    (out / "config.json").write_text(json.dumps(config.raw, indent=1, sort_keys=True))
    write_artifacts(out, summary, r.records)
    if status != "ok":
        return 3, summary
    return (0 if passed else 1), summary


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nlslab", description="Numerical experiments for homogeneous-nonlinearity NLS.")
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", type=Path, help="TOML or JSON experiment file (defaults when omitted)")
    p.add_argument("--out", type=Path, default=Path("out"))
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--rng-seed", type=int, default=None)
    p.add_argument("--strict", action="store_true", help="treat warnings as failures")
    p.add_argument("--lemma", default=None, help="comma-separated lemma ids for lemma-check")
    return p


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.config is not None:
            cfg = load_config(args.config, args.subcommand)
        else:
            cfg = ExperimentConfig.from_mapping(DEFAULT_DOC, args.subcommand)
        if args.lemma:
            raw = dict(cfg.raw)
            raw["options"] = {**raw["options"], "lemmas": args.lemma.split(",")}
            cfg = ExperimentConfig.from_mapping(raw, args.subcommand)
        if args.rng_seed is not None:
            cfg = cfg.with_seed(args.rng_seed)
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        if args.subcommand == "lemma-check":
            _lemma_tasks(_Run(cfg, args.out, 1), list(cfg.options["lemmas"]))
        if args.subcommand == "contraction" and cfg.d != 1:
            raise ConfigError("contraction runs are one-dimensional")
    except ConfigError as exc:
        print(f"nlslab: invalid configuration: {exc}", file=sys.stderr)
        return 2
    code, summary = run(args.subcommand, cfg, args.out, workers=args.workers, strict=args.strict)
    if summary["error"]:
        print(f"nlslab: numerical failure: {summary['error']}", file=sys.stderr)
    print(f"{args.subcommand}: {'PASS' if summary['passed'] else 'FAIL'} ({args.out / 'summary.json'})")
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
