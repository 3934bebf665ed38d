"""Experiment orchestration: config ingestion, the standard sweeps over the
semiclassical parameter, result persistence, and plot-ready CSV emission.

Subcommands: construct, verify, uniqueness, spectrum, oracle-cross-check.
Exit codes: 0 all pass, 2 construction failure, 3 verification failure,
4 inconclusive uniqueness.
"""

from __future__ import annotations

import argparse
import glob
import hashlib
import json
import os
import sys
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .ansatz import PeakSet, grid_for, multi_peak_sum
from .errors import ConfigError, LogPeaksError
from .grid import Grid, load_field
from .oracle import (NewtonConfig, newton_solve, pde_residual,
                     standard_perturbations, uniqueness_experiment)
from .peaksolve import (ConstructedSolution, OuterConfig, certify_peak_solution,
                        load_solution_metadata, save_solution, solve_peaks)
from .linop import LinearizedOperator, coercivity_probe
from .ansatz import kernel_basis
from .potential import PotentialModel, eval_potential, find_critical_points
from .reduction import ReductionConfig
from .verify import (default_ball_radius, decay_profile, kernel_cosines,
                     log_sobolev_check, nondegeneracy_spectrum,
                     pohozaev_residual)

EXIT_OK = 0
EXIT_CONSTRUCT = 2
EXIT_VERIFY = 3
EXIT_INCONCLUSIVE = 4

# section -> allowed keys; unknown sections or keys are configuration errors
_SCHEMA = {
    "experiment": {"name", "seed", "out"},
    "potential": {"family", "params", "dim"},
    "peaks": {"seeds", "delta"},
    "sweep": {"eps", "n", "points_per_peak", "theta", "tau"},
    "tolerances": {"tol_fix", "tol_lin", "tol_outer_scale", "tol_newton",
                   "tol_poho"},
    "spectrum": {"coarse_n", "half_width", "omega"},
}


@dataclass
class RunConfig:
    family: str
    params: tuple
    dim: int
    seeds: np.ndarray             # (k, N) critical-point seeds
    delta: float
    eps_list: tuple               # sorted descending
    n: int = None                 # per-axis points; None -> h <= eps/6 rule
    points_per_peak: float = 6.0
    theta: float = 0.1
    tau: float = 0.1
    tol_fix: float = 1e-8
    tol_lin: float = 1e-10
    tol_outer_scale: float = 1e-6
    tol_newton: float = 1e-9
    tol_poho: float = 0.5
    seed: int = 0
    out: str = "results"
    name: str = ""
    spectrum_coarse_n: tuple = (41, 61)
    spectrum_half_width: float = 6.0
    spectrum_omega: float = None
    raw: dict = field(default=None, repr=False)

    def __post_init__(self):
        self.seeds = np.atleast_2d(np.asarray(self.seeds, dtype=float))
        if list(self.eps_list) != sorted(self.eps_list, reverse=True):
            raise ConfigError("sweep.eps must be sorted descending")
        if any(e <= 0 for e in self.eps_list):
            raise ConfigError("sweep.eps entries must be positive")
        for key in ("delta", "tol_fix", "tol_lin", "tol_outer_scale",
                    "tol_newton", "tol_poho"):
            if getattr(self, key) <= 0:
                raise ConfigError(f"{key} must be positive")
        if self.n is not None and (self.n < 9 or self.n % 2 == 0):
            raise ConfigError("sweep.n must be odd and >= 9")

    def config_hash(self) -> str:
        payload = dict(self.raw or {})
        payload["_seed"] = self.seed
        blob = json.dumps(payload, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


def load_config(path: str) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    for section, body in data.items():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        if not isinstance(body, dict):
            raise ConfigError(f"[{section}] must be a table")
        for key in body:
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key '{key}' in [{section}]")
    try:
        pot = data["potential"]
        pk = data["peaks"]
        sw = data["sweep"]
    except KeyError as exc:
        raise ConfigError(f"missing required section [{exc.args[0]}]") from exc
    tol = data.get("tolerances", {})
    exp = data.get("experiment", {})
    spec = data.get("spectrum", {})
    try:
        cfg = RunConfig(
            family=pot["family"], params=tuple(pot["params"]), dim=int(pot["dim"]),
            seeds=pk["seeds"], delta=float(pk["delta"]),
            eps_list=tuple(float(e) for e in sw["eps"]),
            n=int(sw["n"]) if "n" in sw else None,
            points_per_peak=float(sw.get("points_per_peak", 6.0)),
            theta=float(sw.get("theta", 0.1)), tau=float(sw.get("tau", 0.1)),
            tol_fix=float(tol.get("tol_fix", 1e-8)),
            tol_lin=float(tol.get("tol_lin", 1e-10)),
            tol_outer_scale=float(tol.get("tol_outer_scale", 1e-6)),
            tol_newton=float(tol.get("tol_newton", 1e-9)),
            tol_poho=float(tol.get("tol_poho", 0.5)),
            seed=int(exp.get("seed", 0)), out=str(exp.get("out", "results")),
            name=str(exp.get("name", "")),
            spectrum_coarse_n=tuple(int(v) for v in spec.get("coarse_n", (41, 61))),
            spectrum_half_width=float(spec.get("half_width", 6.0)),
            spectrum_omega=(float(spec["omega"]) if "omega" in spec else None),
            raw=data,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config value: {exc}") from exc
    return cfg


def _model(cfg: RunConfig) -> PotentialModel:
    return PotentialModel(family=cfg.family, params=cfg.params, dim=cfg.dim)


def _targets(cfg: RunConfig, model: PotentialModel) -> np.ndarray:
    crit = find_critical_points(model, cfg.seeds)
    if len(crit) != len(cfg.seeds):
        raise ConfigError(
            f"found {len(crit)} distinct critical points from "
            f"{len(cfg.seeds)} seeds; adjust peaks.seeds"
        )
    return np.stack([cp.location for cp in crit])


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _write_csv(path: str, header, rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


SUMMARY_COLUMNS = ("config_hash", "eps", "j", "y_err", "y_err_over_eps",
                   "phi_eps_norm", "phi_eps_norm_scaled", "phi_star_norm",
                   "phi_star_norm_scaled", "residual_inf", "rho_hat",
                   "outer_iters", "status")


def _construct_one(cfg: RunConfig, model, xi, eps, workers, out_dir, chash):
    grid = grid_for(xi, eps, cfg.dim, points_per_peak=cfg.points_per_peak,
                    n_override=cfg.n)
    peaks = PeakSet(eps=eps, xi=xi, y=xi.copy(), delta=cfg.delta)
    peaks.validate()
    rcfg = ReductionConfig(theta=cfg.theta, tau=cfg.tau, tol_fix=cfg.tol_fix,
                           tol_lin=cfg.tol_lin)
    sol = solve_peaks(peaks, model, grid,
                      OuterConfig(tol_outer_scale=cfg.tol_outer_scale,
                                  workers=workers, reduction=rcfg))
    cert = certify_peak_solution(sol)
    resid_inf = float(np.max(np.abs(pde_residual(sol.u, eps, model,
                                                 grid).values)))
    op = LinearizedOperator(sol.peaks, model, grid)
    basis = kernel_basis(sol.peaks, model, grid, v_potential=op.v_potential)
    rho_hat = coercivity_probe(op, basis, rtol=1e-3)
    save_solution(sol, os.path.join(out_dir, f"solution_{chash}_eps{eps!r}"))

    scale_eps = eps ** (cfg.dim / 2.0 + 2.0)
    scale_star = abs(np.log(eps)) ** (1.0 - cfg.theta)
    rows = []
    for j in range(sol.peaks.k):
        y_err = float(np.linalg.norm(sol.peaks.y[j] - sol.peaks.xi[j]))
        rows.append((chash, eps, j, y_err, y_err / eps,
                     sol.reduction.norms.eps_norm,
                     sol.reduction.norms.eps_norm / scale_eps,
                     sol.reduction.norms.star_norm,
                     sol.reduction.norms.star_norm * scale_star,
                     resid_inf, rho_hat, sol.outer_iterations,
                     "PASS" if cert.passed else "CERT_FAIL"))
    return rows


def run_construct(cfg: RunConfig, out_dir: str, workers: int) -> int:
    model = _model(cfg)
    xi = _targets(cfg, model)
    os.makedirs(out_dir, exist_ok=True)
    chash = cfg.config_hash()

    def job(eps):
        try:
            return _construct_one(cfg, model, xi, eps, 1, out_dir, chash)
        except LogPeaksError as exc:
            nan = float("nan")
            return [(chash, eps, j, nan, nan, nan, nan, nan, nan, nan, nan,
                     0, f"FAIL:{type(exc).__name__}")
                    for j in range(len(xi))]

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(job, cfg.eps_list))
    else:
        chunks = [job(e) for e in cfg.eps_list]

    all_rows = [r for chunk in chunks for r in chunk]
    for eps, chunk in zip(cfg.eps_list, chunks):
        _write_csv(os.path.join(out_dir, f"construct_eps{eps!r}.csv"),
                   SUMMARY_COLUMNS, chunk)
    _write_csv(os.path.join(out_dir, "summary.csv"), SUMMARY_COLUMNS, all_rows)
    failed = any(not str(r[-1]).startswith(("PASS",)) for r in all_rows)
    for r in all_rows:
        print(f"eps={r[1]} j={r[2]} status={r[-1]}")
    return EXIT_CONSTRUCT if failed else EXIT_OK


def _solution_paths(out_dir: str, paths) -> list:
    if paths:
        return [p[:-len(".meta.json")] if p.endswith(".meta.json") else p
                for p in paths]
    metas = sorted(glob.glob(os.path.join(out_dir, "*.meta.json")))
    return [m[:-len(".meta.json")] for m in metas]


def _load_solution(basepath: str) -> ConstructedSolution:
    meta = load_solution_metadata(basepath)
    u = load_field(basepath + ".field")
    model = PotentialModel(family=meta["model"]["family"],
                           params=tuple(meta["model"]["params"]),
                           dim=int(meta["model"]["dim"]))
    peaks = PeakSet(eps=float(meta["eps"]), y=np.asarray(meta["y"]),
                    xi=np.asarray(meta["xi"]), delta=float(meta["delta"]))
    return ConstructedSolution(peaks=peaks, u=u, reduction=None,
                               outer_iterations=int(meta["outer_iterations"]),
                               model=model, grid=u.grid)


def run_verify(cfg: RunConfig, out_dir: str, paths) -> int:
    bases = _solution_paths(out_dir, paths)
    if not bases:
        print("no solution files found", file=sys.stderr)
        return EXIT_VERIFY
    chash = cfg.config_hash()
    all_ok = True
    for base in bases:
        sol = _load_solution(base)
        eps, dim = sol.peaks.eps, sol.grid.dim
        cert = certify_peak_solution(sol)
        report = pohozaev_residual(sol.u, sol.peaks, sol.model, sol.grid)
        poho_thresh = cfg.tol_poho * max(float(np.max(np.abs(report.interior))),
                                         eps ** (dim + 1))
        poho_ok = report.max_residual() <= poho_thresh
        lhs, rhs = log_sobolev_check(sol.u, 1.0)
        ls_ok = lhs <= rhs + 1e-8 * max(1.0, abs(rhs))
        profile = decay_profile(sol.u, sol.peaks)
        ok = cert.passed and poho_ok and ls_ok
        all_ok &= ok
        _write_csv(base + ".pohozaev.csv",
                   ("config_hash", "peak", "axis", "interior", "boundary",
                    "residual"),
                   [(chash,) + row for row in report.rows()])
        _write_csv(base + ".decay.csv", ("config_hash", "radius", "tail_sup"),
                   [(chash, r, s) for r, s in profile])
        with open(base + ".verify.txt", "w") as fh:
            fh.write(f"config_hash: {chash}\n"
                     f"status: {'PASS' if ok else 'FAIL'}\n"
                     f"certification: {'PASS' if cert.passed else 'FAIL'} "
                     f"(maxima={cert.n_maxima}, tail_sup={cert.tail_sup!r}, "
                     f"energy_const={cert.energy_constant!r})\n"
                     f"momentum_balance: {'PASS' if poho_ok else 'FAIL'} "
                     f"(max_residual={report.max_residual()!r}, "
                     f"threshold={poho_thresh!r}, delta={report.delta!r})\n"
                     f"log_sobolev: {'PASS' if ls_ok else 'FAIL'} "
                     f"(lhs={lhs!r}, rhs={rhs!r})\n")
        print(f"{base}: {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if all_ok else EXIT_VERIFY


def run_uniqueness(cfg: RunConfig, out_dir: str, paths, seed: int) -> int:
    bases = _solution_paths(out_dir, paths)
    if not bases:
        print("no solution files found", file=sys.stderr)
        return EXIT_VERIFY
    chash = cfg.config_hash()
    worst = EXIT_OK
    for base in bases:
        sol = _load_solution(base)
        battery = standard_perturbations(sol, seed=seed)
        report = uniqueness_experiment(sol, battery,
                                       NewtonConfig(tol_newton=cfg.tol_newton))
        with open(base + ".uniqueness.txt", "w") as fh:
            fh.write(f"config_hash: {chash}\n"
                     f"status: {report.status}\n"
                     f"max_pairwise_gap: {report.max_gap()!r}\n"
                     f"tolerance: {report.tol!r}\n"
                     f"labels: {' '.join(report.labels)}\n")
        print(f"{base}: {report.status}")
        if report.status == "FAIL":
            worst = max(worst, EXIT_VERIFY)
        elif report.status == "INCONCLUSIVE":
            worst = max(worst, EXIT_INCONCLUSIVE)
    return worst


def run_spectrum(cfg: RunConfig, out_dir: str) -> int:
    model = _model(cfg)
    xi = _targets(cfg, model)
    omega = cfg.spectrum_omega
    if omega is None:
        omega = float(eval_potential(model, xi[0]))
    os.makedirs(out_dir, exist_ok=True)
    chash = cfg.config_hash()
    rows = []
    near_zero = []
    cosines = None
    for n in cfg.spectrum_coarse_n:
        g = Grid(cfg.dim, cfg.spectrum_half_width, n)
        res = nondegeneracy_spectrum(omega, g)
        cosines = kernel_cosines(res, omega)
        near_zero.append(np.abs(res.eigenvalues[:cfg.dim]))
        for i, lam in enumerate(res.eigenvalues):
            rows.append((chash, n, i, float(lam)))
    _write_csv(os.path.join(out_dir, "spectrum.csv"),
               ("config_hash", "n", "index", "eigenvalue"), rows)
    shrinks = all(np.all(b < a) for a, b in zip(near_zero, near_zero[1:]))
    cos_ok = bool(np.all(cosines >= 0.99))
    ok = shrinks and cos_ok
    print(f"spectrum: {'PASS' if ok else 'FAIL'} "
          f"(kernel magnitudes {[list(map(float, v)) for v in near_zero]}, "
          f"cosines {list(map(float, cosines))})")
    return EXIT_OK if ok else EXIT_VERIFY


def run_cross_check(cfg: RunConfig, out_dir: str, workers: int) -> int:
    model = _model(cfg)
    xi = _targets(cfg, model)
    os.makedirs(out_dir, exist_ok=True)
    chash = cfg.config_hash()
    rows = []
    ok = True
    for eps in cfg.eps_list:
        grid = grid_for(xi, eps, cfg.dim, points_per_peak=cfg.points_per_peak,
                        n_override=cfg.n)
        peaks = PeakSet(eps=eps, xi=xi, y=xi.copy(), delta=cfg.delta)
        rcfg = ReductionConfig(theta=cfg.theta, tau=cfg.tau,
                               tol_fix=cfg.tol_fix, tol_lin=cfg.tol_lin)
        sol = solve_peaks(peaks, model, grid,
                          OuterConfig(tol_outer_scale=cfg.tol_outer_scale,
                                      workers=workers, reduction=rcfg))
        h2_level = float(np.max(np.abs(pde_residual(sol.u, eps, model,
                                                    grid).values)))
        res = newton_solve(multi_peak_sum(sol.peaks, model, grid), eps, model,
                           grid, NewtonConfig(tol_newton=cfg.tol_newton))
        gap = (float(np.max(np.abs(res.u.values - sol.u.values)))
               / float(np.max(np.abs(res.u.values))))
        threshold = 10.0 * max(cfg.tol_newton, h2_level)
        passed = gap <= threshold
        ok &= passed
        rows.append((chash, eps, gap, h2_level, threshold,
                     "PASS" if passed else "FAIL"))
        print(f"eps={eps}: gap={gap!r} threshold={threshold!r} "
              f"{'PASS' if passed else 'FAIL'}")
    _write_csv(os.path.join(out_dir, "cross_check.csv"),
               ("config_hash", "eps", "relative_gap", "h2_level", "threshold",
                "status"), rows)
    return EXIT_OK if ok else EXIT_VERIFY


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="logpeaks",
        description="Construct and verify multi-peak states of the "
                    "logarithmic Schrodinger equation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("construct", "verify", "uniqueness", "spectrum",
                 "oracle-cross-check"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="TOML run configuration")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--seed", type=int, default=None)
        if name in ("verify", "uniqueness"):
            p.add_argument("paths", nargs="*",
                           help="solution basepaths (default: scan --out)")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        out_dir = args.out or cfg.out
        if args.command == "construct":
            return run_construct(cfg, out_dir, args.workers)
        if args.command == "verify":
            return run_verify(cfg, out_dir, args.paths)
        if args.command == "uniqueness":
            return run_uniqueness(cfg, out_dir, args.paths, cfg.seed)
        if args.command == "spectrum":
            return run_spectrum(cfg, out_dir)
        return run_cross_check(cfg, out_dir, args.workers)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONSTRUCT
    except LogPeaksError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONSTRUCT


if __name__ == "__main__":
    sys.exit(main())
