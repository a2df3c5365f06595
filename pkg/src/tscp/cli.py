"""Batch experiment driver.

Subcommands: simulate, couplings, breakpoints, speed, clt, density, converge,
tails, iid, percolation, selfcheck.  Every report embeds the fully resolved
configuration (flags override config-file values override defaults) and the
master seed, so any artifact can be replayed byte-for-byte.

Exit codes: 0 pass/success, 1 statistical fail (or inconclusive), 2 input
error, 3 engine violation (a theorem-level check failed pathwise).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import estimators, experiments
from .breakpoints import EngineViolationError
from .couplings import CouplingKind, verify_coupling, verify_reduction
from .percolation import (
    bond_site_coupling_check,
    cluster_edge,
    field_for_replica,
    half_line_edge_identity,
    percolation_edge_speed,
    phi_bound,
)
from .process import Configuration, WindowBreachError, WindowPolicy, evolve
from .streams import Construction

EXIT_PASS = 0
EXIT_STAT_FAIL = 1
EXIT_INPUT = 2
EXIT_ENGINE = 3

SUBCOMMANDS = (
    "simulate",
    "couplings",
    "breakpoints",
    "speed",
    "clt",
    "density",
    "converge",
    "tails",
    "iid",
    "percolation",
    "selfcheck",
)


class Once(argparse.Action):
    """Reject duplicated flags instead of silently keeping the last one."""

    def __call__(self, parser, namespace, values, option_string=None):
        seen = getattr(namespace, "_seen", set())
        if option_string in seen:
            parser.error(f"duplicate flag {option_string}")
        seen.add(option_string)
        setattr(namespace, "_seen", seen)
        setattr(namespace, self.dest, values)


DEFAULTS = {
    "lam": 1.0,
    "mu": 2.0,
    "seed": 20240811,
    "replicas": 100,
    "horizon": 600.0,
    "survival_horizon": 150.0,
    "t_eval": 300.0,
    "t_max": 100.0,
    "t_list": "100,200,400",
    "window": 1.0,
    "alpha_level": 0.01,
    "workers": 1,
    "out": "tscp-out",
    "f_sets": "0;0,1;-2,3",
    "p": 0.9,
    "p_tilde": 0.8,
    "n_max": 300,
    "grid_step": 5.0,
    "theta_window": 200,
    "theta_t": 150.0,
    "k_cap": 50,
    # collecting a fixed number of break points per replica (rather than
    # filling the horizon) keeps the increment sample free of renewal
    # length-bias; the horizon must dominate the expected collection time
    "max_points": 20,
    "rle": False,
}


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="tscp",
        description="Monte Carlo laboratory for the three-state contact process on Z",
    )
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    a = p.add_argument
    a("--config", action=Once, help="JSON config file (flags take precedence)")
    a("--lambda", dest="lam", action=Once, type=float, help="first-infection rate")
    a("--mu", action=Once, type=float, help="reinfection rate (mu >= lambda)")
    a("--seed", action=Once, type=int, help="master seed of the construction")
    a("--replicas", action=Once, type=int)
    a("--horizon", action=Once, type=float, help="global time horizon")
    a("--survival-horizon", dest="survival_horizon", action=Once, type=float,
      help="survival proxy horizon for break points / beta")
    a("--t-eval", dest="t_eval", action=Once, type=float)
    a("--t-max", dest="t_max", action=Once, type=float, help="horizon for coupling checks")
    a("--t-list", dest="t_list", action=Once, help="comma-separated CLT horizons")
    a("--window", action=Once, type=float,
      help="window margin factor (times (2*mu+1)*span)")
    a("--alpha-level", dest="alpha_level", action=Once, type=float)
    a("--out", action=Once, help="output directory")
    a("--workers", action=Once, type=int, help="worker processes (env TSCP_WORKERS)")
    a("--f-sets", dest="f_sets", action=Once,
      help="semicolon-separated site lists, e.g. '0;0,1;-2,3'")
    a("--p", action=Once, type=float, help="site percolation parameter")
    a("--p-tilde", dest="p_tilde", action=Once, type=float, help="bond parameter")
    a("--n-max", dest="n_max", action=Once, type=int, help="percolation generations")
    a("--grid-step", dest="grid_step", action=Once, type=float, help="sample grid step")
    a("--theta-window", dest="theta_window", action=Once, type=int)
    a("--theta-t", dest="theta_t", action=Once, type=float)
    a("--k-cap", dest="k_cap", action=Once, type=int)
    a("--max-points", dest="max_points", action=Once, type=int)
    a("--rle", action="store_true", default=None,
      help="include run-length-encoded configuration snapshots in simulate.csv")
    return p


def resolve_config(argv: list[str]) -> tuple[str, dict]:
    """Parse argv and fold CLI > config file > env (workers) > defaults."""
    parser = _build_parser()
    ns = parser.parse_args(argv)
    cfg = dict(DEFAULTS)
    if os.environ.get("TSCP_WORKERS"):
        try:
            cfg["workers"] = int(os.environ["TSCP_WORKERS"])
        except ValueError:
            raise SystemExit(EXIT_INPUT)
    if ns.config:
        with open(ns.config) as fh:
            file_cfg = json.load(fh)
        if file_cfg.get("schema", "tscp-config-v1") != "tscp-config-v1":
            print(f"unsupported config schema {file_cfg.get('schema')}", file=sys.stderr)
            raise SystemExit(EXIT_INPUT)
        for k, v in file_cfg.items():
            if k == "schema":
                continue
            if k not in cfg:
                print(f"unknown config key {k!r}", file=sys.stderr)
                raise SystemExit(EXIT_INPUT)
            cfg[k] = v
    for k in cfg:
        v = getattr(ns, k, None)
        if v is not None:
            cfg[k] = v
    return ns.subcommand, cfg


def _parse_f_sets(text: str) -> list[tuple[int, ...]]:
    out = []
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        out.append(tuple(int(x) for x in part.split(",")))
    if not out:
        raise ValueError("empty F-set specification")
    return out


def _construction(cfg: dict) -> Construction:
    return Construction(master_seed=int(cfg["seed"]), lam=float(cfg["lam"]), mu=float(cfg["mu"]))


def _grid(cfg: dict, t_max: float) -> list[float]:
    step = float(cfg["grid_step"])
    n = int(round(t_max / step))
    return [round(i * step, 10) for i in range(0, n + 1)]


def _write_json(out_dir: Path, name: str, payload: dict) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / name
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")
    return path


def _write_csv(out_dir: Path, name: str, header: list[str], rows) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / name
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow(row)
    return path


def _report(subcommand: str, cfg: dict, results: dict, passed: bool | None) -> dict:
    clean_cfg = {k: cfg[k] for k in sorted(cfg)}
    return {
        "schema": "tscp-report-v1",
        "subcommand": subcommand,
        "config": clean_cfg,
        "passed": passed,
        "results": results,
    }


# ---------------------------------------------------------------------------
# subcommand implementations


def _cmd_simulate(cfg: dict, out: Path) -> int:
    cons = _construction(cfg)
    grid = _grid(cfg, float(cfg["horizon"]))
    policy = WindowPolicy(margin_factor=float(cfg["window"]))
    rle = bool(cfg["rle"])
    rows = []
    n_survive = 0
    for rep in range(int(cfg["replicas"])):
        traj = evolve(
            cons, rep, Configuration.standard(), t_max=float(cfg["horizon"]),
            sample_times=grid, window_policy=policy,
        )
        rows.extend(traj.csv_rows(include_config=rle))
        n_survive += traj.died_at is None
    header = ["replica", "t", "r", "l", "infected_count", "died"]
    if rle:
        header.append("config_rle")
    _write_csv(out, "simulate.csv", header, rows)
    results = {"replicas": int(cfg["replicas"]), "alive_at_horizon": n_survive}
    _write_json(out, "simulate.json", _report("simulate", cfg, results, None))
    return EXIT_PASS


def _cmd_couplings(cfg: dict, out: Path) -> int:
    cons = _construction(cfg)
    if cons.lam <= 0 or cons.mu < cons.lam:
        print("coupling checks require mu >= lambda > 0", file=sys.stderr)
        return EXIT_INPUT
    grid = _grid(cfg, float(cfg["t_max"]))
    policy = WindowPolicy(margin_factor=max(float(cfg["window"]), 1.0))
    verdicts = []
    for kind in CouplingKind:
        v = verify_coupling(
            kind, cons, replicas=int(cfg["replicas"]), t_max=float(cfg["t_max"]),
            sample_grid=grid, k_cap=int(cfg["k_cap"]), window_policy=policy,
        )
        verdicts.append(v)
    passed = all(v.passed for v in verdicts)
    results = {"verdicts": [v.to_dict() for v in verdicts]}
    _write_json(out, "couplings.json", _report("couplings", cfg, results, passed))
    return EXIT_PASS if passed else EXIT_ENGINE


def _cmd_breakpoints(cfg: dict, out: Path) -> int:
    cons = _construction(cfg)
    if cons.lam <= 0:
        print("break points require mu >= lambda > 0", file=sys.stderr)
        return EXIT_INPUT
    horizon = float(cfg["horizon"])
    surv = float(cfg["survival_horizon"])
    if surv > horizon:
        print("survival horizon exceeds the global horizon", file=sys.stderr)
        return EXIT_INPUT
    batch = experiments.run_breakpoints_batch(
        cons, int(cfg["replicas"]), horizon, surv,
        max_points=int(cfg["max_points"]), workers=int(cfg["workers"]),
    )
    rows = []
    k_running: dict[int, int] = {}
    tau_running: dict[int, float] = {}
    for i in range(batch.n):
        rep = int(batch.replica_ids[i])
        k_running[rep] = k_running.get(rep, 0) + int(batch.x[i])
        tau_running[rep] = tau_running.get(rep, 0.0) + float(batch.psi[i])
        rows.append(
            (
                rep,
                int(batch.indices[i]),
                k_running[rep],
                tau_running[rep],
                int(batch.x[i]),
                float(batch.psi[i]),
                int(batch.m[i]),
                int(batch.censored_flags[i]),
            )
        )
    _write_csv(
        out, "breakpoints.csv",
        ["replica", "n", "K_n", "tau_Kn", "X_n", "Psi_n", "M_nm1", "censored"],
        rows,
    )
    misclass = None
    if batch.rho_durations.size >= 50:
        try:
            thr = np.quantile(batch.rho_durations, [0.3, 0.5, 0.7, 0.8, 0.9, 0.95, 0.98])
            fit = estimators.tail_fit(batch.rho_durations, thr, variable="rho_delay")
            misclass = {
                "gamma_hat": fit.gamma_hat,
                "r2": fit.r2,
                "bound_at_survival_horizon": fit.extrapolate_survival(surv),
            }
        except (ValueError, estimators.DegenerateFitError):
            misclass = None
    results = {
        "n_increments": int(batch.n),
        "n_replicas": batch.n_replicas,
        "dropped_increments": int(batch.dropped),
        "mean_X": float(batch.x.mean()) if batch.n else None,
        "mean_Psi": float(batch.psi.mean()) if batch.n else None,
        "mean_M": float(batch.m.mean()) if batch.n else None,
        "survival_proxy_misclassification": misclass,
    }
    _write_json(out, "breakpoints.json", _report("breakpoints", cfg, results, None))
    return EXIT_PASS


def _bp_and_edge(cfg: dict, t_list: list[float]):
    cons = _construction(cfg)
    batch = experiments.run_breakpoints_batch(
        cons, int(cfg["replicas"]), float(cfg["horizon"]), float(cfg["survival_horizon"]),
        max_points=int(cfg["max_points"]), workers=int(cfg["workers"]),
    )
    edge = experiments.run_edge_batch(
        cons, int(cfg["replicas"]), max(t_list), sorted(set(t_list)),
        workers=int(cfg["workers"]),
    )
    return cons, batch, edge


def _cmd_speed(cfg: dict, out: Path) -> int:
    t_ref = 400.0
    cons, batch, edge = _bp_and_edge(cfg, [t_ref])
    est = estimators.estimate_alpha(batch.as_tuple())
    r_surv = edge.survivors_r(t_ref)
    slope = float(np.mean(r_surv / t_ref))
    slope_se = float(np.std(r_surv / t_ref, ddof=1) / np.sqrt(r_surv.size))
    agree = est.agrees_with(slope, slope_se)
    results = {
        "alpha_hat": est.alpha_hat,
        "alpha_stderr": est.stderr,
        "n_increments": est.n_increments,
        "direct_slope": slope,
        "direct_slope_stderr": slope_se,
        "n_slope_survivors": int(r_surv.size),
        "agrees_within_2se": agree,
    }
    _write_json(out, "speed.json", _report("speed", cfg, results, agree))
    return EXIT_PASS if agree else EXIT_STAT_FAIL


def _cmd_clt(cfg: dict, out: Path) -> int:
    t_list = [float(x) for x in str(cfg["t_list"]).split(",")]
    cons, batch, edge = _bp_and_edge(cfg, t_list)
    est = estimators.estimate_alpha(batch.as_tuple())
    sigma2 = estimators.estimate_sigma2(batch.as_tuple(), est.alpha_hat)
    if sigma2 <= 0:
        print("degenerate sigma2; CLT not applicable", file=sys.stderr)
        return EXIT_STAT_FAIL
    r_by_t = {t: edge.survivors_r(t) for t in t_list}
    rep = estimators.clt_report(r_by_t, est.alpha_hat, sigma2, level=float(cfg["alpha_level"]))
    results = {"alpha_hat": est.alpha_hat, **rep.to_dict()}
    _write_json(out, "clt.json", _report("clt", cfg, results, rep.passed))
    return EXIT_PASS if rep.passed else EXIT_STAT_FAIL


def _cmd_density(cfg: dict, out: Path) -> int:
    t_eval = float(cfg["t_eval"])
    cons, batch, edge = _bp_and_edge(cfg, [t_eval])
    est = estimators.estimate_alpha(batch.as_tuple())
    theta_batch = experiments.run_theta_batch(
        cons, max(200, int(cfg["replicas"]) // 4), float(cfg["theta_t"]),
        window=(-int(cfg["theta_window"]), int(cfg["theta_window"])),
        workers=int(cfg["workers"]), base_replica=1_000_000,
    )
    theta = estimators.estimate_theta(theta_batch.occupancy)
    j = int(np.searchsorted(edge.sample_times, t_eval))
    mask = edge.count[:, j] > 0
    beta_hat = float(edge.alive_at(float(cfg["survival_horizon"])).mean())
    rep = estimators.density_report(
        {t_eval: (edge.count[mask, j], edge.l[mask, j])},
        est.alpha_hat, est.stderr, theta, beta_hat,
    )
    _write_json(out, "density.json", _report("density", cfg, rep.to_dict(), rep.passed))
    return EXIT_PASS if rep.passed else EXIT_STAT_FAIL


def _cmd_converge(cfg: dict, out: Path) -> int:
    cons = _construction(cfg)
    t_eval = float(cfg["t_eval"])
    f_sets = _parse_f_sets(str(cfg["f_sets"]))
    n = int(cfg["replicas"])
    edge = experiments.run_edge_batch(
        cons, n, t_eval, [float(cfg["survival_horizon"]), t_eval],
        f_sets=f_sets, f_time=t_eval, workers=int(cfg["workers"]),
    )
    phi = experiments.run_phi_batch(
        cons, n, t_eval, f_sets, workers=int(cfg["workers"]), base_replica=2_000_000
    )
    beta_mask = edge.alive_at(float(cfg["survival_horizon"]))
    rep = estimators.complete_convergence_report(
        f_sets, edge.f_empty, phi, int(beta_mask.sum()), n, t_eval
    )
    _write_json(out, "converge.json", _report("converge", cfg, rep.to_dict(), rep.passed))
    return EXIT_PASS if rep.passed else EXIT_STAT_FAIL


def _cmd_tails(cfg: dict, out: Path) -> int:
    t_ref = 200.0
    cons, batch, edge = _bp_and_edge(cfg, [t_ref])
    fits = {}
    ok = True
    died = ~np.isnan(edge.died_at)
    r_death = np.where(died, edge.sup_r, np.nan)
    jobs = []
    if np.isfinite(r_death).sum() >= 20:
        qs = np.nanquantile(r_death, [0.2, 0.35, 0.5, 0.65, 0.8, 0.9, 0.95])
        jobs.append(("R_on_death", r_death, np.unique(np.floor(qs))))
    x1, psi1, m0 = batch.first_increments()
    for name, vals in (("tau1", psi1), ("X1", x1), ("M0", m0)):
        if vals.size >= 20:
            qs = np.quantile(vals, [0.3, 0.45, 0.6, 0.75, 0.85, 0.92, 0.97])
            jobs.append((name, vals, np.unique(qs)))
    for name, vals, thr in jobs:
        try:
            fit = estimators.tail_fit(vals, thr, variable=name)
            fits[name] = fit.to_dict()
            ok = ok and fit.passed
        except (ValueError, estimators.DegenerateFitError) as exc:
            fits[name] = {"error": str(exc)}
            ok = False
    # lower deviations of the half-line edge: P(rbar_t < a t) over the grid
    est = estimators.estimate_alpha(batch.as_tuple())
    a = est.alpha_hat / 2.0
    probs = np.array(
        [np.nanmean(batch.rbar[:, j] < a * batch.t_grid[j]) for j in range(batch.t_grid.size)]
    )
    try:
        fit = estimators.fit_decay_curve(batch.t_grid, probs, variable=f"rbar_t < {a:.3g} t")
        fits["rbar_lower_dev"] = fit.to_dict()
        ok = ok and fit.passed
    except estimators.DegenerateFitError as exc:
        fits["rbar_lower_dev"] = {"error": str(exc)}
        ok = False
    _write_json(out, "tails.json", _report("tails", cfg, {"fits": fits}, ok))
    return EXIT_PASS if ok else EXIT_STAT_FAIL


def _cmd_iid(cfg: dict, out: Path) -> int:
    cons = _construction(cfg)
    batch = experiments.run_breakpoints_batch(
        cons, int(cfg["replicas"]), float(cfg["horizon"]), float(cfg["survival_horizon"]),
        workers=int(cfg["workers"]),
    )
    rep = estimators.iid_report(
        batch.replica_ids, batch.indices, batch.as_tuple(), level=float(cfg["alpha_level"])
    )
    _write_json(out, "iid.json", _report("iid", cfg, rep.to_dict(), rep.passed))
    return EXIT_PASS if rep.passed else EXIT_STAT_FAIL


def _cmd_percolation(cfg: dict, out: Path) -> int:
    seed = int(cfg["seed"])
    n_max = int(cfg["n_max"])
    p_tilde = float(cfg["p_tilde"])
    replicas = int(cfg["replicas"])
    verdicts = []
    for s in range(replicas):
        verdicts.append(bond_site_coupling_check(p_tilde, seed + s, n_max))
    containment_ok = all(v.passed for v in verdicts)
    identity = half_line_edge_identity(float(cfg["p"]), seed, min(replicas, 100), n_max)
    a_hat, fit, n_alive = percolation_edge_speed(float(cfg["p"]), seed, replicas, n_max)
    rows = []
    for rep in range(min(replicas, 200)):
        field = field_for_replica(seed, rep, float(cfg["p"]))
        edges, sizes = cluster_edge(field, n_max, return_sizes=True)
        for nn in range(n_max + 1):
            if not np.isnan(edges[nn]):
                rows.append((rep, nn, int(sizes[nn]), int(edges[nn])))
    _write_csv(out, "percolation.csv", ["replica", "n", "A_n_size", "R_n"], rows)
    results = {
        "containment_passed": containment_ok,
        "containment_violations": sum(v.n_violations for v in verdicts),
        "half_line_identity_passed": identity.passed,
        "p": float(cfg["p"]),
        "p_tilde": p_tilde,
        "p_site_from_bond": p_tilde * (2 - p_tilde),
        "a_hat": a_hat,
        "surviving_clusters": n_alive,
        "lower_tail_fit": fit.to_dict() if fit is not None else None,
        "phi_bound_example": phi_bound(1.0, 1.0, 3.0),
    }
    engine_ok = containment_ok and identity.passed
    _write_json(out, "percolation.json", _report("percolation", cfg, results, engine_ok))
    if not engine_ok:
        return EXIT_ENGINE
    return EXIT_PASS


def _cmd_selfcheck(cfg: dict, out: Path) -> int:
    cons = _construction(cfg)
    grid = [0.0, 10.0, 20.0, 30.0]
    verdicts = []
    for kind in CouplingKind:
        verdicts.append(
            verify_coupling(kind, cons, replicas=8, t_max=30.0, sample_grid=grid, k_cap=20)
        )
    red = verify_reduction(
        Construction(int(cfg["seed"]), 2.0, 2.0), replicas=8, t_max=30.0, sample_grid=grid
    )
    verdicts.append(red)
    cont = bond_site_coupling_check(0.8, int(cfg["seed"]), 200)
    verdicts.append(cont)
    passed = all(v.passed for v in verdicts)
    results = {"verdicts": [v.to_dict() for v in verdicts]}
    _write_json(out, "selfcheck.json", _report("selfcheck", cfg, results, passed))
    return EXIT_PASS if passed else EXIT_ENGINE


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        subcommand, cfg = resolve_config(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code not in (0,) else 0
    out = Path(str(cfg["out"]))
    handlers = {
        "simulate": _cmd_simulate,
        "couplings": _cmd_couplings,
        "breakpoints": _cmd_breakpoints,
        "speed": _cmd_speed,
        "clt": _cmd_clt,
        "density": _cmd_density,
        "converge": _cmd_converge,
        "tails": _cmd_tails,
        "iid": _cmd_iid,
        "percolation": _cmd_percolation,
        "selfcheck": _cmd_selfcheck,
    }
    try:
        return handlers[subcommand](cfg, out)
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except WindowBreachError as exc:
        print(f"window breach: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except EngineViolationError as exc:
        print(f"ENGINE VIOLATION: {exc}", file=sys.stderr)
        return EXIT_ENGINE


if __name__ == "__main__":
    sys.exit(main())
