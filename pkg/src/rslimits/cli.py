"""Command-line front end.

A JSON config is the primary interface; a few flags override it.  The
config's "command" field selects one of: sweep, threshold, fixedpoints,
amp, oracle, figures.  Every output file starts with the comment line

    # rslimits <semver> config-hash=<sha256>

where the hash covers the resolved config (after flag overrides), so a
result can always be traced back to its inputs.  Exit codes: 0 ok,
2 config error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from .priors import DiscretePrior, from_spec
from .rs_formula import (
    BracketError,
    NumericalError,
    SolverConfig,
    find_fixed_points,
    lambda_c,
    solve,
)
from . import amp as amp_mod
from . import oracle as oracle_mod


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Config plumbing.


def _resolve(raw: dict, args) -> dict:
    cfg = dict(raw)
    if args.quad_order is not None:
        cfg["quad_order"] = args.quad_order
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.out is not None:
        cfg["out"] = args.out
    if args.threads is not None:
        cfg["threads"] = args.threads
    cfg.setdefault("out", ".")
    cfg.setdefault("threads", 1)
    cfg.setdefault("seed", 0)
    cfg.setdefault("alpha", 1.0)
    return cfg


def _config_hash(cfg: dict) -> str:
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def _header(cfg: dict) -> str:
    return f"# rslimits {__version__} config-hash={_config_hash(cfg)}\n"


def _priors(cfg) -> tuple[DiscretePrior, DiscretePrior]:
    if "prior_u" not in cfg:
        raise ConfigError("config needs a 'prior_u' entry")
    try:
        pu = from_spec(cfg["prior_u"])
        pv = from_spec(cfg.get("prior_v", cfg["prior_u"]))
    except ValueError as exc:
        raise ConfigError(f"bad prior spec: {exc}") from exc
    return pu, pv


def _solver_config(cfg) -> SolverConfig:
    kwargs = {}
    if "quad_order" in cfg:
        kwargs["quad_order"] = int(cfg["quad_order"])
    if "damping" in cfg:
        d = float(cfg["damping"])
        if not 0.0 <= d < 1.0:
            raise ConfigError(f"damping must lie in [0, 1), got {d}")
        kwargs["damping"] = d
    if "tol" in cfg:
        t = float(cfg["tol"])
        if t <= 0.0:
            raise ConfigError(f"tol must be positive, got {t}")
        kwargs["tol"] = t
    if "max_iter" in cfg:
        kwargs["max_iter"] = int(cfg["max_iter"])
    return SolverConfig(**kwargs)


def _lambda_grid(cfg) -> list[float]:
    spec = cfg.get("lambda_grid")
    if spec is None:
        raise ConfigError("config needs a 'lambda_grid' entry")
    if isinstance(spec, dict):
        try:
            start, stop, step = spec["start"], spec["stop"], spec["step"]
        except KeyError as exc:
            raise ConfigError(f"lambda_grid dict needs {exc}") from exc
        if step <= 0:
            raise ConfigError("lambda_grid step must be positive")
        grid = list(np.arange(start, stop + 0.5 * step, step))
    else:
        grid = [float(x) for x in spec]
    if len(grid) == 0:
        raise ConfigError("lambda_grid is empty")
    if any(b - a <= 0 for a, b in zip(grid, grid[1:])):
        raise ConfigError("lambda_grid must be strictly increasing")
    if grid[0] < 0:
        raise ConfigError("lambda values must be nonnegative")
    return grid


def _outdir(cfg) -> str:
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise ConfigError(f"output directory {out!r} is not writable")
    return out


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _fmt_q(q: np.ndarray) -> str:
    flat = np.asarray(q).ravel()
    if flat.size == 1:
        return repr(float(flat[0]))
    return ";".join(repr(float(v)) for v in flat)


def _write_csv(path, cfg, header_cols, rows) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(_header(cfg))
        fh.write(",".join(header_cols) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def _write_json(path, cfg, payload) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(_header(cfg))
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Workers (module-level so process pools can pickle them).


def _solve_point(task):
    lam, alpha, pu, pv, scfg = task
    sol = solve(lam, alpha, pu, pv, scfg)
    top = sol.maximizers[0]
    return sol, top


def _solve_row(task):
    sol, top = _solve_point(task)
    return [
        _fmt(sol.lam),
        _fmt(sol.alpha),
        _fmt(sol.free_energy),
        _fmt(sol.mutual_information),
        _fmt(sol.mmse),
        _fmt(sol.dmse),
        _fmt(sol.Q),
        _fmt_q(top.q1),
        _fmt_q(top.q2),
        _fmt(sol.degenerate),
    ]


def _fig2_row(task):
    p, lam, alpha, pu, pv, scfg = task
    sol, top = _solve_point((lam, alpha, pu, pv, scfg))
    return [
        _fmt(p),
        _fmt(lam),
        _fmt(sol.mmse),
        _fmt(sol.dmse),
        _fmt(sol.mutual_information),
        _fmt(sol.Q),
        _fmt_q(top.q2),  # u-side overlap
        _fmt_q(top.q1),  # v-side overlap
    ]


def _map(tasks, fn, threads):
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, tasks))
    return [fn(t) for t in tasks]


# ---------------------------------------------------------------------------
# Commands.

SWEEP_COLUMNS = [
    "lambda", "alpha", "free_energy", "mutual_information",
    "mmse", "dmse", "Q", "q1", "q2", "degenerate",
]

AMP_COLUMNS = ["t", "overlap_u", "overlap_v", "mse", "q_u_se", "q_v_se"]


def _cmd_sweep(cfg) -> None:
    out = _outdir(cfg)
    pu, pv = _priors(cfg)
    scfg = _solver_config(cfg)
    alpha = float(cfg["alpha"])
    grid = _lambda_grid(cfg)
    tasks = [(lam, alpha, pu, pv, scfg) for lam in grid]
    rows = _map(tasks, _solve_row, int(cfg["threads"]))
    _write_csv(os.path.join(out, "sweep.csv"), cfg, SWEEP_COLUMNS, rows)
    # PCA companion table: the limiting formula and the oracle-rescaled
    # limit disagree on (1, ~BBP edge]; both are reported, never merged.
    pca_rows = [
        [
            _fmt(lam),
            _fmt(amp_mod.pca_asymptotic_mse(lam)),
            _fmt(amp_mod.pca_oracle_asymptotic_mse(lam)),
        ]
        for lam in grid
    ]
    _write_csv(
        os.path.join(out, "sweep_pca.csv"),
        cfg,
        ["lambda", "pca_mse_formula", "pca_mse_oracle"],
        pca_rows,
    )
    print(f"wrote {out}/sweep.csv and {out}/sweep_pca.csv ({len(grid)} points)")


def _cmd_threshold(cfg) -> None:
    out = _outdir(cfg)
    pu, pv = _priors(cfg)
    scfg = _solver_config(cfg)
    bracket = tuple(cfg.get("bracket", (0.05, 10.0)))
    tol = float(cfg.get("threshold_tol", cfg.get("tol", 1e-3)))
    value = lambda_c(pu, pv, float(cfg["alpha"]), bracket=bracket, tol=tol, config=scfg)
    _write_json(
        os.path.join(out, "threshold.json"),
        cfg,
        {
            "lambda_c": value,
            "alpha": float(cfg["alpha"]),
            "bracket": list(bracket),
            "tol": tol,
        },
    )
    print(f"lambda_c = {value}")


def _cmd_fixedpoints(cfg) -> None:
    out = _outdir(cfg)
    pu, pv = _priors(cfg)
    scfg = _solver_config(cfg)
    if "lambda" not in cfg:
        raise ConfigError("fixedpoints needs a 'lambda' entry")
    lam = float(cfg["lambda"])
    alpha = float(cfg["alpha"])
    points = find_fixed_points(lam, alpha, pu, pv, scfg)
    rows = [
        [
            _fmt(lam),
            _fmt(alpha),
            _fmt_q(p.q1),
            _fmt_q(p.q2),
            _fmt(p.residual),
            _fmt(p.potential),
            _fmt(p.iterations),
            _fmt(p.converged),
        ]
        for p in points
    ]
    _write_csv(
        os.path.join(out, "fixedpoints.csv"),
        cfg,
        ["lambda", "alpha", "q1", "q2", "residual", "potential", "iterations", "converged"],
        rows,
    )
    print(f"found {len(points)} fixed points")


def _cmd_amp(cfg) -> None:
    out = _outdir(cfg)
    pu, pv = _priors(cfg)
    scfg = _solver_config(cfg)
    if "lambda" not in cfg:
        raise ConfigError("amp needs a 'lambda' entry")
    lam = float(cfg["lambda"])
    n = int(cfg.get("n", 2000))
    m = int(cfg.get("m", n))
    t_max = int(cfg.get("t_max", 50))
    seeds = cfg.get("seeds", 1)
    if isinstance(seeds, int):
        seeds = [int(cfg["seed"]) + i for i in range(seeds)]
    init_mode = cfg.get("init_mode", "prior")
    se_mode = cfg.get("se_mode", "empirical")
    quad = scfg.quad()

    sol = solve(lam, float(cfg["alpha"]), pu, pv, scfg)
    q_star = (
        float(np.trace(sol.maximizers[0].q2)),
        float(np.trace(sol.maximizers[0].q1)),
    )
    summary = {"lambda": lam, "n": n, "m": m, "t_max": t_max,
               "q_star_u": q_star[0], "q_star_v": q_star[1], "runs": []}
    finals = []
    for seed in seeds:
        inst = amp_mod.generate_instance(pu, pv, n, m, lam, seed)
        states = amp_mod.amp_run(inst, t_max, init_mode=init_mode, se_mode=se_mode, quad=quad)
        rows = [
            [
                _fmt(s.t),
                _fmt(s.empirical_overlap_u),
                _fmt(s.empirical_overlap_v),
                _fmt(s.mse),
                _fmt(s.q_u),
                _fmt(s.q_v),
            ]
            for s in states
        ]
        _write_csv(os.path.join(out, f"amp_seed{seed}.csv"), cfg, AMP_COLUMNS, rows)
        if cfg.get("dump_instances"):
            amp_mod.save_instance(inst, os.path.join(out, f"instance_seed{seed}.bin"))
        base = amp_mod.pca_baseline(inst)
        last = states[-1]
        finals.append(abs(last.empirical_overlap_u))
        summary["runs"].append(
            {
                "seed": seed,
                "final_overlap_u": last.empirical_overlap_u,
                "final_overlap_v": last.empirical_overlap_v,
                "final_mse": last.mse,
                "aborted": last.aborted,
                "pca_overlap_u_sq": base.overlap_u_sq,
                "pca_oracle_scaled_mse": base.oracle_scaled_mse,
                "pca_sigma1_scaled": base.sigma1_scaled,
            }
        )
    summary["mean_abs_overlap_u"] = float(np.mean(finals))
    _write_json(os.path.join(out, "amp_summary.json"), cfg, summary)
    print(
        f"ran {len(seeds)} AMP seeds; mean |overlap_u| = "
        f"{summary['mean_abs_overlap_u']:.4f} (SE fixed point {q_star[0]:.4f})"
    )


def _cmd_oracle(cfg) -> None:
    out = _outdir(cfg)
    pu, pv = _priors(cfg)
    sizes = [tuple(s) for s in cfg.get("sizes", [[1, 1], [2, 2], [3, 3]])]
    lambdas = [float(x) for x in cfg.get("lambdas", [0.25, 1.0, 4.0])]
    num_samples = int(cfg.get("num_samples", 10_000))
    seed = int(cfg["seed"])
    checks = []
    for (n, m) in sizes:
        for lam in lambdas:
            nish = oracle_mod.nishimori_check(pu, pv, n, m, lam, num_samples, seed)
            entry = {
                "n": n, "m": m, "lambda": lam,
                "nishimori": nish.to_dict(),
            }
            if lam > 0:
                h = cfg.get("h", 0.01 * lam)
                imm = oracle_mod.i_mmse_check(pu, pv, n, m, lam, h, num_samples, seed)
                entry["i_mmse"] = imm.to_dict(h=h)
            mm = oracle_mod.mmse_n(pu, pv, n, m, lam, num_samples, seed)
            entry["mmse_n"] = mm.to_dict()
            checks.append(entry)
    _write_json(os.path.join(out, "oracle.json"), cfg, {"checks": checks})
    print(f"wrote {out}/oracle.json ({len(checks)} grid cells)")


def _cmd_figures(cfg) -> None:
    out = _outdir(cfg)
    scfg = _solver_config(cfg)
    threads = int(cfg["threads"])
    alpha = 1.0
    lam_grid = [round(0.05 * i, 10) for i in range(1, 61)]
    fig1_cols = [
        "lambda", "mmse", "dmse", "mutual_information", "Q",
        "pca_mse_formula", "pca_mse_oracle",
    ]
    for name, p in (("fig1a", 0.5), ("fig1b", 0.1)):
        prior = from_spec({"two_point": p})
        tasks = [(lam, alpha, prior, prior, scfg) for lam in lam_grid]
        sols = _map(tasks, _solve_point, threads)
        rows = [
            [
                _fmt(lam),
                _fmt(sol.mmse),
                _fmt(sol.dmse),
                _fmt(sol.mutual_information),
                _fmt(sol.Q),
                _fmt(amp_mod.pca_asymptotic_mse(lam)),
                _fmt(amp_mod.pca_oracle_asymptotic_mse(lam)),
            ]
            for lam, (sol, _) in zip(lam_grid, sols)
        ]
        _write_csv(os.path.join(out, f"{name}.csv"), cfg, fig1_cols, rows)

    lam = 0.95
    p_grid = [round(0.01 * i, 10) for i in range(1, 51)]
    fig2_cols = ["p", "lambda", "mmse", "dmse", "mutual_information", "Q", "q_u", "q_v"]
    half = from_spec({"two_point": 0.5})
    for name, pv_of_p in (("fig2a", None), ("fig2b", half)):
        tasks = []
        for p in p_grid:
            pu = from_spec({"two_point": p})
            pv = pu if pv_of_p is None else pv_of_p
            tasks.append((p, lam, alpha, pu, pv, scfg))
        rows = _map(tasks, _fig2_row, threads)
        _write_csv(os.path.join(out, f"{name}.csv"), cfg, fig2_cols, rows)
    print(f"wrote {out}/fig1a.csv fig1b.csv fig2a.csv fig2b.csv")


_COMMANDS = {
    "sweep": _cmd_sweep,
    "threshold": _cmd_threshold,
    "fixedpoints": _cmd_fixedpoints,
    "amp": _cmd_amp,
    "oracle": _cmd_oracle,
    "figures": _cmd_figures,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="rslimits",
        description="Asymptotic MMSE/mutual-information limits of low-rank "
        "matrix estimation, with AMP, PCA and exact-oracle validation.",
    )
    parser.add_argument("--config", required=True, help="JSON run config")
    parser.add_argument("--quad-order", type=int, default=None, dest="quad_order")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--threads", type=int, default=None)
    args = parser.parse_args(argv)

    try:
        with open(args.config) as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        cfg = _resolve(raw, args)
        command = cfg.get("command")
        if command not in _COMMANDS:
            raise ConfigError(
                f"unknown command {command!r}; pick one of {sorted(_COMMANDS)}"
            )
        runner = _COMMANDS[command]
    except (OSError, json.JSONDecodeError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    try:
        runner(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, BracketError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
