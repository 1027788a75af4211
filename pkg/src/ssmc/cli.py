"""Command-line experiment runner.

Every subcommand reads a JSON config, applies ``--seed/--replicas/--threads``
overrides, writes the fully resolved config to ``plan.json`` (which can be fed
back through ``--config`` to reproduce the run bit for bit) and then its
results to ``--out``.

Exit codes: 0 success, 2 statistical failure or regime mismatch, 1 usage or
config error.
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import os
import sys

import numpy as np

from . import analysis, montecarlo
from .embedding import coupling_marginals, scaling_from_config
from .errors import AllCensored, CensoringBias, ConfigError, SSMCError
from .kernels import BesselWalk, kernel_from_config
from .levy import laplace_exponent, tail_factor, triplet_from_config
from .stats import inverse_gamma_cdf, ks_one_sample, ks_two_sample

SCHEMA_VERSION = 1
EXIT_OK, EXIT_ERROR, EXIT_STAT = 0, 1, 2
DEFAULT_REQUIRE = ("A1", "A2", "A3")
DEFAULT_ALPHA = 1e-3


# ---------------------------------------------------------------------------
# config


def load_config(path):
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return validate_config(cfg)


def validate_config(cfg):
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    version = cfg.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version must be {SCHEMA_VERSION}, got {version!r}")
    for block in ("kernel", "scaling"):
        if not isinstance(cfg.get(block), dict):
            raise ConfigError(f"missing {block!r} block")
    levy = cfg.get("levy")
    if levy is not None:
        has_t = "triplet" in levy
        has_e = bool(levy.get("estimate_from_kernel", False))
        if has_t == has_e:
            raise ConfigError("levy block needs exactly one of 'triplet' or 'estimate_from_kernel'")
    try:
        kernel_from_config(cfg["kernel"])
        scaling_from_config(cfg["scaling"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid kernel or scaling block: {exc}") from exc
    return cfg


def apply_overrides(cfg, args):
    cfg = copy.deepcopy(cfg)
    exp = cfg.setdefault("experiment", {})
    if args.seed is not None:
        cfg["seed"] = int(args.seed)
    cfg.setdefault("seed", 0)
    if args.replicas is not None:
        exp["replicas"] = int(args.replicas)
    if args.threads is not None:
        exp["threads"] = int(args.threads)
    return cfg


def build_plan(cfg) -> montecarlo.ExperimentPlan:
    exp = cfg.get("experiment", {})
    try:
        return montecarlo.ExperimentPlan(
            kernel=cfg["kernel"],
            scaling=cfg["scaling"],
            starts=exp.get("starts", [100]),
            stop_bound=int(exp.get("stop_bound", 1)),
            t_list=[float(t) for t in exp.get("t_list", [])],
            replicas=int(exp.get("replicas", 1000)),
            cap_multiple=float(exp.get("cap_multiple", montecarlo.CAP_MULTIPLE)),
            seed=int(cfg.get("seed", 0)),
            threads=int(exp.get("threads", 1)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid experiment block: {exc}") from exc


def limit_triplet(cfg, kernel=None):
    """The triplet named by the levy block, or None when the block is absent.

    ``estimate_from_kernel`` uses the family's derived limit triplet.
    """
    levy = cfg.get("levy")
    if levy is None:
        return None
    if "triplet" in levy:
        t = dict(levy["triplet"])
        t.setdefault("gamma", cfg["scaling"]["gamma"])
        return triplet_from_config(t)
    kernel = kernel or kernel_from_config(cfg["kernel"])
    return kernel.limit_triplet()


# ---------------------------------------------------------------------------
# output helpers


def _write_json(out, name, obj):
    with open(os.path.join(out, name), "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.bool_):
        return bool(x)
    raise TypeError(type(x).__name__)


def _write_pairs(path, t_list, left, right, names):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["replica", "t", *names])
        for r in range(left.shape[0]):
            for j, t in enumerate(t_list):
                w.writerow([r, repr(float(t)), repr(float(left[r, j])), repr(float(right[r, j]))])


def _ties(x, digits=10):
    # atoms shared by both sides (e.g. no jump yet) must compare equal despite rounding
    return np.array([float(f"{v:.{digits}g}") for v in x])


def _ks_table(t_list, left, right, alpha):
    rows = []
    for j, t in enumerate(t_list):
        d, p = ks_two_sample(_ties(left[:, j]), _ties(right[:, j]))
        rows.append({"t": float(t), "D": d, "p_value": p, "pass": bool(p > alpha)})
    return rows


def _print_ks(rows):
    for r in rows:
        print(f"t={r['t']:<8g} D={r['D']:.4f}  p={r['p_value']:.3g}  {'pass' if r['pass'] else 'FAIL'}")


# ---------------------------------------------------------------------------
# subcommands


def cmd_check(cfg, out):
    kernel = kernel_from_config(cfg["kernel"])
    scaling = scaling_from_config(cfg["scaling"])
    chk = cfg.get("check", {})
    rc = analysis.RegimeConfig(
        n_grid=chk.get("n_grid"),
        betas=tuple(chk.get("betas", analysis.RegimeConfig.betas)),
        foster_n_max=int(chk.get("foster_n_max", analysis.RegimeConfig.foster_n_max)),
    )
    report = analysis.assumption_report(kernel, scaling, rc)
    require = chk.get("require", list(DEFAULT_REQUIRE))
    expected = chk.get("expect_regime")
    ok = all(report.flags.get(a, False) for a in require)
    if expected is not None and expected != report.regime:
        ok = False
        report.notes.append(f"regime {report.regime} differs from expected {expected}")
    with open(os.path.join(out, "report.json"), "w") as fh:
        fh.write(report.to_json())
        fh.write("\n")
    print(report.table())
    return EXIT_OK if ok else EXIT_STAT


def _bessel_ks(kernel, samples, alpha):
    r, s2 = kernel.r, kernel.s2
    d, p = ks_one_sample(samples.scaled_absorption(), lambda x: inverse_gamma_cdf(x, r, s2))
    return {"r": r, "s2": s2, "D": d, "p_value": p, "pass": bool(p > alpha)}


def cmd_absorption(cfg, out):
    plan = build_plan(cfg)
    kernel = plan.build_kernel()
    triplet = limit_triplet(cfg, kernel)
    alpha = float(cfg.get("alpha", DEFAULT_ALPHA))
    moments = [float(q) for q in cfg.get("moments", [1.0])]
    ok = True
    summary = {"starts": {}}
    if triplet is not None:
        try:
            summary["target_mean"] = tail_factor(triplet, triplet.gamma)
        except SSMCError:
            summary["target_mean"] = None
    for n in plan.starts:
        s = montecarlo.run_absorption(plan, n)
        name = "samples.csv" if len(plan.starts) == 1 else f"samples_n{n}.csv"
        s.to_csv(os.path.join(out, name))
        entry = s.summary()
        entry["moments"] = {}
        for q in moments:
            try:
                m = montecarlo.moment_summary(s, q)
                entry["moments"][repr(q)] = {"estimate": m.estimate, "half_width": m.half_width}
            except CensoringBias as exc:
                entry["moments"][repr(q)] = {"error": str(exc)}
                ok = False
        if isinstance(kernel, BesselWalk) and kernel.r > 1:
            entry["inverse_gamma_ks"] = _bessel_ks(kernel, s, alpha)
            ok &= entry["inverse_gamma_ks"]["pass"]
        summary["starts"][str(n)] = entry
        print(f"n={n} a_n={s.a_n:g} mean A/a_n={entry['mean_ratio']:.6g} censored={entry['censored_fraction']:.3%}")
    _write_json(out, "summary.json", summary)
    return EXIT_OK if ok else EXIT_STAT


def cmd_marginals(cfg, out):
    plan = build_plan(cfg)
    kernel = plan.build_kernel()
    triplet = limit_triplet(cfg, kernel)
    if triplet is None:
        raise ConfigError("marginals needs a levy block")
    alpha = float(cfg.get("alpha", DEFAULT_ALPHA))
    stopped = bool(cfg.get("experiment", {}).get("stopped", True))
    n = plan.starts[0]
    chain = montecarlo.run_marginals(plan, stopped=stopped, n=n).marginals
    if stopped:
        # absorbed replicas sit in the cemetery state 0 of the limit
        chain = np.where(chain * n <= plan.stop_bound, 0.0, chain)
    lim_seed = int(np.random.SeedSequence(plan.seed).generate_state(1, dtype=np.uint64)[0])
    limit = montecarlo.run_limit_marginals(
        triplet, None, plan.t_list, plan.replicas, rng=lim_seed, **cfg.get("limit_options", {})
    ).marginals
    _write_pairs(os.path.join(out, "samples.csv"), plan.t_list, chain, limit, ["chain", "limit"])
    rows = _ks_table(plan.t_list, chain, limit, alpha)
    _write_json(out, "summary.json", {"n": n, "ks": rows, "alpha": alpha})
    _print_ks(rows)
    return EXIT_OK if all(r["pass"] for r in rows) else EXIT_STAT


def cmd_coupling(cfg, out):
    plan = build_plan(cfg)
    kernel = plan.build_kernel()
    scaling = plan.build_scaling()
    alpha = float(cfg.get("alpha", DEFAULT_ALPHA))
    n = plan.starts[0]
    cs = coupling_marginals(kernel, scaling, n, plan.t_list, plan.replicas, rng=plan.seed, threads=plan.threads)
    cs.to_csv(os.path.join(out, "samples.csv"))
    rows = _ks_table(plan.t_list, cs.clock_side, cs.embedded_side, alpha)
    _write_json(out, "summary.json", {"n": n, "ks": rows, "alpha": alpha})
    _print_ks(rows)
    return EXIT_OK if all(r["pass"] for r in rows) else EXIT_STAT


def cmd_limit(cfg, out):
    plan = build_plan(cfg)
    triplet = limit_triplet(cfg)
    if triplet is None:
        raise ConfigError("limit needs a levy block")
    s = montecarlo.run_limit_marginals(triplet, None, plan.t_list, plan.replicas, rng=plan.seed, **cfg.get("limit_options", {}))
    with open(os.path.join(out, "samples.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["replica", "t", "value"])
        for r in range(plan.replicas):
            for j, t in enumerate(plan.t_list):
                w.writerow([r, repr(float(t)), repr(float(s.marginals[r, j]))])
    table = []
    for j, t in enumerate(plan.t_list):
        col = s.marginals[:, j]
        table.append({
            "t": float(t),
            "mean": float(col.mean()),
            "absorbed_fraction": float(np.mean(col == 0.0)),
            "quantiles": {str(q): float(np.quantile(col, q)) for q in (0.1, 0.25, 0.5, 0.75, 0.9)},
        })
        print(f"t={t:<8g} mean={table[-1]['mean']:.6g} absorbed={table[-1]['absorbed_fraction']:.3f}")
    summary = {"marginals": table}
    try:
        summary["psi_gamma"] = laplace_exponent(triplet, triplet.gamma)
    except SSMCError:
        summary["psi_gamma"] = None
    _write_json(out, "summary.json", summary)
    return EXIT_OK


COMMANDS = {
    "check": cmd_check,
    "absorption": cmd_absorption,
    "marginals": cmd_marginals,
    "coupling": cmd_coupling,
    "limit": cmd_limit,
}


HELP = {
    "check": "assumption diagnostics and regime classification",
    "absorption": "absorption-time samples and moments",
    "marginals": "chain marginals against Lamperti-transformed limit marginals",
    "coupling": "Poisson-clock chain against the time-changed embedded chain",
    "limit": "marginals of the self-similar limit process",
}


def build_parser():
    p = argparse.ArgumentParser(prog="ssmc", description="Scaling limits of self-similar Markov chains.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sp = sub.add_parser(name, help=HELP[name])
        sp.add_argument("--config", required=True, help="JSON config file")
        sp.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
        sp.add_argument("--replicas", type=int, help="number of replicas")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--threads", type=int, help="worker threads, 0 = all cores")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = apply_overrides(load_config(args.config), args)
        os.makedirs(args.out, exist_ok=True)
        _write_json(args.out, "plan.json", cfg)
        return COMMANDS[args.command](cfg, args.out)
    except AllCensored as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAT
    except (SSMCError, ValueError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
