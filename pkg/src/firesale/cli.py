"""Command-line interface: ``firesale {cascade,limit,classify,capreq,study}``.

Exit status: 0 on success, 2 when an iteration did not converge, 1 on input errors.
"""
from __future__ import annotations

import argparse
import math
import sys
import warnings
from pathlib import Path

from . import __version__
from .cascade import DEFAULT_MAX_ROUNDS, DEFAULT_TOL, run_auxiliary, run_fire_sales
from .ensemble import (Diversification, EnsembleSpec, InitialDefaultFraction, Similarity,
                       SubsystemGrid, run_study)
from .errors import FiresaleError, InputError, LadderNotConverged
from .fixpoint import LADDER_TOL, chi_star
from .formats import dump_json, load_config, load_system_csv, num
from .limit import Latent, LimitSystem
from .model import CapitalRule, SalesFunction
from .resilience import (DEFAULT_DELTA_GRID, capital_threshold, classify, critical_capital,
                         min_tail_exponent)

EXIT_OK, EXIT_INPUT, EXIT_NONCONV = 0, 1, 2


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _tol(args, cfg, default):
    if args.tol is not None:
        if not args.tol > 0:
            raise InputError("--tol must be positive")
        return args.tol
    return cfg.get("tol", default)


def _max_rounds(args, cfg):
    value = args.max_rounds if args.max_rounds is not None else cfg.get("max_rounds", DEFAULT_MAX_ROUNDS)
    if value < 1:
        raise InputError("--max-rounds must be at least 1")
    return value


def _process(args, cfg):
    return args.process or cfg.get("process", "real")


def cmd_cascade(args, cfg):
    """Run the fire-sales and/or auxiliary process on a system CSV."""
    path = Path(cfg["_base"]) / cfg["system"]
    sales = SalesFunction.from_dict(cfg["sales"])
    system = load_system_csv(path, sales, cfg.get("impact"))
    tol = _tol(args, cfg, DEFAULT_TOL)
    max_rounds = _max_rounds(args, cfg)
    proc = _process(args, cfg)
    runs = {"real": run_fire_sales, "aux": run_auxiliary}
    chosen = ["real", "aux"] if proc == "both" else [proc]
    out = _out_dir(args)
    status = EXIT_OK
    for p in chosen:
        res = runs[p](system, tol=tol, max_rounds=max_rounds, trace=args.trace)
        doc = res.to_dict()
        doc["dropped_rows"] = system.dropped_rows
        if system.ids is not None:
            doc["default_ids"] = [system.ids[i] for i in res.defaults[:1000]]
        dump_json(doc, out / f"cascade_{p}.json")
        if args.trace:
            res.write_trace(out / f"trace_{p}.csv")
        print(f"{p}: sold_per_n={[num(v) for v in res.sold_per_n]} "
              f"default_fraction={num(res.default_fraction)} rounds={res.rounds} "
              f"converged={str(res.converged).lower()}")
        if not res.converged:
            status = EXIT_NONCONV
    return status


def cmd_limit(args, cfg):
    """Compute chi_hat, chi_star and the root inventory of a limit system."""
    system = LimitSystem.from_dict(cfg["system"])
    tol = _tol(args, cfg, LADDER_TOL)
    out = _out_dir(args)
    try:
        rep = chi_star(system, ladder=cfg.get("ladder"), tol=tol)
    except LadderNotConverged as e:
        dump_json({"error": str(e),
                   "epsilon_ladder": [{"eps": num(eps), "chi": [num(v) for v in c]}
                                      for eps, c in (e.ladder or [])]},
                  out / "chi_report.json")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NONCONV
    dump_json(rep.to_dict(), out / "chi_report.json")
    if rep.roots_1d is not None:
        rep.write_roots(out / "roots.csv")
    print(f"chi_hat={[num(v) for v in rep.chi_hat]} chi_star={[num(v) for v in rep.chi_star]} "
          f"pathological={str(rep.pathological_flag).lower()}")
    return EXIT_OK if rep.converged else EXIT_NONCONV


def _cert_rows(cert, prefix=""):
    for k, v in cert.items():
        if k in ("curve", "probe", "closed_form"):
            continue
        if isinstance(v, dict):
            yield from _cert_rows(v, prefix + k + ".")
        elif isinstance(v, (list, tuple)):
            yield prefix + k, ", ".join(_show(x) for x in v)
        else:
            yield prefix + k, _show(v)


def _show(v):
    if isinstance(v, float):
        return "inf" if math.isinf(v) else f"{v:.12g}"
    return str(v)


def cmd_classify(args, cfg):
    """Classify a limit system as resilient or not, with a certificate."""
    system = LimitSystem.from_dict(cfg["system"])
    grid = cfg.get("delta_grid", DEFAULT_DELTA_GRID)
    v = classify(system, probe=args.probe or cfg.get("probe", False), delta_grid=grid)
    out = _out_dir(args)
    dump_json(v.to_dict(), out / "verdict.json")
    print(v.summary())
    rows = list(_cert_rows(v.certificate))
    width = max((len(k) for k, _ in rows), default=0)
    for k, val in rows:
        print(f"  {k.ljust(width)}  {val}")
    return EXIT_OK


def cmd_capreq(args, cfg):
    """Capital-requirement thresholds for power-law holdings."""
    beta = cfg["beta"]
    nu = cfg.get("nu", 1.0)
    doc = {"beta": beta, "nu": nu}
    g, note = capital_threshold(beta, nu)
    doc["gamma_threshold"] = num(g)
    if note:
        doc["note"] = note
    if "structure" in cfg:
        cc = critical_capital(cfg["structure"], beta)
        doc["critical"] = {k: (num(v) if isinstance(v, float) else v) for k, v in cc.items()}
    if "betas" in cfg:
        bmin, cert = min_tail_exponent(cfg["betas"])
        gm, _ = capital_threshold(bmin, nu)
        doc["beta_min"] = num(bmin)
        doc["gamma_threshold_multi"] = num(gm)
        doc["tail_certificate"] = cert
    dump_json(doc, _out_dir(args) / "capreq.json")
    print(" ".join(f"{k}={v}" for k, v in doc.items() if not isinstance(v, dict)))
    return EXIT_OK


def _study_spec(cfg, seed):
    beta = cfg.get("beta", 3.0)
    S = cfg.get("S", 2)
    cal = cfg.get("calibration", {"D": 10, "J": 10})
    if "capital" in cfg:
        capital = CapitalRule.from_dict(cfg["capital"])
    else:
        ac = critical_capital({"S": S, "D": cal["D"], "J": cal["J"]}, beta)["alpha_c"]
        capital = CapitalRule.constant(ac)
    imp = cfg.get("impact", {"kind": "exponential"})
    params = (("nu", imp["nu"]),) if imp.get("kind") == "power" else ()
    return EnsembleSpec(
        n=cfg.get("n", 10_000), structure=SubsystemGrid(S, cal["D"], cal["J"]),
        holdings=Latent.pareto(beta), capital=capital,
        shock=InitialDefaultFraction(cfg.get("initial_default_fraction", 0.01), cfg.get("stratified", True)),
        sales=SalesFunction.from_dict(cfg.get("sales", {"kind": "indicator"})),
        impact_kind=imp.get("kind", "exponential"), impact_params=params, seed=seed)


def cmd_study(args, cfg):
    """Replicated ensemble study over a diversification or similarity sweep."""
    reps = args.replications if args.replications is not None else cfg.get("replications", 100)
    if reps < 1:
        raise InputError("empty study: replications must be at least 1")
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    spec = _study_spec(cfg, seed)
    sw = cfg["sweep"]
    if sw["kind"] == "diversification":
        sweep = Diversification(tuple(sw.get("deltas", range(2, 41, 2))), sw.get("sigma", 0.5))
    else:
        sweep = Similarity(tuple(sw.get("sigmas", [j / 20 for j in range(21)])), sw.get("delta", 20))
    tol = _tol(args, cfg, DEFAULT_TOL)
    max_rounds = _max_rounds(args, cfg)
    proc = _process(args, cfg)
    chosen = ["real", "aux"] if proc == "both" else [proc]
    out = _out_dir(args)
    status = EXIT_OK
    for p in chosen:
        res = run_study(spec, sweep, reps, process=p, tol=tol, max_rounds=max_rounds,
                        workers=args.workers)
        suffix = "" if len(chosen) == 1 else f"_{p}"
        res.write_rows(out / f"rows{suffix}.csv")
        res.write_summary(out / f"summary{suffix}.csv")
        res.write_plot_data(out / f"plot_data{suffix}.csv")
        excluded = sum(r[4] for r in res.summary())
        print(f"{p}: {len(res.rows)} runs over {len(sweep.points())} sweep points, {excluded} excluded")
        if excluded:
            status = EXIT_NONCONV
    return status


COMMANDS = {"cascade": cmd_cascade, "limit": cmd_limit, "classify": cmd_classify,
            "capreq": cmd_capreq, "study": cmd_study}


class _Parser(argparse.ArgumentParser):
    # usage errors are input errors; status 2 is reserved for non-convergence
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", required=True, help="JSON configuration document")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--seed", type=int, help="master seed (u64)")
    common.add_argument("--tol", type=float, help="convergence tolerance override")
    common.add_argument("--process", choices=["real", "aux", "both"], help="process selector")
    common.add_argument("--replications", type=int, help="replications per sweep point")
    common.add_argument("--trace", action="store_true", help="write per-round trace CSV")
    common.add_argument("--max-rounds", type=int, dest="max_rounds", help="round cap")
    common.add_argument("--probe", action="store_true", help="always run the numeric probe")
    common.add_argument("--workers", type=int, help="worker processes (default: FIRESALE_WORKERS or CPU count)")
    p = _Parser(prog="firesale", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], description=COMMANDS[name].__doc__)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_INPUT
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            cfg = load_config(args.config)
            if cfg["kind"] != args.command:
                raise InputError(f"config kind {cfg['kind']!r} does not match command {args.command!r}")
            status = COMMANDS[args.command](args, cfg)
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
        return status
    except (FiresaleError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
