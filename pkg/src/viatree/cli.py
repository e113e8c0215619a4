"""Command line interface.

Subcommands: check, numeraire, optimize, measure, entropy, simulate,
equivalence-suite.  Global flags (given after the subcommand):
--tol-eq, --tol-ineq, --seed, --out, --format.

Exit status contract:
  0  the command completed and every check it ran passed
  1  a mathematical assertion failed, including requests for an object
     that cannot exist (e.g. the numeraire portfolio of an arbitrage
     market); the certificate is included in the report
  2  usage or I/O error (bad flags, unreadable or malformed files)

Reports are rendered as json, csv, or text; with --out they are written
atomically, otherwise printed to stdout.  Reruns with the same config
produce byte-identical reports except for the timing field.

Density files (for --measure FILE and --hellinger FILE) are JSON objects
{"z": [per-node values]} with z[0] = 1 in breadth-first node order.
"""

from __future__ import annotations

import argparse
import json
import sys
import time

import numpy as np

from . import __version__
from .arbitrage import ArbitrageError, check_na, check_nupbr
from .bessel import (
    estimate_log_value,
    estimate_reciprocal_moment,
    numeraire_probe,
    reciprocal_checkpoints,
    simulate_bes3,
    stopped_experiments,
)
from .entropy import entropy_hellinger, exp_utility, min_entropy_emm
from .market_io import MarketFormatError, load_market
from .markets import DensityProcess, price_martingale_residual
from .measure_change import delta_for_epsilon, verify_value_bound
from .numeraire import deflator_probe, numeraire_portfolio, verify_numeraire
from .reporting import make_report, render, write_report
from .utility import (
    EquivalenceConfig,
    crra_utility,
    equivalence_suite,
    log_utility,
    maximize_utility,
)

STOPPED_LEVELS = [1, 2, 4, 8, 16, 32, 64]


def _positive(text: str) -> float:
    x = float(text)
    if not x > 0.0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
    return x


def _seed(text: str) -> int:
    s = int(text)
    if not 0 <= s < 2**64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return s


def _count(text: str) -> int:
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text}")
    return n


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--tol-eq", type=_positive, default=1e-9, metavar="R",
                   help="tolerance for equality checks (default 1e-9)")
    p.add_argument("--tol-ineq", type=_positive, default=1e-7, metavar="R",
                   help="tolerance for inequality margins (default 1e-7)")
    p.add_argument("--seed", type=_seed, default=0, metavar="N",
                   help="64-bit unsigned RNG seed (default 0)")
    p.add_argument("--out", metavar="FILE", default=None,
                   help="write the report to FILE (atomic); default stdout")
    p.add_argument("--format", choices=["json", "csv", "text"], default="json",
                   help="report format (default json)")
    return p


def _load_density(path: str, n_nodes: int) -> DensityProcess:
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as e:
        raise MarketFormatError(f"{path}: not valid JSON ({e})") from e
    if not isinstance(obj, dict) or "z" not in obj:
        raise MarketFormatError(f'{path}: expected a JSON object {{"z": [...]}}')
    z = np.asarray(obj["z"], dtype=np.float64)
    if z.shape != (n_nodes,):
        raise MarketFormatError(
            f"{path}: density has {z.size} values, the tree has {n_nodes} nodes"
        )
    try:
        return DensityProcess(z)
    except ValueError as e:
        raise MarketFormatError(f"{path}: {e}") from e


def _cert_payload(cert) -> dict:
    out = {"verdict": cert.verdict}
    if cert.density is not None:
        out["density_leaf_min"] = float(cert.density.z.min())
        out["emm_residual"] = cert.emm_residual
    if cert.fail_node is not None:
        out["fail_node"] = cert.fail_node
        out["replay"] = cert.replay
    return out


def _cmd_check(args) -> tuple[int, dict]:
    m = load_market(args.market)
    cert = check_na(m)
    nupbr = check_nupbr(m)
    payload = {
        "market": m.label,
        "verdict": cert.verdict,
        "nupbr": nupbr.verdict,
        "node_eps_min": min(cert.node_eps.values()) if cert.node_eps else None,
        "certificate": _cert_payload(cert),
    }
    if cert.verdict == "NA":
        resid = price_martingale_residual(m, cert.density)
        ok = resid <= args.tol_eq and float(cert.density.z.min()) > 0.0
        payload["emm_price_residual"] = resid
    else:
        replay = cert.replay
        ok = replay["min_gain"] >= -1e-12 and replay["max_gain"] > 1e-9
    payload["checks_passed"] = bool(ok)
    return (0 if ok else 1), payload


def _cmd_numeraire(args) -> tuple[int, dict]:
    m = load_market(args.market)
    res = numeraire_portfolio(m, x0=args.x0)
    if res.status != "ok":
        return 1, {
            "market": m.label,
            "status": res.status,
            "certificate": _cert_payload(res.certificate),
        }
    verify = verify_numeraire(
        m, res.wealth, n_strategies=args.strategies, seed=args.seed,
        tol=args.tol_ineq,
    )
    defl = deflator_probe(m, res.wealth, seed=args.seed)
    ok = verify["passed"] and defl["passed"]
    payload = {
        "market": m.label,
        "status": res.status,
        "log_growth": res.log_growth,
        "foc_sup": res.foc_sup,
        "fractions": res.fractions.fractions,
        "wealth": res.wealth.values,
        "verification": verify,
        "deflator": defl,
        "checks_passed": bool(ok),
    }
    return (0 if ok else 1), payload


def _parse_utility(text: str):
    if text == "log":
        return log_utility()
    if text.startswith("crra:"):
        try:
            gamma = float(text.split(":", 1)[1])
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad CRRA parameter in {text!r}")
        return crra_utility(gamma)
    raise argparse.ArgumentTypeError(
        f"unknown utility {text!r}; use 'log' or 'crra:GAMMA'"
    )


def _cmd_optimize(args) -> tuple[int, dict]:
    m = load_market(args.market)
    utility = args.utility
    if args.measure == "physical":
        measure = None
    elif args.measure == "emm":
        cert = check_na(m)
        if cert.verdict != "NA":
            return 1, {
                "market": m.label,
                "status": "no-solution",
                "reason": "no martingale density exists",
                "certificate": _cert_payload(cert),
            }
        measure = cert.density
    else:
        measure = _load_density(args.measure, m.tree.n_nodes)
    res = maximize_utility(m, utility, x0=args.x0, measure=measure)
    payload = {
        "market": m.label,
        "status": res.status,
        "utility": utility.name,
        "measure": args.measure,
        "route": res.route,
    }
    if res.status != "ok":
        payload["certificate"] = _cert_payload(res.certificate)
        return 1, payload
    payload.update(
        value=res.value,
        foc_residual=res.foc_residual,
        strategy=getattr(res.strategy, "fractions",
                         getattr(res.strategy, "holdings", None)),
        wealth=res.wealth.values,
        utility_certificate=res.utility_certificate,
    )
    return 0, payload


def _cmd_measure(args) -> tuple[int, dict]:
    m = load_market(args.market)
    me = min_entropy_emm(m)
    q = me.density.z[m.tree.leaves]
    dm = delta_for_epsilon(m.tree, q, args.epsilon)
    vb = verify_value_bound(m, dm, x0=args.x0, tol=args.tol_eq)
    eps_ok = dm.l1_dist <= args.epsilon
    bound_ok = float(dm.z_leaf.max()) <= dm.bound + 1e-12
    ok = eps_ok and bound_ok and vb["passed"]
    payload = {
        "market": m.label,
        "epsilon": args.epsilon,
        "delta": dm.delta,
        "l1_distance": dm.l1_dist,
        "z_min": float(dm.z_leaf.min()),
        "z_max": float(dm.z_leaf.max()),
        "z_bound": dm.bound,
        "epsilon_check": bool(eps_ok),
        "bound_check": bool(bound_ok),
        "value_bound": vb,
        "checks_passed": bool(ok),
    }
    return (0 if ok else 1), payload


def _cmd_entropy(args) -> tuple[int, dict]:
    m = load_market(args.market)
    payload = {"market": m.label}
    if args.hellinger is not None:
        dp = _load_density(args.hellinger, m.tree.n_nodes)
        rep = entropy_hellinger(m.tree, dp)
        is_mart = dp.is_martingale(m.tree, 1e-9)
        payload.update(
            mode="hellinger",
            e_p_v_terminal=rep.e_p_v_terminal,
            e_q_h_terminal=rep.e_q_h_terminal,
            relative_entropy=rep.relative_entropy,
            density_is_martingale=bool(is_mart),
        )
        ok = True
        if is_mart:
            gap = abs(rep.e_q_h_terminal - rep.relative_entropy)
            payload["compensator_identity_gap"] = gap
            ok = gap <= max(args.tol_eq, 1e-10 * (1.0 + rep.relative_entropy))
        payload["checks_passed"] = bool(ok)
        return (0 if ok else 1), payload
    if args.exp_utility:
        res = exp_utility(m)
        ok = (
            res.density_link_residual <= args.tol_eq
            and res.entropy_density_gap <= 1e-6
        )
        payload.update(
            mode="exp-utility",
            value=res.value,
            theta_sup=float(np.max(np.abs(res.theta_hat.holdings))),
            gradient_sup=res.gradient_sup,
            density_link_residual=res.density_link_residual,
            entropy_density_gap=res.entropy_density_gap,
            cap_hit=res.cap_hit,
            checks_passed=bool(ok),
        )
        return (0 if ok else 1), payload
    res = min_entropy_emm(m)
    resid = price_martingale_residual(m, res.density)
    ok = res.kkt_residual < 1e-8 and resid <= args.tol_eq
    payload.update(
        mode="min-entropy",
        entropy=res.entropy,
        kkt_residual=res.kkt_residual,
        price_residual=resid,
        leaf_density=res.density.z[m.tree.leaves],
        checks_passed=bool(ok),
    )
    return (0 if ok else 1), payload


def _cmd_simulate(args) -> tuple[int, dict]:
    b = simulate_bes3(args.paths, args.steps, seed=args.seed)
    rec = estimate_reciprocal_moment(b)
    gap = 1.0 - rec.mean
    gap_sigmas = gap / rec.std_error if rec.std_error else float("inf")
    lv = estimate_log_value(b)
    probe = numeraire_probe(b, n_strats=args.probe_strategies, seed=args.seed + 1)
    stopped = stopped_experiments(b, STOPPED_LEVELS)
    rows = [
        {"kind": "stopped", "level": r["level"], "mean": r["mean"],
         "std_error": r["std_error"], "frac_stopped": r["frac_stopped"]}
        for r in stopped["rows"]
    ]
    for est in reciprocal_checkpoints(b):
        rows.append(
            {"kind": "checkpoint", "label": est.label, "mean": est.mean,
             "std_error": est.std_error}
        )
    means = [r["mean"] for r in stopped["rows"]]
    monotone = all(a <= b2 + 1e-12 for a, b2 in zip(means, means[1:]))
    top = stopped["rows"][-1]
    conv_se = 3.0 * (
        top["std_error"] ** 2 + stopped["unstopped_std_error"] ** 2
    ) ** 0.5
    converged = abs(stopped["unstopped_mean"] - top["mean"]) <= conv_se
    checks = {
        "reciprocal_within_3se": abs(rec.mean - 0.6826894921370859)
        <= 3.0 * rec.std_error,
        "no_emm_gap_over_10se": gap_sigmas > 10.0,
        "log_bound": lv["bound_check"] == "pass",
        "ito_identity": lv["ito_check"] == "pass",
        "probe_all_pass": probe["all_pass"],
        "stopped_monotone": monotone,
        "stopped_converged": converged,
    }
    payload = {
        "n_paths": b.n_paths,
        "n_steps": b.n_steps,
        "seed": b.seed,
        "reciprocal_moment": rec,
        "no_emm_gap": gap,
        "no_emm_gap_sigmas": gap_sigmas,
        "log_value": lv,
        "probe": {k: v for k, v in probe.items() if k != "rows"},
        "stopped": stopped,
        "rows": rows,
        "checks": checks,
        "checks_passed": bool(all(checks.values())),
    }
    return (0 if all(checks.values()) else 1), payload


def _cmd_suite(args) -> tuple[int, dict]:
    cfg = EquivalenceConfig(
        n_markets=args.markets,
        d_range=(1, args.d_max),
        depth_range=(1, args.depth_max),
        branch_range=(2, args.branch_max),
        seed=args.seed,
    )
    rep = equivalence_suite(cfg)
    payload = {
        "n_markets": rep.n_markets,
        "counts": rep.counts,
        "all_agree": rep.all_agree,
        "disagreements": rep.disagreements,
        "rows": rep.rows,
        "checks_passed": rep.all_agree,
    }
    return (0 if rep.all_agree else 1), payload


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="viatree",
        description="No-arbitrage, numeraire, and utility analysis of finite "
        "event-tree markets, plus a Bessel(3) Monte Carlo study.",
    )
    parser.add_argument("--version", action="version", version=f"viatree {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common()

    p = sub.add_parser("check", parents=[common],
                       help="no-arbitrage / NUPBR verdict with certificate")
    p.add_argument("--market", required=True, metavar="FILE")
    p.set_defaults(func=_cmd_check)

    p = sub.add_parser("numeraire", parents=[common],
                       help="numeraire portfolio and supermartingale verification")
    p.add_argument("--market", required=True, metavar="FILE")
    p.add_argument("--x0", type=_positive, default=1.0, metavar="R")
    p.add_argument("--strategies", type=_count, default=100, metavar="N",
                   help="sampled strategies for verification (default 100)")
    p.set_defaults(func=_cmd_numeraire)

    p = sub.add_parser("optimize", parents=[common],
                       help="expected-utility maximization")
    p.add_argument("--market", required=True, metavar="FILE")
    p.add_argument("--utility", type=_parse_utility, default=log_utility(),
                   metavar="log|crra:GAMMA")
    p.add_argument("--x0", type=_positive, default=1.0, metavar="R")
    p.add_argument("--measure", default="physical",
                   metavar="physical|emm|FILE",
                   help="probability weighting: physical, the glued "
                   "martingale density (emm), or a density file")
    p.set_defaults(func=_cmd_optimize)

    p = sub.add_parser("measure", parents=[common],
                       help="bounded measure change meeting an l1 budget")
    p.add_argument("--market", required=True, metavar="FILE")
    p.add_argument("--epsilon", type=_positive, required=True, metavar="R")
    p.add_argument("--x0", type=_positive, default=1.0, metavar="R")
    p.set_defaults(func=_cmd_measure)

    p = sub.add_parser("entropy", parents=[common],
                       help="entropy-Hellinger, minimal-entropy EMM, or "
                       "exponential utility")
    p.add_argument("--market", required=True, metavar="FILE")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--min-entropy", action="store_true",
                   help="minimal-entropy martingale density (default)")
    g.add_argument("--exp-utility", action="store_true",
                   help="exponential-utility optimization and duality link")
    g.add_argument("--hellinger", metavar="DENSITYFILE",
                   help="entropy-Hellinger report for a density file")
    p.set_defaults(func=_cmd_entropy)

    p = sub.add_parser("simulate", parents=[common],
                       help="Bessel(3) Monte Carlo study")
    p.add_argument("--paths", type=_count, default=100_000, metavar="N")
    p.add_argument("--steps", type=_count, default=1000, metavar="M")
    p.add_argument("--probe-strategies", type=_count, default=200, metavar="N")
    p.add_argument("--report", dest="out", metavar="FILE",
                   help="alias for --out")
    p.set_defaults(func=_cmd_simulate)

    def _branches(text: str) -> int:
        n = int(text)
        if n < 2:
            raise argparse.ArgumentTypeError("need at least 2 branches")
        return n

    p = sub.add_parser("equivalence-suite", parents=[common],
                       help="four-way equivalence check on random markets")
    p.add_argument("--markets", type=_count, default=100, metavar="N")
    p.add_argument("--d-max", type=_count, default=3, metavar="N")
    p.add_argument("--depth-max", type=_count, default=3, metavar="N")
    p.add_argument("--branch-max", type=_branches, default=4, metavar="N")
    p.set_defaults(func=_cmd_suite)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    t0 = time.perf_counter()
    code = 0
    try:
        code, payload = args.func(args)
    except (MarketFormatError, OSError) as e:
        print(f"viatree: error: {e}", file=sys.stderr)
        return 2
    except ArbitrageError as e:
        code = 1
        payload = {"error": str(e), "certificate": _cert_payload(e.certificate)}
    except (AssertionError, RuntimeError, ValueError) as e:
        code = 1
        payload = {"error": f"{type(e).__name__}: {e}"}
    # the output location is delivery detail, not run configuration; leaving
    # it out keeps reports byte-identical wherever they are written
    config = {
        k: v for k, v in sorted(vars(args).items())
        if k not in ("func", "out") and not callable(v)
    }
    if hasattr(args, "utility") and args.utility is not None:
        config["utility"] = getattr(args.utility, "name", str(args.utility))
    report = make_report(args.command, config, payload,
                         elapsed_s=time.perf_counter() - t0)
    if args.out:
        write_report(report, args.out, args.format)
        status = "pass" if code == 0 else "FAIL"
        print(f"viatree {args.command}: {status}; report written to {args.out}")
    else:
        print(render(report, args.format))
    return code


if __name__ == "__main__":
    sys.exit(main())
