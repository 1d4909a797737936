"""Command-line entry point: ``run``, ``sweep`` and ``capacity``.

Machine-readable output goes to files (``run``, ``sweep``) or stdout
(``capacity``); log lines go to stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import capacity
from .engine import run as simulate
from .metrics import average_backlog, bound_for, stability_verdict
from .model import (
    ConfigError,
    NetworkConfig,
    PolicyParams,
    load_config,
    parse_rational,
    reference_config,
    validate,
)

log = logging.getLogger("miabp")

POLICIES = ("tslot", "vq", "vq-enhanced", "randomized")
TRACE_HEADER = ["t", "total_backlog", "delivered_total", "cleared_partial"]


# -- config plumbing ------------------------------------------------------

def resolve_config(arg: str) -> NetworkConfig:
    """Load a config by path, or by reference name (``net4``, ``net10``)."""
    path = Path(arg)
    if not path.exists() and not path.suffix:
        path = reference_config(arg)
    return load_config(path)


def parse_rates(text: str, config: NetworkConfig) -> dict:
    """Comma-separated per-stream rates, in the config's stream order."""
    parts = [p for p in text.split(",") if p.strip()]
    streams = config.arrivals.streams
    if len(parts) != len(streams):
        raise ConfigError(f"--rates: expected {len(streams)} values, got {len(parts)}")
    return {(s.node, s.dest): parse_rational(p.strip(), "--rates") for s, p in zip(streams, parts)}


def apply_overrides(config: NetworkConfig, args) -> NetworkConfig:
    kw = {}
    for name in ("policy", "T", "eta", "gamma", "slots", "seed"):
        value = getattr(args, name, None)
        if value is None:
            continue
        if name == "policy":
            kw["kind"] = value
        elif name in ("eta", "gamma"):
            kw[name] = parse_rational(value, f"--{name}")
        elif name == "slots":
            kw["horizon"] = value
        else:
            kw[name] = value
    if getattr(args, "no_mia", False):
        kw["no_mia"] = True
    config = config.with_overrides(**kw)
    if getattr(args, "rates", None):
        config = config.with_overrides(arrivals=config.arrivals.with_rates(parse_rates(args.rates, config)))
    elif getattr(args, "lam", None) is not None:
        config = config.with_overrides(rate=args.lam)
    problems = validate(config)
    if problems:
        raise ConfigError("; ".join(str(p) for p in problems))
    return config


def net_info(config: NetworkConfig) -> dict:
    topo = config.topology
    return {
        "K": len(topo.commodities),
        "N": topo.n_nodes,
        "d": config.degree_bound or topo.max_degree,
        "a_max": config.arrivals.a_max,
        "T": config.policy.T,
        "eta": config.policy.eta,
    }


def _num(x):
    """JSON-friendly number: ints stay ints, rationals become floats."""
    if isinstance(x, Fraction):
        return x.numerator if x.denominator == 1 else float(x)
    return x


# -- run ------------------------------------------------------------------

def summarize(config: NetworkConfig, result, cert) -> dict:
    verdict = stability_verdict(result)
    avg = average_backlog(result) if result.horizon else Fraction(0)
    out = {
        "policy": result.label,
        "kind": result.kind,
        "params": {"T": config.policy.T, "eta": str(config.policy.eta), "gamma": str(config.policy.gamma)},
        "slots": result.horizon,
        "seed": config.seed,
        "rates": {f"{i}->{c}": str(v) for (i, c), v in sorted(result.rates.items())},
        "average_backlog": float(avg),
        "verdict": verdict.as_dict() if result.horizon else None,
        "delivered": {f"{i}->{c}": v for (i, c), v in sorted(result.flow_deliveries().items())},
        "drift": result.drift.as_dict() if result.drift else None,
    }
    if result.partial is not None and result.horizon:
        out["average_backlog_with_partial"] = float(avg + Fraction(int(result.partial.sum()), result.horizon * result.lq))
        out["cleared_partial"] = float(Fraction(int(result.cleared[-1]), result.lq))
    if cert is not None:
        out["margin"] = capacity._fmt(cert.margin)
        bound = bound_for(result, net_info(config), cert.margin) if cert.feasible else None
        out["bound"] = {"name": bound[0], "value": float(bound[1]), "exact": str(bound[1])} if bound else None
        if bound and result.horizon:
            out["within_bound"] = avg <= bound[1]
    return out


def write_trace(path: Path, result, thin: int = 1, with_queues: bool = False):
    lq = result.lq
    rows = dict(result.queue_rows) if with_queues else {}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER + (result.queue_names if with_queues else []))
        for t in range(0, result.horizon, thin):
            c = Fraction(int(result.cleared[t]), lq)
            row = [t, int(result.backlog[t]), int(result.delivered[t]), c.numerator if c.denominator == 1 else float(c)]
            if with_queues:
                row += [_num(x) for x in rows[t]]
            w.writerow(row)


def cmd_run(args) -> int:
    config = apply_overrides(resolve_config(args.config), args)
    kind = config.policy.kind
    cert = capacity.max_margin(config.topology, config.patterns, config.arrivals.rates())
    log.info("%s: lambda=%s margin=%s, %d slots, seed %d", config.policy.label,
             {k: str(v) for k, v in config.arrivals.rates().items()}, capacity._fmt(cert.margin), config.horizon, config.seed)
    if kind == "randomized" and not cert.feasible:
        raise ConfigError(f"arrival rates outside the stability region (margin {capacity._fmt(cert.margin)}); no randomized policy exists")
    t0 = time.perf_counter()
    result = simulate(
        config,
        monitor=not args.no_monitor and kind != "randomized",
        record_queues=args.verbose,
        thin=args.thin,
        certificate=cert if kind == "randomized" else None,
    )
    log.info("simulated in %.2fs", time.perf_counter() - t0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_trace(out / "trace.csv", result, args.thin, args.verbose)
    summary = summarize(config, result, cert)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if summary["verdict"] is not None:
        log.info("average backlog %.3f, %s", summary["average_backlog"], "stable" if summary["verdict"]["stable"] else "unstable")
    return 0


# -- sweep ----------------------------------------------------------------

def parse_policy(text: str, base: PolicyParams) -> PolicyParams:
    """``kind[:key=value,...]`` with keys T, eta, gamma."""
    kind, _, rest = text.partition(":")
    if kind not in POLICIES:
        raise ConfigError(f"unknown policy {kind!r}; expected one of {', '.join(POLICIES)}")
    kw = {"kind": kind, "T": base.T, "eta": base.eta, "gamma": base.gamma}
    for item in filter(None, rest.split(",")):
        key, _, value = item.partition("=")
        if key == "T":
            kw["T"] = int(value)
        elif key in ("eta", "gamma"):
            kw[key] = parse_rational(value, key)
        else:
            raise ConfigError(f"policy {text!r}: unknown key {key!r}")
    return PolicyParams(**kw)


def parse_grid(text: str) -> list[Fraction]:
    """``a,b,c`` or ``start:stop:step`` (stop inclusive), exact decimals."""
    if ":" in text:
        start, stop, step = (parse_rational(p, "--grid") for p in text.split(":"))
        if step <= 0:
            raise ConfigError("--grid: step must be positive")
        out, x = [], start
        while x <= stop:
            out.append(x)
            x += step
        return out
    return [parse_rational(p.strip(), "--grid") for p in text.split(",") if p.strip()]


def derive_seed(master: int, index: int) -> int:
    return int(np.random.SeedSequence(master, spawn_key=(2, index)).generate_state(1, np.uint64)[0])


def _sweep_point(job):
    config, lam, params, seed = job
    try:
        cfg = config.with_overrides(rate=lam, seed=seed, kind=params.kind, T=params.T, eta=params.eta, gamma=params.gamma)
        problems = validate(cfg)
        if problems:
            raise ConfigError("; ".join(str(p) for p in problems))
        result = simulate(cfg)
        v = stability_verdict(result)
        return [str(lam), params.label, seed, float(average_backlog(result)), v.slope, v.stable, ""]
    except Exception as exc:  # reported per row; the sweep continues
        return [str(lam), params.label, seed, "", "", "", f"{type(exc).__name__}: {exc}"]


def workers() -> int:
    cap = os.environ.get("MIA_BP_THREADS")
    n = os.cpu_count() or 1
    if cap:
        n = min(n, max(1, int(cap)))
    return n


def cmd_sweep(args) -> int:
    config = apply_overrides(resolve_config(args.config), args)
    grid = parse_grid(args.grid) if args.grid else [parse_rational(args.lam, "--lambda")] if args.lam else None
    if not grid:
        raise ConfigError("sweep needs --grid or --lambda")
    if args.seeds < 1:
        raise ConfigError("--seeds must be at least 1")
    policies = [parse_policy(p, config.policy) for p in (args.policies or [config.policy.kind])]
    seeds = [derive_seed(config.seed, s) for s in range(args.seeds)]
    jobs = [(config, lam, p, s) for lam in grid for p in policies for s in seeds]
    n = min(workers(), len(jobs))
    log.info("sweep: %d runs of %d slots on %d worker(s)", len(jobs), config.horizon, n)
    if n > 1:
        with ProcessPoolExecutor(max_workers=n) as ex:
            rows = list(ex.map(_sweep_point, jobs))
    else:
        rows = [_sweep_point(j) for j in jobs]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lambda", "policy", "seed", "average_backlog", "tail_slope", "stable", "error"])
        w.writerows(rows)
    failed = sum(1 for r in rows if r[-1])
    if failed:
        log.warning("%d of %d runs failed; see the error column", failed, len(rows))
    return 0


# -- capacity -------------------------------------------------------------

def format_policy(pol: capacity.RandomizedPolicy) -> str:
    lines = []
    for s, p in pol.pattern_probs:
        if p:
            lines.append(f"pattern {{{','.join(map(str, sorted(s)))}}} {p}")
    for (s, i), choices in sorted(pol.node_choices.items(), key=lambda kv: (sorted(kv[0][0]), kv[0][1])):
        for j, c, p in choices:
            lines.append(f"choose {{{','.join(map(str, sorted(s)))}}} {i} {j} {c} {p}")
    for (i, c), hops in sorted(pol.routing.items()):
        for j, p in hops:
            lines.append(f"route {i} {c} {j} {p}")
    return "\n".join(lines) + "\n"


def cmd_capacity(args) -> int:
    config = apply_overrides(resolve_config(args.config), args)
    topo, pats = config.topology, config.patterns
    out = sys.stdout
    if args.ray:
        direction = config.arrivals.rates() if args.rates else capacity.symmetric_direction(config.arrivals.rates())
        t0 = time.perf_counter()
        b = capacity.ray_boundary(topo, pats, direction, virtual=args.virtual)
        log.info("ray LP solved in %.3fs", time.perf_counter() - t0)
        out.write(f"boundary {capacity._fmt(b)}\n")
        if isinstance(b, Fraction):
            out.write(f"boundary_float {float(b)!r}\n")
        return 0
    lam = config.arrivals.rates()
    fn = capacity.max_virtual_margin if args.virtual else capacity.max_margin
    cert = fn(topo, pats, lam)
    if args.certificate:
        out.write(cert.to_text())
        if cert.feasible and not args.virtual:
            out.write(format_policy(capacity.extract_randomized_policy(cert, topo)))
    else:
        out.write(f"feasible {str(cert.feasible).lower()}\n")
        out.write(f"margin {capacity._fmt(cert.margin)}\n")
    return 0


# -- parser ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="config file, or a reference name (net4, net10)")
    common.add_argument("--policy", choices=POLICIES)
    common.add_argument("--T", type=int)
    common.add_argument("--eta", help="decode threshold, p/q")
    common.add_argument("--gamma", help="enhanced offset, p/q")
    common.add_argument("--lambda", dest="lam", help="per-flow arrival rate for every stream")
    common.add_argument("--rates", help="comma-separated per-stream rates (config stream order)")
    common.add_argument("--slots", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--no-mia", action="store_true", help="drop weak links before analysis")
    common.add_argument("--verbose", action="store_true", help="debug logging; queue columns in the trace")

    parser = argparse.ArgumentParser(prog="miabp", description="Backpressure scheduling under mutual information accumulation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="simulate one configuration")
    p.add_argument("--thin", type=int, default=1, help="write every n-th slot to the trace")
    p.add_argument("--no-monitor", action="store_true", help="skip the drift monitor")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", parents=[common], help="average backlog over a rate grid")
    p.add_argument("--grid", help="rates as a,b,c or start:stop:step")
    p.add_argument("--policies", nargs="+", help="kind[:T=..,eta=..,gamma=..] entries")
    p.add_argument("--seeds", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("capacity", parents=[common], help="region membership, margin and boundary")
    p.add_argument("--ray", action="store_true", help="boundary along the arrival direction (symmetric unless --rates)")
    p.add_argument("--virtual", action="store_true", help="use the virtual-node region")
    p.add_argument("--certificate", action="store_true", help="print the certificate and randomized policy")
    p.set_defaults(func=cmd_capacity)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(stream=sys.stderr, level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s")
    if args.slots is not None and args.slots < 0:
        log.error("--slots must be non-negative")
        return 2
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("%s", exc)
        return 2
    except OSError as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
