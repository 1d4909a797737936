"""Stability-region LPs for networks with information accumulation.

Two regions are built here: the region of the original network and the
region of the constructed network with three flow layers per link
(untransmitted -> committed -> accumulated).  Everything is solved exactly
with :mod:`miabp.lp`, so corner points such as 9/17 are classified without
tolerance.

The pattern/routing product ``pi_s * theta_ij^c(s)`` is bilinear.  Only its
sum over commodities enters the link constraint, so the LP carries one
variable ``phi_ij(s) = pi_s * sum_c theta_ij^c(s)`` per link and pattern and
the commodity split is recovered afterwards in proportion to the flows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping

from .lp import OPTIMAL, UNBOUNDED, LinearProgram, LPResult
from .model import ConfigError, Link, PatternSet, Topology

INF = math.inf

Flow = tuple[int, int]  # (source node, destination commodity)


@dataclass(frozen=True)
class LPPattern:
    nodes: frozenset[int]
    rates: Mapping[Link, Fraction]


def lp_patterns(topology: Topology, patterns: PatternSet) -> list[LPPattern]:
    """Patterns that need an LP column.

    With pattern-independent rates only maximal patterns matter: a schedule
    on a subset is the same schedule on the superset with the extra nodes
    idle.  The symbolic all-subsets family thus needs just the full set.
    """
    base = topology.rates
    if patterns.symbolic:
        if patterns.overrides:
            raise ConfigError("pattern-dependent rates need an explicit pattern list")
        return [LPPattern(frozenset(topology.nodes), base)]
    if not patterns.overrides:
        return [LPPattern(s, base) for s in patterns.maximal()]
    out = []
    for k, s in enumerate(patterns.patterns):
        rates = {l: patterns.rate(k, l, r) for l, r in base.items()}
        out.append(LPPattern(s, rates))
    return out


def _flows(topology: Topology) -> list[tuple[int, int, int]]:
    """Flow variables (i, j, c); nothing leaves a destination (mu_ci^c = 0)."""
    return [(i, j, c) for c in topology.commodities for (i, j) in topology.links if i != c]


def _active_flows(topology: Topology, lam: Mapping[Flow, Fraction], mode: str) -> list[Flow]:
    if mode == "all":
        return [(i, c) for c in topology.commodities for i in topology.nodes if i != c]
    return sorted(k for k, v in lam.items() if v > 0)


@dataclass
class CapacityLP:
    """An assembled region LP plus the bookkeeping to read its solution."""

    lp: LinearProgram
    topology: Topology
    patterns: list[LPPattern]
    lam: dict[Flow, Fraction]
    layers: int = 1
    margin_var: str | None = None
    margin_flows: tuple[Flow, ...] = ()
    ray_var: str | None = None

    def solve(self) -> LPResult:
        return self.lp.solve()


def _lam_dict(topology: Topology, lam) -> dict[Flow, Fraction]:
    out = {}
    for (i, c), v in dict(lam or {}).items():
        v = Fraction(v)
        if v < 0:
            raise ValueError(f"negative arrival rate at {(i, c)}")
        if c not in topology.commodities:
            raise ValueError(f"arrival {(i, c)} targets an undeclared commodity")
        if i == c:
            if v:
                raise ValueError(f"arrival {(i, c)} is already at its destination")
            continue
        out[(i, c)] = v
    return out


def _build(topology, patterns, lam, *, layers, margin_flows=None, ray=None) -> CapacityLP:
    lam = _lam_dict(topology, lam)
    pats = lp_patterns(topology, patterns)
    lp = LinearProgram(maximize=True)
    flows = _flows(topology)
    mu = {}
    for v in range(1, layers + 1):
        for f in flows:
            mu[(v,) + f] = lp.add_var(("mu", v) + f if layers > 1 else ("mu",) + f)
    pi = [lp.add_var(("pi", k)) for k in range(len(pats))]
    phi = {}
    for k, p in enumerate(pats):
        for (i, j), r in p.rates.items():
            if i in p.nodes and r > 0:
                phi[(k, i, j)] = lp.add_var(("phi", k, i, j))

    eps = None
    if margin_flows is not None:
        eps = lp.add_var("eps", free=True)
    rho = None
    if ray is not None:
        rho = lp.add_var("rho")

    first, last = 1, layers
    for c in topology.commodities:
        for i in topology.nodes:
            if i == c:
                continue
            row = {}
            for j in topology.out_neighbors(i):
                row[mu[(first, i, j, c)]] = row.get(mu[(first, i, j, c)], 0) + 1
            for l in topology.nodes:
                if (l, i) in topology.rates and l != c:
                    row[mu[(last, l, i, c)]] = row.get(mu[(last, l, i, c)], 0) - 1
            if rho is not None:
                d = ray.get((i, c), 0)
                if d:
                    row[rho] = -Fraction(d)
                rhs = 0
            else:
                rhs = lam.get((i, c), 0)
            if eps is not None and (i, c) in margin_flows:
                row[eps] = -1
            lp.add_constraint(row, ">=", rhs)
    for v in range(1, layers):
        for f in flows:
            lp.add_constraint({mu[(v + 1,) + f]: 1, mu[(v,) + f]: -1}, ">=", 0)
    link_layer = 2 if layers == 3 else 1
    for (i, j) in topology.links:
        row = {mu[(link_layer, i, j, c)]: 1 for c in topology.commodities if i != c}
        for k, p in enumerate(pats):
            if (k, i, j) in phi:
                row[phi[(k, i, j)]] = -p.rates[(i, j)]
        lp.add_constraint(row, "<=", 0)
    for k, p in enumerate(pats):
        for i in sorted(p.nodes):
            row = {phi[(k, i, j)]: 1 for j in topology.out_neighbors(i) if (k, i, j) in phi}
            if row:
                row[pi[k]] = -1
                lp.add_constraint(row, "<=", 0)
    lp.add_constraint({v: 1 for v in pi}, "<=", 1)

    out = CapacityLP(lp, topology, pats, lam, layers)
    if eps is not None:
        out.margin_var = eps
        out.margin_flows = tuple(margin_flows)
        lp.set_objective({eps: 1})
    elif rho is not None:
        out.ray_var = rho
        lp.set_objective({rho: 1})
    else:
        # smallest airtime that supports lam
        lp.set_objective({v: -1 for v in pi})
    return out


def build_capacity_lp(topology: Topology, patterns: PatternSet, lam) -> CapacityLP:
    """LP whose feasibility is equivalent to ``lam`` lying in the region."""
    return _build(topology, patterns, lam, layers=1)


def build_virtual_capacity_lp(topology: Topology, patterns: PatternSet, lam) -> CapacityLP:
    """LP for the constructed network with layered flows mu1 <= mu2 <= mu3."""
    return _build(topology, patterns, lam, layers=3)


@dataclass
class CapacityCertificate:
    feasible: bool
    margin: Fraction | float
    mu: dict[tuple[int, int, int], Fraction] = field(default_factory=dict)
    pi: dict[frozenset, Fraction] = field(default_factory=dict)
    theta: dict[tuple[frozenset, int, int, int], Fraction] = field(default_factory=dict)
    # airtime share of node i on link (i, j) under each pattern, before any padding
    phi: dict[tuple[frozenset, int, int], Fraction] = field(default_factory=dict)
    patterns: list[LPPattern] = field(default_factory=list)
    lam: dict[Flow, Fraction] = field(default_factory=dict)
    margin_flows: tuple[Flow, ...] = ()

    def to_text(self) -> str:
        """Plain-text export with exact rationals."""
        lines = [f"feasible {str(self.feasible).lower()}", f"margin {_fmt(self.margin)}"]
        for (i, c), v in sorted(self.lam.items()):
            lines.append(f"lambda {i} {c} {v}")
        for (i, j, c), v in sorted(self.mu.items()):
            if v:
                lines.append(f"mu {i} {j} {c} {v}")
        for s, v in self.pi.items():
            if v:
                lines.append(f"pi {{{','.join(map(str, sorted(s)))}}} {v}")
        for (s, i, j, c), v in self.theta.items():
            if v and self.pi.get(s):
                lines.append(f"theta {{{','.join(map(str, sorted(s)))}}} {i} {j} {c} {v}")
        return "\n".join(lines) + "\n"


def _fmt(x) -> str:
    if isinstance(x, float) and math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return str(x)


def _certificate(cap: CapacityLP, res: LPResult, margin) -> CapacityCertificate:
    topo = cap.topology
    layer = 2 if cap.layers == 3 else 1

    def mu_name(i, j, c):
        return ("mu", layer, i, j, c) if cap.layers > 1 else ("mu", i, j, c)

    mu = {(i, j, c): res[mu_name(i, j, c)] for (i, j, c) in _flows(topo)}
    pi, theta, phi = {}, {}, {}
    for k, p in enumerate(cap.patterns):
        s = p.nodes
        ps = res[("pi", k)]
        pi[s] = pi.get(s, Fraction(0)) + ps
        for i in sorted(s):
            outs = [j for j in topo.out_neighbors(i) if p.rates.get((i, j), 0) > 0]
            choices = [(j, c) for j in outs for c in topo.commodities if i != c]
            if not choices:
                continue
            if ps == 0:
                for j, c in choices:
                    theta[(s, i, j, c)] = Fraction(1, len(choices))
                continue
            used = Fraction(0)
            for j in outs:
                share = res[("phi", k, i, j)]
                phi[(s, i, j)] = share
                total = sum((mu[(i, j, c)] for c in topo.commodities if i != c), Fraction(0))
                for c in topo.commodities:
                    if i == c:
                        continue
                    if total:
                        t = share * mu[(i, j, c)] / (total * ps)
                    else:
                        t = Fraction(0)
                    theta[(s, i, j, c)] = t
                    used += t
            # pad to a full distribution; extra airtime only loosens the link rows
            j, c = choices[0]
            theta[(s, i, j, c)] += 1 - used
    return CapacityCertificate(
        feasible=True,
        margin=margin,
        mu=mu,
        pi=pi,
        theta=theta,
        phi=phi,
        patterns=cap.patterns,
        lam=dict(cap.lam),
        margin_flows=cap.margin_flows,
    )


def is_feasible(topology: Topology, patterns: PatternSet, lam) -> bool:
    return build_capacity_lp(topology, patterns, lam).solve().status == OPTIMAL


def capacity_certificate(topology: Topology, patterns: PatternSet, lam) -> CapacityCertificate:
    """Feasibility check returning a certificate that uses the least airtime."""
    cap = build_capacity_lp(topology, patterns, lam)
    res = cap.solve()
    if res.status != OPTIMAL:
        return CapacityCertificate(False, Fraction(-1), lam=dict(cap.lam))
    return _certificate(cap, res, Fraction(0))


def _margin(layers: int, topology, patterns, lam, all_entries: bool) -> CapacityCertificate:
    lam_d = _lam_dict(topology, lam)
    flows = _active_flows(topology, lam_d, "all" if all_entries else "active")
    if not flows and not all_entries:
        # no active flow: measure headroom for the declared streams instead
        flows = sorted(k for k in lam_d if k[0] != k[1])
    if not flows:
        cap = _build(topology, patterns, lam_d, layers=layers)
        return _certificate(cap, cap.solve(), INF)
    cap = _build(topology, patterns, lam_d, layers=layers, margin_flows=flows)
    res = cap.solve()
    # every margin row is capped by link rates, so the optimum is finite
    assert res.status == OPTIMAL, res.status
    eps = res["eps"]
    if eps < 0:
        return CapacityCertificate(False, eps, lam=dict(cap.lam), margin_flows=cap.margin_flows)
    return _certificate(cap, res, eps)


def max_margin(topology: Topology, patterns: PatternSet, lam, all_entries: bool = False) -> CapacityCertificate:
    """Largest eps with ``lam + eps * e`` in the region.

    ``e`` is the indicator of flows with positive rate (or of every
    non-destination entry with ``all_entries``).  A negative optimum is
    reported as infeasible with ``margin`` holding the (negative) distance.
    """
    return _margin(1, topology, patterns, lam, all_entries)


def max_virtual_margin(topology: Topology, patterns: PatternSet, lam, all_entries: bool = False) -> CapacityCertificate:
    return _margin(3, topology, patterns, lam, all_entries)


def ray_boundary(topology: Topology, patterns: PatternSet, direction, virtual: bool = False) -> Fraction | float:
    """Largest rho with ``rho * direction`` in the region (exact, one LP)."""
    d = _lam_dict(topology, direction)
    if not any(d.values()):
        return INF
    cap = _build(topology, patterns, {}, layers=3 if virtual else 1, ray=d)
    res = cap.solve()
    if res.status == UNBOUNDED:
        return INF
    assert res.status == OPTIMAL, res.status
    return res["rho"]


def symmetric_direction(flows) -> dict[Flow, Fraction]:
    return {f: Fraction(1) for f in flows}


def verify_certificate(cert: CapacityCertificate, topology: Topology) -> list[str]:
    """Replay a certificate through the region constraints; returns failures.

    Conservation is checked with the certificate's margin added to its
    margin flows, so a max-margin certificate is replayed at ``lam + eps``.
    """
    bad = []
    if not cert.feasible:
        return ["certificate is not feasible"]
    mu, lam = cert.mu, cert.lam
    eps = cert.margin if isinstance(cert.margin, Fraction) else Fraction(0)
    for (i, j, c), v in mu.items():
        if v < 0:
            bad.append(f"negative flow mu[{i},{j}]^{c}")
    for c in topology.commodities:
        for i in topology.nodes:
            if i == c:
                continue
            out = sum((mu.get((i, j, c), 0) for j in topology.out_neighbors(i)), Fraction(0))
            inn = sum((mu.get((l, i, c), 0) for l in topology.nodes if l != c), Fraction(0))
            need = inn + lam.get((i, c), 0) + (eps if (i, c) in cert.margin_flows else 0)
            if need > out:
                bad.append(f"conservation at node {i} commodity {c}: {need} > {out}")
    for (i, j) in topology.links:
        used = sum((mu.get((i, j, c), 0) for c in topology.commodities if i != c), Fraction(0))
        served = Fraction(0)
        for p in cert.patterns:
            s = p.nodes
            for c in topology.commodities:
                served += cert.pi.get(s, 0) * cert.theta.get((s, i, j, c), 0) * p.rates.get((i, j), 0)
        if used > served:
            bad.append(f"link ({i},{j}): flow {used} > service {served}")
    total = Fraction(0)
    seen = set()
    for p in cert.patterns:
        s = p.nodes
        if s in seen:
            continue
        seen.add(s)
        ps = cert.pi.get(s, 0)
        if ps < 0:
            bad.append(f"negative pattern probability {sorted(s)}")
        total += ps
        for i in topology.nodes:
            row = [v for (s2, a, j, c), v in cert.theta.items() if s2 == s and a == i]
            if any(v < 0 for v in row):
                bad.append(f"negative theta at node {i}")
            if i not in s and any(row):
                bad.append(f"theta nonzero for idle node {i} in {sorted(s)}")
            if i in s and row and sum(row) != 1:
                bad.append(f"theta at node {i} in {sorted(s)} sums to {sum(row)}")
    if total > 1:
        bad.append(f"pattern probabilities sum to {total} > 1")
    return bad


# -- stationary randomized policy -----------------------------------------

@dataclass(frozen=True)
class RandomizedPolicy:
    """Stationary schedule drawn from a certificate.

    Each slot one pattern is drawn from ``pattern_probs`` (the leftover mass
    means "all idle").  Every node of the drawn pattern then draws a
    ``(j, c)`` pair from its row of ``node_choices`` (leftover mass: idle).
    Packets pick their next hop on arrival at a node from ``routing``.
    """

    pattern_probs: tuple[tuple[frozenset, Fraction], ...]
    node_choices: Mapping[tuple[frozenset, int], tuple[tuple[int, int, Fraction], ...]]
    routing: Mapping[tuple[int, int], tuple[tuple[int, Fraction], ...]]
    pattern_rates: Mapping[frozenset, Mapping[Link, Fraction]] = field(default_factory=dict)

    @property
    def idle(self) -> bool:
        return not any(p for _, p in self.pattern_probs)


class InvalidCertificate(ValueError):
    pass


def extract_randomized_policy(cert: CapacityCertificate, topology: Topology) -> RandomizedPolicy:
    if not cert.feasible:
        raise InvalidCertificate("certificate is infeasible")
    lam_positive = any(v > 0 for v in cert.lam.values())
    if lam_positive and not any(cert.pi.values()):
        raise InvalidCertificate("pattern distribution is all zero but arrivals are positive")
    patterns = tuple((s, p) for s, p in cert.pi.items() if p > 0)
    choices = {}
    for s, ps in patterns:
        for i in sorted(s):
            row = []
            for j in topology.out_neighbors(i):
                share = cert.phi.get((s, i, j), Fraction(0))
                total = sum((cert.mu[(i, j, c)] for c in topology.commodities if c != i), Fraction(0))
                if not share or not total:
                    continue
                for c in topology.commodities:
                    if c != i and cert.mu[(i, j, c)]:
                        row.append((j, c, share * cert.mu[(i, j, c)] / (total * ps)))
            if row:
                choices[(s, i)] = tuple(row)
    routing = {}
    for c in topology.commodities:
        for i in topology.nodes:
            if i == c:
                continue
            outs = [(j, cert.mu[(i, j, c)]) for j in topology.out_neighbors(i) if cert.mu[(i, j, c)] > 0]
            total = sum((m for _, m in outs), Fraction(0))
            if total:
                routing[(i, c)] = tuple((j, m / total) for j, m in outs)
    rates = {p.nodes: dict(p.rates) for p in cert.patterns}
    return RandomizedPolicy(patterns, choices, routing, rates)
