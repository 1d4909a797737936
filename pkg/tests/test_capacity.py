import random
from fractions import Fraction as F

import pytest

from conftest import make_config, random_net, two_node
from miabp import capacity as cap
from miabp.model import ConfigError, PatternSet, Topology

ALL = PatternSet.all_subsets()


def replay(cert, topo):
    """Independent check of the region constraints, commodity by commodity."""
    mu, pi, theta, lam = cert.mu, cert.pi, cert.theta, cert.lam
    eps = cert.margin if isinstance(cert.margin, F) else 0
    assert all(v >= 0 for v in mu.values()) and all(v >= 0 for v in pi.values())
    assert sum(pi.values()) <= 1
    rates = {p.nodes: p.rates for p in cert.patterns}
    for c in topo.commodities:
        for i in topo.nodes:
            if i == c:
                continue
            out = sum(mu.get((i, j, c), 0) for j in topo.nodes)
            inn = sum(mu.get((l, i, c), 0) for l in topo.nodes if l != c)
            bonus = eps if (i, c) in cert.margin_flows else 0
            assert inn + lam.get((i, c), 0) + bonus <= out
        for (i, j) in topo.links:
            if i == c:
                continue
            served = sum(pi.get(s, 0) * theta.get((s, i, j, c), 0) * rates[s].get((i, j), 0) for s in rates)
            assert mu.get((i, j, c), 0) <= served
    for s in rates:
        for i in topo.nodes:
            row = sum(v for (s2, a, _, _), v in theta.items() if s2 == s and a == i)
            # a node with nothing it may forward has an empty row
            eligible = topo.out_neighbors(i) and any(c != i for c in topo.commodities)
            assert row == (1 if i in s and eligible else 0) or (row == 0 and not pi.get(s))


def scipy_ray(topo, direction):
    """Float oracle for symbolic patterns: conservation plus a per-node airtime budget."""
    linprog = pytest.importorskip("scipy.optimize").linprog
    comms = topo.commodities
    var = {}
    for (i, j) in topo.links:
        for c in comms:
            if i != c:
                var[(i, j, c)] = len(var)
    rho = len(var)
    a_ub, b_ub = [], []
    for c in comms:
        for i in topo.nodes:
            if i == c:
                continue
            row = [0.0] * (rho + 1)
            for (a, j, cc), k in var.items():
                if cc != c:
                    continue
                if a == i:
                    row[k] -= 1
                if j == i:
                    row[k] += 1
            row[rho] = float(direction.get((i, c), 0))
            a_ub.append(row), b_ub.append(0.0)
    for i in topo.nodes:
        row = [0.0] * (rho + 1)
        for (a, j, c), k in var.items():
            if a == i:
                row[k] = float(1 / topo.rate(a, j))
        a_ub.append(row), b_ub.append(1.0)
    res = linprog([0.0] * rho + [-1.0], A_ub=a_ub, b_ub=b_ub, method="highs")
    return -res.fun if res.status == 0 else float("inf")


# -- small exact cases --------------------------------------------------------

def test_two_node_examples():
    cfg = two_node()
    topo = cfg.topology
    assert cap.is_feasible(topo, ALL, {(1, 2): F(1, 3)})
    assert not cap.is_feasible(topo, ALL, {(1, 2): F(3, 5)})
    m = cap.max_margin(topo, ALL, {(1, 2): F(3, 5)})
    assert not m.feasible and m.margin == F(-1, 10)
    assert cap.max_virtual_margin(topo, ALL, {(1, 2): F(1, 3)}).feasible
    assert cap.max_margin(topo, ALL, {(1, 2): 0}).margin == F(1, 2)


def test_two_node_certificate_and_policy():
    topo = two_node().topology
    cert = cap.capacity_certificate(topo, ALL, {(1, 2): F(1, 3)})
    full = frozenset({1, 2})
    assert cert.feasible and cert.pi[full] == F(2, 3)
    assert cert.theta[(full, 1, 2, 2)] == 1
    pol = cap.extract_randomized_policy(cert, topo)
    assert dict(pol.pattern_probs) == {full: F(2, 3)}
    assert pol.node_choices[(full, 1)] == ((2, 2, F(1)),)
    replay(cert, topo)


def test_zero_rates_give_empty_policy():
    topo = two_node().topology
    cert = cap.capacity_certificate(topo, ALL, {(1, 2): 0})
    assert cap.extract_randomized_policy(cert, topo).idle


def test_degenerate_certificate_rejected():
    topo = two_node().topology
    cert = cap.capacity_certificate(topo, ALL, {(1, 2): F(1, 3)})
    cert.pi = {s: F(0) for s in cert.pi}
    with pytest.raises(cap.InvalidCertificate):
        cap.extract_randomized_policy(cert, topo)


def test_reference_net4(net4):
    topo, rates = net4.topology, net4.arrivals.rates()
    d = cap.symmetric_direction(rates)
    assert cap.ray_boundary(topo, ALL, d) == F(9, 17)
    assert cap.ray_boundary(topo.without_weak_links(), ALL, d) == F(1, 2)
    assert cap.ray_boundary(topo, ALL, d, virtual=True) == F(9, 17)
    half = {k: F(1, 2) for k in rates}
    assert cap.max_margin(topo, ALL, half).margin == F(1, 34)
    corner = cap.max_margin(topo, ALL, {k: F(9, 17) for k in rates})
    assert corner.feasible and corner.margin == 0


def test_reference_net10(net10):
    topo = net10.topology
    d = cap.symmetric_direction(net10.arrivals.rates())
    assert cap.ray_boundary(topo, ALL, d) == F(11, 15)
    assert cap.ray_boundary(topo.without_weak_links(), ALL, d) == F(1, 2)


def test_explicit_patterns_interference():
    # line 1-2-3 where 1 and 2 may not transmit together
    cfg = make_config(3, [(1, 2, 1), (2, 3, 1)], [3], patterns=[[], [1], [2], [3]])
    assert cap.ray_boundary(cfg.topology, cfg.patterns, {(1, 3): 1}) == F(1, 2)
    cfg = make_config(3, [(1, 2, 1), (2, 3, 1)], [3], patterns="all-subsets")
    assert cap.ray_boundary(cfg.topology, cfg.patterns, {(1, 3): 1}) == 1


def test_pattern_dependent_rates():
    cfg = make_config(2, [(1, 2, "1/2")], [2], patterns=[[], [1], [2], [1, 2]],
                      pattern_rates=[{"pattern_index": 1, "a": 1, "b": 2, "rate": "1"}])
    assert cap.ray_boundary(cfg.topology, cfg.patterns, {(1, 2): 1}) == 1
    plain = make_config(2, [(1, 2, "1/2")], [2], patterns=[[], [1], [2], [1, 2]])
    assert cap.ray_boundary(plain.topology, plain.patterns, {(1, 2): 1}) == F(1, 2)


def test_symbolic_with_overrides_rejected():
    topo = two_node().topology
    with pytest.raises(ConfigError):
        cap.build_capacity_lp(topo, PatternSet(None, {(0, (1, 2)): F(1)}), {(1, 2): F(1, 3)})


def test_unbounded_margin_without_flows():
    topo = Topology(2, {}, (2,))
    assert cap.max_margin(topo, ALL, {}).margin == float("inf")


# -- properties on random nets ---------------------------------------------

def test_ray_matches_float_oracle():
    rng = random.Random(11)
    for _ in range(30):
        topo, lam = random_net(rng)
        d = {k: F(1) for k in lam}
        exact = cap.ray_boundary(topo, ALL, d)
        assert abs(float(exact) - scipy_ray(topo, d)) < 1e-7


def test_certificates_replay_exactly():
    rng = random.Random(5)
    for _ in range(30):
        topo, lam = random_net(rng)
        cert = cap.max_margin(topo, ALL, lam)
        if cert.feasible:
            replay(cert, topo)
            assert cap.verify_certificate(cert, topo) == []
        feas = cap.capacity_certificate(topo, ALL, lam)
        assert feas.feasible == cap.is_feasible(topo, ALL, lam)
        if feas.feasible:
            replay(feas, topo)


def test_monotone_and_concave_along_rays():
    rng = random.Random(8)
    for _ in range(20):
        topo, lam = random_net(rng)
        if not cap.is_feasible(topo, ALL, lam):
            continue
        smaller = {k: v * F(rng.randint(0, 4), 4) for k, v in lam.items()}
        assert cap.is_feasible(topo, ALL, smaller)
        if not any(lam.values()):
            continue
        ms = [cap.max_margin(topo, ALL, {k: v * F(r, 4) for k, v in lam.items()}).margin for r in (1, 2, 3, 4)]
        assert all(a >= b for a, b in zip(ms, ms[1:]))
        assert all(2 * ms[k] >= ms[k - 1] + ms[k + 1] for k in (1, 2))


def test_virtual_region_inside_original():
    rng = random.Random(23)
    for _ in range(20):
        topo, lam = random_net(rng)
        v = cap.max_virtual_margin(topo, ALL, lam)
        o = cap.max_margin(topo, ALL, lam)
        if v.feasible:
            assert o.feasible
        if o.feasible and o.margin > 0:
            assert v.margin >= o.margin / (2 * topo.max_degree + 1)


def test_randomized_policy_sums(net4):
    cert = cap.max_margin(net4.topology, ALL, net4.arrivals.rates())
    pol = cap.extract_randomized_policy(cert, net4.topology)
    assert sum(p for _, p in pol.pattern_probs) <= 1
    for row in pol.node_choices.values():
        assert sum(p for _, _, p in row) <= 1
    for hops in pol.routing.values():
        assert sum(p for _, p in hops) == 1


def test_certificate_text(net4):
    text = cap.max_margin(net4.topology, ALL, net4.arrivals.rates()).to_text()
    assert text.startswith("feasible true\nmargin 1/34\n")
