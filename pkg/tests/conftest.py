from fractions import Fraction

import pytest

from miabp.model import Topology, load_config, parse_config, reference_config


def make_config(nodes, links, commodities, arrivals=(), policy=None, horizon=1000, seed=1, patterns=None, **extra):
    """Config from compact tuples: links ``(a, b, rate)``, arrivals ``(node, dest, rate[, dist, a_max])``."""
    tree = {
        "nodes": nodes,
        "links": [{"a": a, "b": b, "rate": str(r)} for a, b, r in links],
        "commodities": [{"dest": c} for c in commodities],
        "arrivals": [
            {"node": a[0], "dest": a[1], "rate": str(a[2]), "dist": a[3] if len(a) > 3 else "bernoulli", "a_max": a[4] if len(a) > 4 else 1}
            for a in arrivals
        ],
        "policy": policy or {"kind": "vq"},
        "sim": {"horizon": horizon, "seed": seed},
    }
    if patterns is None:
        tree["interference_free"] = True
    else:
        tree["patterns"] = patterns
    tree.update(extra)
    return parse_config(tree)


def two_node(rate="1/2", lam="1/3", **kw):
    return make_config(2, [(1, 2, rate)], [2], [(1, 2, lam)], **kw)


def random_net(rng, n_max=5, rates=(Fraction(1), Fraction(1, 2), Fraction(1, 3))):
    n = rng.randint(2, n_max)
    links = {}
    order = list(range(1, n + 1))
    rng.shuffle(order)
    for a, b in zip(order, order[1:]):  # spanning path keeps it connected
        r = rng.choice(rates)
        links[(a, b)] = links[(b, a)] = r
    for a in range(1, n + 1):
        for b in range(a + 1, n + 1):
            if (a, b) not in links and rng.random() < 0.3:
                r = rng.choice(rates)
                links[(a, b)] = links[(b, a)] = r
    dests = rng.sample(range(1, n + 1), rng.randint(1, min(2, n)))
    topo = Topology(n, links, tuple(dests))
    lam = {}
    for c in dests:
        for i in rng.sample([v for v in range(1, n + 1) if v != c], rng.randint(1, min(2, n - 1))):
            lam[(i, c)] = Fraction(rng.randint(0, 6), 10)
    return topo, lam


@pytest.fixture(scope="session")
def net4():
    return load_config(reference_config("net4"))


@pytest.fixture(scope="session")
def net10():
    return load_config(reference_config("net10"))



def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod and mod.REPORT:
        terminalreporter.section("acceptance criteria")
        for n in sorted(mod.REPORT):
            terminalreporter.write_line(mod.REPORT[n])
