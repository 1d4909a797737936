"""Integer-indexed network and queue state shared by the policies and the engine.

Queue contents are kept as integers in *ticks*: one packet is ``net.lq``
ticks, where ``lq`` is a common multiple of every ``1/r`` and of the
denominators of ``eta`` and ``gamma/r``.  A transmission over a link of rate
``1/m`` therefore adds exactly ``lq // m`` ticks, and decode thresholds are
exact integer comparisons.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from math import lcm

from .model import NetworkConfig, PatternSet, PolicyParams, Topology


@dataclass
class CompiledNet:
    n: int
    dests: list[int]  # commodity index -> destination node
    links: list[tuple[int, int]]
    src: list[int]
    dst: list[int]
    # 1/r per link, one row per rate table (a single row unless rates depend on the pattern)
    m: list[list[int]]
    patterns: list[frozenset] | None  # None: every subset allowed
    pattern_table: list[int]  # pattern index -> rate table
    lq: int
    big_m: int
    eta_t: int
    gamma: Fraction
    strong: list[bool]
    goff: list[list[int]]  # gamma/r in ticks, per rate table and link
    out: list[list[int]] = field(default_factory=list)
    node_comms: list[list[int]] = field(default_factory=list)

    @property
    def K(self) -> int:
        return len(self.dests)

    @property
    def E(self) -> int:
        return len(self.links)

    def q(self, i: int, k: int) -> int:
        return i * len(self.dests) + k

    def kidx(self, c: int) -> int:
        return self.dests.index(c)

    def eidx(self, i: int, j: int) -> int:
        return self.links.index((i, j))

    @property
    def max_degree(self) -> int:
        nb = [set() for _ in range(self.n + 1)]
        for i, j in self.links:
            nb[i].add(j)
            nb[j].add(i)
        return max((len(s) for s in nb), default=0)


def compile_network(
    topology: Topology,
    patterns: PatternSet | None = None,
    params: PolicyParams | None = None,
    resolution: int = 1,
) -> CompiledNet:
    """Index a topology for fast integer simulation.

    ``resolution`` refines the tick so that callers can load queue values
    with denominators beyond the ones the rates need.
    """
    patterns = patterns or PatternSet.all_subsets()
    params = params or PolicyParams()
    links = list(topology.links)
    base = [int(1 / topology.rates[l]) for l in links]
    tables = [base]
    pattern_list = None
    pattern_table: list[int] = []
    if not patterns.symbolic:
        pattern_list = list(patterns.patterns)
        for idx in range(len(pattern_list)):
            row = [int(1 / patterns.rate(idx, l, topology.rates[l])) for l in links]
            if row in tables:
                pattern_table.append(tables.index(row))
            else:
                tables.append(row)
                pattern_table.append(len(tables) - 1)
    all_m = {m for row in tables for m in row} or {1}
    big_m = lcm(*all_m)
    lq = lcm(big_m, resolution, params.eta.denominator, *((params.gamma * m).denominator for m in all_m))
    strong = [all(row[e] == 1 for row in tables) and not params.uniform_strong for e in range(len(links))]
    net = CompiledNet(
        n=topology.n_nodes,
        dests=list(topology.commodities),
        links=links,
        src=[i for i, _ in links],
        dst=[j for _, j in links],
        m=tables,
        patterns=pattern_list,
        pattern_table=pattern_table,
        lq=lq,
        big_m=big_m,
        eta_t=int(params.eta * lq),
        gamma=params.gamma,
        strong=strong,
        goff=[[int(params.gamma * m * lq) for m in row] for row in tables],
    )
    net.out = [[] for _ in range(net.n + 1)]
    for e, (i, j) in enumerate(links):
        net.out[i].append(e)
    for row in net.out:
        row.sort(key=lambda e: links[e][1])
    net.node_comms = [[k for k, c in enumerate(net.dests) if c != i] for i in range(net.n + 1)]
    return net


def compile_config(config: NetworkConfig) -> CompiledNet:
    return compile_network(config.topology, config.patterns, config.policy)


# -- queue state ----------------------------------------------------------

@dataclass
class TSlotState:
    """Full-packet queues ``Q`` (packets) and per-link accumulators ``acc`` (ticks)."""

    net: CompiledNet
    Q: list[int]
    acc: list[int]
    held: object = None  # the current epoch's TSlotAction
    delivered: list[int] = field(default_factory=list)
    cleared: int = 0  # ticks dropped at epoch ends
    sent: int = 0  # ticks of information transmitted
    decodes: int = 0

    @classmethod
    def empty(cls, net: CompiledNet) -> "TSlotState":
        return cls(net, [0] * ((net.n + 1) * net.K), [0] * net.E, None, [0] * net.K)

    def backlog(self) -> int:
        return sum(self.Q)

    def partial_ticks(self) -> int:
        return sum(self.acc)

    def queues(self) -> dict[tuple[int, int], int]:
        net = self.net
        return {(i, c): self.Q[net.q(i, k)] for i in range(1, net.n + 1) for k, c in enumerate(net.dests) if i != c}

    def partials(self) -> dict[tuple[int, int], Fraction]:
        net = self.net
        return {net.links[e]: Fraction(a, net.lq) for e, a in enumerate(self.acc)}


@dataclass
class VQState:
    """Untransmitted ``U`` per node, committed ``V`` and accumulated ``P`` per link (ticks)."""

    net: CompiledNet
    U: list[int]
    V: list[int]
    P: list[int]
    delivered: list[int] = field(default_factory=list)

    @classmethod
    def empty(cls, net: CompiledNet) -> "VQState":
        size = net.E * net.K
        return cls(net, [0] * ((net.n + 1) * net.K), [0] * size, [0] * size, [0] * net.K)

    def backlog_ticks(self) -> int:
        return sum(self.U) + sum(self.V) + sum(self.P)

    def as_fractions(self):
        net = self.net
        lq = net.lq
        U = {(i, c): Fraction(self.U[net.q(i, k)], lq) for i in range(1, net.n + 1) for k, c in enumerate(net.dests) if i != c}
        V, P = {}, {}
        for e, (i, j) in enumerate(net.links):
            for k, c in enumerate(net.dests):
                if i != c:
                    V[(i, j, c)] = Fraction(self.V[e * net.K + k], lq)
                    P[(i, j, c)] = Fraction(self.P[e * net.K + k], lq)
        return U, V, P


def vq_state_from(net: CompiledNet, U=None, V=None, P=None) -> VQState:
    """Build a VQState from rational maps keyed by (i, c) and (i, j, c)."""
    st = VQState.empty(net)
    for (i, c), x in (U or {}).items():
        st.U[net.q(i, net.kidx(c))] = _ticks(net, x)
    for (i, j, c), x in (V or {}).items():
        st.V[net.eidx(i, j) * net.K + net.kidx(c)] = _ticks(net, x)
    for (i, j, c), x in (P or {}).items():
        st.P[net.eidx(i, j) * net.K + net.kidx(c)] = _ticks(net, x)
    return st


def tslot_state_from(net: CompiledNet, Q=None) -> TSlotState:
    st = TSlotState.empty(net)
    for (i, c), x in (Q or {}).items():
        if int(x) != x or x < 0:
            raise ValueError(f"Q[{i},{c}]={x} must be a non-negative integer")
        st.Q[net.q(i, net.kidx(c))] = int(x)
    return st


def _ticks(net: CompiledNet, x) -> int:
    v = Fraction(x) * net.lq
    if v.denominator != 1:
        raise ValueError(f"{x} is not a multiple of 1/{net.lq}")
    if v < 0:
        raise ValueError(f"negative queue value {x}")
    return int(v)
