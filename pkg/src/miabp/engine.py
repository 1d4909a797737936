"""Slot-stepped simulation.

Each slot runs: (1) decision from the state at ``t``, (2) simultaneous
state update, (3) exogenous arrivals, (4) trace record.  All queue
arithmetic is integer (see :mod:`miabp.state`); floats appear only in
reports.

Randomness comes from numpy's Philox counter-based generator.  Every
arrival stream and the randomized policy draw from their own substream,
``SeedSequence(seed, spawn_key=...)``, so a run depends only on its seed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from math import lcm
from typing import Mapping

import numpy as np

from . import capacity
from .metrics import DriftReport, TSlotDriftMonitor, VQDriftMonitor
from .model import ArrivalSpec, ArrivalStream, NetworkConfig, PolicyParams
from .policy import BETA1, BYPASS, TSlotAction, VQAction, tslot_core, vq_core
from .state import CompiledNet, TSlotState, VQState, compile_config

log = logging.getLogger(__name__)

CHUNK = 8192
POLICY_KEY = (0,)
ARRIVAL_KEY = 1


class ContractViolation(RuntimeError):
    """An action broke a per-slot constraint; this is a programming error."""


# -- random numbers -------------------------------------------------------

def make_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


def _draw(stream: ArrivalStream, rng: np.random.Generator, n: int) -> np.ndarray:
    """``n`` i.i.d. arrival counts for one stream, exact in the rational rate."""
    rate = Fraction(stream.rate)
    if stream.dist == "bernoulli":
        if not 0 <= rate <= 1:
            raise ValueError(f"Bernoulli rate {rate} outside [0, 1]")
        if rate == 0:
            return np.zeros(n, dtype=np.int64)
        return (rng.integers(0, rate.denominator, size=n) < rate.numerator).astype(np.int64)
    if stream.dist == "batch":
        a = stream.a_max
        if not 0 <= rate <= a:
            raise ValueError(f"batch rate {rate} outside [0, {a}]")
        # sum of a_max Bernoulli(rate / a_max) draws: support {0..a_max}, mean rate
        q = rate.denominator * a
        draws = rng.integers(0, q, size=(n, a)) < rate.numerator
        return draws.sum(axis=1).astype(np.int64)
    raise ValueError(f"unknown arrival distribution {stream.dist!r}")


def sample_arrivals(spec: ArrivalSpec, rng: np.random.Generator, n: int | None = None):
    """Arrival counts per (node, dest): one slot (ints) or ``n`` slots (arrays)."""
    out = {}
    for s in spec.streams:
        x = _draw(s, rng, 1 if n is None else n)
        key = (s.node, s.dest)
        out[key] = out.get(key, 0) + (int(x[0]) if n is None else x)
    return out


class ArrivalSource:
    """Per-stream substreams generated in chunks; yields one slot at a time."""

    def __init__(self, spec: ArrivalSpec, net: CompiledNet, seed: int):
        self.streams = []
        for s in spec.streams:
            rng = make_rng(seed, ARRIVAL_KEY, s.node, s.dest)
            self.streams.append((net.q(s.node, net.kidx(s.dest)), s, rng))
        self._buf: list = []
        self._pos = CHUNK

    def _refill(self):
        self._buf = [(q, _draw(s, rng, CHUNK).tolist()) for q, s, rng in self.streams]
        self._pos = 0

    def next(self) -> list[tuple[int, int]]:
        if self._pos >= CHUNK:
            self._refill()
        p = self._pos
        self._pos += 1
        return [(q, a[p]) for q, a in self._buf if a[p]]


def _arrival_list(net: CompiledNet, arrivals) -> list[tuple[int, int]]:
    if arrivals is None:
        return []
    if isinstance(arrivals, Mapping):
        return [(net.q(i, net.kidx(c)), int(n)) for (i, c), n in arrivals.items() if n]
    return list(arrivals)


# -- state updates --------------------------------------------------------

def step_tslot(state: TSlotState, action: TSlotAction, arrivals=None, end_of_epoch: bool = False) -> TSlotState:
    """Apply one slot of a held T-slot pairing, then arrivals, then (optionally) clearing."""
    net = state.net
    K, lq = net.K, net.lq
    Q, acc = state.Q, state.acc
    mrow = net.m[action.table]
    incoming = []
    seen = set()
    for i, e, k in action.pairs:
        if i in seen or net.src[e] != i:
            raise ContractViolation(f"node {i} has more than one pairing or a foreign link")
        seen.add(i)
        qi = i * K + k
        if Q[qi] > 0:
            step = lq // mrow[e]
            a = acc[e] + step
            state.sent += step
            if a >= lq:
                a = 0
                Q[qi] -= 1
                state.decodes += 1
                j = net.dst[e]
                if net.dests[k] == j:
                    state.delivered[k] += 1
                else:
                    incoming.append(j * K + k)
            acc[e] = a
    for q in incoming:
        Q[q] += 1
    for q, n in _arrival_list(net, arrivals):
        Q[q] += n
    if end_of_epoch:
        state.cleared += sum(acc)
        for e in range(len(acc)):
            acc[e] = 0
    return state


def step_vq(state: VQState, action: VQAction, arrivals=None) -> VQState:
    """Simultaneous update of U, V, P from the state at ``t`` (decodes use P(t))."""
    net = state.net
    K, lq = net.K, net.lq
    U, V, P = state.U, state.V, state.P
    dst, dests = net.dst, net.dests
    incoming = []
    for e, k in action.decodes:
        idx = e * K + k
        if P[idx] < lq:
            raise ContractViolation(f"decode on link {net.links[e]} with P below one packet")
        P[idx] -= lq
        j = dst[e]
        if dests[k] == j:
            state.delivered[k] += 1
        else:
            incoming.append(j * K + k)
    mrow = net.m[action.table]
    seen = set()
    for i, e, k, mode in action.transmit:
        if i in seen or net.src[e] != i:
            raise ContractViolation(f"node {i} transmits more than once or on a foreign link")
        seen.add(i)
        qi = i * K + k
        if mode == BYPASS:
            if U[qi] >= lq:
                U[qi] -= lq
                j = dst[e]
                if dests[k] == j:
                    state.delivered[k] += 1
                else:
                    incoming.append(j * K + k)
            continue
        idx = e * K + k
        v = V[idx]
        if mode == BETA1 and U[qi] > 0:
            U[qi] -= lq
            v += lq
        step = lq // mrow[e]
        d = step if v >= step else v
        V[idx] = v - d
        P[idx] += d
    for q in incoming:
        U[q] += lq
    for q, n in _arrival_list(net, arrivals):
        U[q] += n * lq
    return state


# -- results --------------------------------------------------------------

@dataclass
class RunResult:
    """Per-slot series (index = slot) and end-of-run totals.

    ``backlog`` is the total queue content after slot t in packets: sum Q for
    T-slot, sum U+V+P for the virtual-queue policies, queued packets for the
    randomized policy.  ``partial`` (T-slot only) is the undecoded
    information held in link accumulators and ``cleared`` the cumulative
    information dropped at epoch ends, both in ticks of ``1/lq`` packet.
    """

    label: str
    kind: str
    horizon: int
    lq: int
    backlog: np.ndarray
    delivered: np.ndarray
    cleared: np.ndarray
    partial: np.ndarray | None
    arrivals: dict[tuple[int, int], int]
    delivered_by_commodity: dict[int, int]
    rates: dict[tuple[int, int], Fraction]
    drift: DriftReport | None = None
    queue_names: list[str] = field(default_factory=list)
    queue_rows: list[tuple[int, list]] = field(default_factory=list)
    margin: Fraction | float | None = None

    def flow_deliveries(self) -> dict[tuple[int, int], float]:
        """Deliveries per (source, dest), split by each source's share of arrivals."""
        out = {}
        for c, d in self.delivered_by_commodity.items():
            total = sum(a for (i, cc), a in self.arrivals.items() if cc == c)
            for (i, cc), a in self.arrivals.items():
                if cc == c:
                    out[(i, c)] = d * a / total if total else 0.0
        return out

    def delivery_rates(self) -> dict[tuple[int, int], float]:
        if not self.horizon:
            return {k: 0.0 for k in self.arrivals}
        return {k: v / self.horizon for k, v in self.flow_deliveries().items()}


def _queue_names(net: CompiledNet, kind: str) -> list[str]:
    names = []
    for i in range(1, net.n + 1):
        for k in net.node_comms[i]:
            names.append(("Q" if kind == "tslot" else "U") + f"_{i}_{net.dests[k]}")
    if kind == "tslot":
        names += [f"acc_{i}_{j}" for i, j in net.links]
    elif kind != "randomized":
        for e, (i, j) in enumerate(net.links):
            for k in net.node_comms[i]:
                names += [f"V_{i}_{j}_{net.dests[k]}", f"P_{i}_{j}_{net.dests[k]}"]
    return names


def _snapshot(net: CompiledNet, kind: str, st) -> list:
    lq = net.lq
    K = net.K
    row = []
    if kind == "tslot":
        for i in range(1, net.n + 1):
            row += [st.Q[i * K + k] for k in net.node_comms[i]]
        row += [Fraction(a, lq) for a in st.acc]
    elif kind == "randomized":
        for i in range(1, net.n + 1):
            row += [st.node_backlog(i, k) for k in net.node_comms[i]]
    else:
        for i in range(1, net.n + 1):
            row += [Fraction(st.U[i * K + k], lq) for k in net.node_comms[i]]
        for e in range(net.E):
            for k in net.node_comms[net.src[e]]:
                row += [Fraction(st.V[e * K + k], lq), Fraction(st.P[e * K + k], lq)]
    return row


def _check_conservation(net, kind, st, arrived: int, t: int):
    lq = net.lq
    delivered = sum(st.delivered)
    if kind == "tslot":
        content = sum(st.Q)
        if arrived != content + delivered:
            raise AssertionError(f"slot {t}: packet count {arrived} != {content} + {delivered}")
        if st.sent != st.decodes * lq + sum(st.acc) + st.cleared:
            raise AssertionError(f"slot {t}: information sent does not match decodes + partials + cleared")
    elif kind == "randomized":
        content = st.backlog()
        if arrived != content + delivered:
            raise AssertionError(f"slot {t}: packet count {arrived} != {content} + {delivered}")
    else:
        content = st.backlog_ticks()
        if arrived * lq != content + delivered * lq:
            raise AssertionError(f"slot {t}: content {content}/{lq} + {delivered} != arrivals {arrived}")
        if min(st.U) < 0 or min(st.V) < 0 or min(st.P) < 0:
            raise AssertionError(f"slot {t}: negative queue")


def run(
    config: NetworkConfig,
    policy: PolicyParams | str | None = None,
    *,
    monitor: bool = False,
    record_queues: bool = False,
    thin: int = 1,
    check: bool = False,
    certificate: capacity.CapacityCertificate | None = None,
) -> RunResult:
    """Simulate ``config.horizon`` slots.

    ``monitor`` evaluates the sample-path drift inequality every slot (VQ)
    or epoch (T-slot); ``check`` asserts conservation and non-negativity
    every slot; ``record_queues`` keeps every ``thin``-th queue snapshot.
    """
    if isinstance(policy, str):
        policy = PolicyParams(kind=policy, T=config.policy.T, eta=config.policy.eta, gamma=config.policy.gamma)
    params = policy or config.policy
    config = config.with_overrides(kind=params.kind, T=params.T, eta=params.eta, gamma=params.gamma, uniform_strong=params.uniform_strong)
    net = compile_config(config)
    kind = params.kind
    horizon = config.horizon
    source = ArrivalSource(config.arrivals, net, config.seed)
    a_max = config.arrivals.a_max
    thin = max(1, int(thin))

    backlog = np.zeros(horizon, dtype=np.int64)
    delivered = np.zeros(horizon, dtype=np.int64)
    cleared = np.zeros(horizon, dtype=np.int64)
    partial = np.zeros(horizon, dtype=np.int64) if kind == "tslot" else None
    queue_rows = []
    arrived_by_q: dict[int, int] = {}
    drift = None
    margin = None

    if kind == "tslot":
        st = TSlotState.empty(net)
        mon = TSlotDriftMonitor(net, params.T, a_max) if monitor else None
        T = params.T
        arrived = 0
        for t in range(horizon):
            if t % T == 0:
                st.held = tslot_core(net, st.Q, t // T)
                if mon:
                    mon.epoch_start(st, st.held)
            arr = source.next()
            step_tslot(st, st.held, arr, end_of_epoch=(t + 1) % T == 0)
            for q, n in arr:
                arrived += n
                arrived_by_q[q] = arrived_by_q.get(q, 0) + n
            if mon:
                mon.arrivals(arr)
                if (t + 1) % T == 0:
                    mon.epoch_end(st)
            d = sum(st.delivered)
            backlog[t] = arrived - d
            delivered[t] = d
            cleared[t] = st.cleared
            partial[t] = sum(st.acc)
            if check:
                _check_conservation(net, kind, st, arrived, t)
            if record_queues and t % thin == 0:
                queue_rows.append((t, _snapshot(net, kind, st)))
        drift = mon.report() if mon else None
    elif kind in ("vq", "vq-enhanced"):
        enhanced = kind == "vq-enhanced"
        st = VQState.empty(net)
        mon = VQDriftMonitor(net, a_max) if monitor else None
        arrived = 0
        for t in range(horizon):
            action = vq_core(net, st, enhanced)
            arr = source.next()
            if mon:
                mon.pre(st, action, arr)
            step_vq(st, action, arr)
            if mon:
                mon.post(st)
            for q, n in arr:
                arrived += n
                arrived_by_q[q] = arrived_by_q.get(q, 0) + n
            d = sum(st.delivered)
            backlog[t] = arrived - d
            delivered[t] = d
            if check:
                _check_conservation(net, kind, st, arrived, t)
            if record_queues and t % thin == 0:
                queue_rows.append((t, _snapshot(net, kind, st)))
        drift = mon.report() if mon else None
    elif kind == "randomized":
        cert = certificate or capacity.max_margin(config.topology, config.patterns, config.arrivals.rates())
        margin = cert.margin
        pol = capacity.extract_randomized_policy(cert, config.topology)
        st = RandomizedState(net, pol, config.seed)
        arrived = 0
        for t in range(horizon):
            arr = source.next()
            st.step(arr)
            for q, n in arr:
                arrived += n
                arrived_by_q[q] = arrived_by_q.get(q, 0) + n
            d = sum(st.delivered)
            backlog[t] = arrived - d
            delivered[t] = d
            if check:
                _check_conservation(net, kind, st, arrived, t)
            if record_queues and t % thin == 0:
                queue_rows.append((t, _snapshot(net, kind, st)))
    else:
        raise ValueError(f"unknown policy kind {kind!r}")

    K = net.K
    arrivals = {(s.node, s.dest): 0 for s in config.arrivals.streams}
    for q, n in arrived_by_q.items():
        arrivals[(q // K, net.dests[q % K])] = n
    return RunResult(
        label=params.label,
        kind=kind,
        horizon=horizon,
        lq=net.lq,
        backlog=backlog,
        delivered=delivered,
        cleared=cleared,
        partial=partial,
        arrivals=arrivals,
        delivered_by_commodity={c: st.delivered[k] for k, c in enumerate(net.dests)},
        rates=config.arrivals.rates(),
        drift=drift,
        queue_names=_queue_names(net, kind) if record_queues else [],
        queue_rows=queue_rows,
        margin=margin,
    )


# -- stationary randomized policy -----------------------------------------

class _Sampler:
    """Exact draws from a finite rational distribution (leftover mass -> None)."""

    LIMIT = 1 << 62

    def __init__(self, items: list[tuple[object, Fraction]]):
        den = lcm(1, *(p.denominator for _, p in items))
        if den > self.LIMIT:
            # round down onto a 2^62 grid; the lost mass becomes idle time
            den = self.LIMIT
        cum, acc = [], 0
        for item, p in items:
            acc += int(p * den)
            cum.append((acc, item))
        self.den = den
        self.cum = cum

    def pick(self, u: int):
        for bound, item in self.cum:
            if u < bound:
                return item
        return None


def lq_div(lq: int, rate: Fraction) -> int:
    """Ticks added by one slot at ``rate`` (exact because ``1/rate`` divides ``lq``)."""
    x = lq * rate
    assert x.denominator == 1
    return int(x)


class RandomizedState:
    """Packets are routed to a next hop on arrival at a node and wait in per-link queues.

    Accumulated information for the head packet of each (link, commodity)
    queue is kept until it decodes, since that packet never changes its
    forwarder.
    """

    def __init__(self, net: CompiledNet, policy: capacity.RandomizedPolicy, seed: int):
        self.net = net
        K = net.K
        self.lq = net.lq
        self.link_q = [0] * (net.E * K)
        self.acc = [0] * (net.E * K)
        self.stranded = [0] * ((net.n + 1) * K)
        self.delivered = [0] * K
        self.pattern = _Sampler([(s, p) for s, p in policy.pattern_probs])
        self.step_of = {
            s: {net.eidx(*l): lq_div(self.lq, r) for l, r in policy.pattern_rates[s].items() if r > 0}
            for s, _ in policy.pattern_probs
        }
        self.choices = {}
        for (s, i), row in policy.node_choices.items():
            self.choices[(s, i)] = _Sampler([((net.eidx(i, j), net.kidx(c)), p) for j, c, p in row])
        self.routing = {}
        for (i, c), row in policy.routing.items():
            self.routing[net.q(i, net.kidx(c))] = _Sampler([(net.eidx(i, j), p) for j, p in row])
        self.rng_slot = make_rng(seed, *POLICY_KEY, 0)
        self.rng_route = make_rng(seed, *POLICY_KEY, 1)

    def node_backlog(self, i: int, k: int) -> int:
        net = self.net
        return self.stranded[i * net.K + k] + sum(self.link_q[e * net.K + k] for e in net.out[i])

    def backlog(self) -> int:
        return sum(self.link_q) + sum(self.stranded)

    def _uniform(self, den: int) -> int:
        return int(self.rng_route.integers(0, den))

    def _route(self, q: int, n: int = 1):
        net = self.net
        sampler = self.routing.get(q)
        k = q % net.K
        for _ in range(n):
            if sampler is None:
                self.stranded[q] += 1
                continue
            e = sampler.pick(self._uniform(sampler.den))
            if e is None:
                self.stranded[q] += 1
            else:
                self.link_q[e * net.K + k] += 1

    def step(self, arrivals: list[tuple[int, int]]):
        net = self.net
        K, lq = net.K, self.lq
        s = self.pattern.pick(int(self.rng_slot.integers(0, self.pattern.den)))
        incoming = []
        if s is not None:
            steps = self.step_of[s]
            for i in sorted(s):
                sampler = self.choices.get((s, i))
                if sampler is None:
                    continue
                ch = sampler.pick(int(self.rng_slot.integers(0, sampler.den)))
                if ch is None:
                    continue
                e, k = ch
                idx = e * K + k
                if self.link_q[idx] == 0:
                    continue
                a = self.acc[idx] + steps[e]
                if a >= lq:
                    self.acc[idx] = 0
                    self.link_q[idx] -= 1
                    j = net.dst[e]
                    if net.dests[k] == j:
                        self.delivered[k] += 1
                    else:
                        incoming.append(j * K + k)
                else:
                    self.acc[idx] = a
        for q in incoming:
            self._route(q)
        for q, n in arrivals:
            self._route(q, n)
