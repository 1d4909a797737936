"""Per-slot scheduling decisions.

T-slot backpressure, virtual-queue backpressure (plain and enhanced) and
pattern selection.  The engine drives the integer cores (``*_core``); the
public wrappers accept rational maps and run the same cores on a compiled
copy of the network.

Tie-breaks: commodities in increasing destination index, forwarders in
increasing node index, patterns in enumeration order, and ``W1 == W2``
resolves to a push (``BETA1``).  A node only transmits when its weight is
strictly positive.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from math import lcm
from typing import Mapping

from .model import PatternSet, PolicyParams, Topology
from .state import CompiledNet, TSlotState, VQState, compile_network, tslot_state_from, vq_state_from

BETA1 = 1  # push a new packet into V, then transmit the head of V
BETA2 = 2  # retransmit the head of V
BYPASS = 3  # strong link: the head of U goes straight to the receiver


@dataclass
class TSlotAction:
    """Pairings held for one epoch: ``pairs`` lists (node, link, commodity)."""

    pairs: list[tuple[int, int, int]]
    pattern: int | None  # index into the explicit pattern list, None when symbolic
    table: int
    epoch: int


@dataclass
class VQAction:
    """``transmit`` lists (node, link, commodity, mode); ``decodes`` lists (link, commodity)."""

    transmit: list[tuple[int, int, int, int]]
    decodes: list[tuple[int, int]]
    pattern: int | None
    table: int


# -- pattern selection ----------------------------------------------------

def _select(net: CompiledNet, best_for_table) -> tuple[int | None, int, list]:
    """Pick the max-weight pattern; returns (pattern index, table, per-node bests)."""
    if net.patterns is None:
        best = best_for_table(0)
        return None, 0, best
    cache = {}
    top_p, top_sum = 0, -1
    for p, s in enumerate(net.patterns):
        t = net.pattern_table[p]
        if t not in cache:
            cache[t] = best_for_table(t)
        best = cache[t]
        total = sum(best[i][0] for i in s)
        if total > top_sum:
            top_p, top_sum = p, total
    t = net.pattern_table[top_p]
    allowed = net.patterns[top_p]
    best = [b if i in allowed else (0, None) for i, b in enumerate(cache[t])]
    return top_p, t, best


def select_pattern(weights: Mapping[int, Fraction], patterns: PatternSet) -> frozenset:
    """Max-weight activation pattern for per-node weights (zero-weight nodes dropped)."""
    if patterns.symbolic:
        return frozenset(i for i, w in weights.items() if w > 0)
    top, top_sum = frozenset(), None
    for s in patterns.patterns:
        total = sum((weights.get(i, 0) for i in s), Fraction(0))
        if top_sum is None or total > top_sum:
            top, top_sum = s, total
    return frozenset(i for i in top if weights.get(i, 0) > 0)


# -- T-slot ---------------------------------------------------------------

def _tslot_link(net: CompiledNet, Q: list[int], e: int, mrow: list[int]) -> tuple[int, int]:
    """Scaled weight ``big_m * max_c [Q_i - Q_j]^+ r`` and the argmax commodity."""
    K = net.K
    bi, bj = net.src[e] * K, net.dst[e] * K
    ws = net.big_m // mrow[e]
    top, arg = 0, None
    for k in net.node_comms[net.src[e]]:
        w = (Q[bi + k] - Q[bj + k]) * ws
        if arg is None or w > top:
            top, arg = w, k
    return (top if top > 0 else 0), arg


def _tslot_best(net: CompiledNet, Q: list[int], table: int) -> list[tuple[int, tuple | None]]:
    mrow = net.m[table]
    out = [(0, None)] * (net.n + 1)
    for i in range(1, net.n + 1):
        top, choice = 0, None
        for e in net.out[i]:
            w, k = _tslot_link(net, Q, e, mrow)
            if w > top:
                top, choice = w, (e, k)
        out[i] = (top, choice)
    return out


def tslot_core(net: CompiledNet, Q: list[int], epoch: int = 0) -> TSlotAction:
    pattern, table, best = _select(net, lambda t: _tslot_best(net, Q, t))
    pairs = [(i, c[0], c[1]) for i, (w, c) in enumerate(best) if w > 0]
    return TSlotAction(pairs, pattern, table, epoch)


def tslot_weights(Q: Mapping[tuple[int, int], int], topology: Topology) -> dict:
    """Per-link ``(W_ij, c*_ij)`` from full-packet queues ``Q[(node, dest)]``."""
    net = compile_network(topology)
    st = tslot_state_from(net, Q)
    out = {}
    for e, link in enumerate(net.links):
        w, k = _tslot_link(net, st.Q, e, net.m[0])
        out[link] = (Fraction(w, net.big_m), net.dests[k] if k is not None else None)
    return out


def tslot_decide(state: TSlotState, t: int, params: PolicyParams) -> TSlotAction:
    """Recompute at epoch starts (``t % T == 0``); otherwise return the held action."""
    if t % params.T == 0 or state.held is None or not isinstance(state.held, TSlotAction):
        state.held = tslot_core(state.net, state.Q, t // params.T)
    return state.held


# -- virtual queues -------------------------------------------------------

def _vq_link(net: CompiledNet, st: VQState, e: int, table: int, enhanced: bool) -> tuple[int, int, int]:
    """Scaled ``(W_ij, c*, mode)`` with weights multiplied by ``lq * big_m``."""
    K = net.K
    U, V, P = st.U, st.V, st.P
    i, j = net.src[e], net.dst[e]
    bi, bj, be = i * K, j * K, e * K
    big = net.big_m
    top, arg, mode = -1, None, BETA1
    if net.strong[e]:
        for k in net.node_comms[i]:
            w = (U[bi + k] - U[bj + k]) * big
            if w > top:
                top, arg, mode = w, k, BYPASS
    else:
        ws = big // net.m[table][e]
        goff = net.goff[table][e] if enhanced else 0
        for k in net.node_comms[i]:
            v = V[be + k] + goff
            dvp = (v - P[be + k]) * ws
            w2 = dvp if dvp > 0 else 0
            w1 = (U[bi + k] - v) * big + dvp
            if w1 >= w2:
                w, md = w1, BETA1
            else:
                w, md = w2, BETA2
            if w > top:
                top, arg, mode = w, k, md
    return (top if top > 0 else 0), arg, mode


def _vq_best(net: CompiledNet, st: VQState, table: int, enhanced: bool) -> list:
    out = [(0, None)] * (net.n + 1)
    for i in range(1, net.n + 1):
        top, choice = 0, None
        for e in net.out[i]:
            w, k, mode = _vq_link(net, st, e, table, enhanced)
            if w > top:
                top, choice = w, (e, k, mode)
        out[i] = (top, choice)
    return out


def vq_decodes_core(net: CompiledNet, st: VQState) -> list[tuple[int, int]]:
    """f = 1 iff ``P - eta - U_j >= 0`` on every non-bypass link."""
    K = net.K
    eta = net.eta_t
    U, P = st.U, st.P
    out = []
    for e in range(net.E):
        if net.strong[e]:
            continue
        bj = net.dst[e] * K
        for k in net.node_comms[net.src[e]]:
            p = P[e * K + k]
            if p >= eta and p - eta - U[bj + k] >= 0:
                out.append((e, k))
    return out


def vq_core(net: CompiledNet, st: VQState, enhanced: bool = False) -> VQAction:
    pattern, table, best = _select(net, lambda t: _vq_best(net, st, t, enhanced))
    K = net.K
    # a retransmission from an empty V moves nothing; the node idles instead
    transmit = [
        (i, c[0], c[1], c[2]) for i, (w, c) in enumerate(best)
        if w > 0 and not (c[2] == BETA2 and st.V[c[0] * K + c[1]] == 0)
    ]
    return VQAction(transmit, vq_decodes_core(net, st), pattern, table)


def _vq_compile(topology: Topology, params: PolicyParams, U, V, P, patterns=None) -> tuple[CompiledNet, VQState]:
    dens = [Fraction(x).denominator for src in (U, V, P) for x in (src or {}).values()]
    net = compile_network(topology, patterns, params, resolution=lcm(1, *dens))
    return net, vq_state_from(net, U, V, P)


def vq_weights(U, V, P, topology: Topology, params: PolicyParams | None = None, enhanced: bool | None = None) -> dict:
    """Per-link ``(W_ij, c*_ij, mode)`` for rational ``U[(i,c)]``, ``V/P[(i,j,c)]``.

    ``mode`` is ``BETA1``, ``BETA2`` or ``BYPASS`` (strong links).
    """
    params = params or PolicyParams()
    if enhanced is None:
        enhanced = params.enhanced
    net, st = _vq_compile(topology, params, U, V, P)
    scale = net.lq * net.big_m
    out = {}
    for e, link in enumerate(net.links):
        w, k, mode = _vq_link(net, st, e, 0, enhanced)
        out[link] = (Fraction(w, scale), net.dests[k] if k is not None else None, mode)
    return out


def vq_decode_decisions(P, U, topology: Topology, params: PolicyParams | None = None) -> set[tuple[int, int, int]]:
    """Set of ``(i, j, c)`` with ``f = 1``."""
    params = params or PolicyParams()
    net, st = _vq_compile(topology, params, U, {}, P)
    return {(net.src[e], net.dst[e], net.dests[k]) for e, k in vq_decodes_core(net, st)}


def vq_decide(state: VQState, t: int, params: PolicyParams, enhanced: bool | None = None) -> VQAction:
    """One slot of the virtual-queue policy on compiled state (``t`` is unused: no epochs)."""
    if enhanced is None:
        enhanced = params.enhanced
    return vq_core(state.net, state, enhanced)


def describe_vq(net: CompiledNet, action: VQAction) -> dict:
    """Readable form of an action: node -> ((i, j), commodity, mode), plus decodes."""
    names = {BETA1: "beta1", BETA2: "beta2", BYPASS: "bypass"}
    return {
        "transmit": {i: (net.links[e], net.dests[k], names[m]) for i, e, k, m in action.transmit},
        "decodes": sorted((net.links[e], net.dests[k]) for e, k in action.decodes),
    }


def describe_tslot(net: CompiledNet, action: TSlotAction) -> dict:
    return {i: (net.links[e], net.dests[k]) for i, e, k in action.pairs}
