"""Stability verdicts, backlog bounds and sample-path drift monitors.

The drift monitors re-evaluate the one-slot (virtual-queue policy) and
one-epoch (T-slot policy) Lyapunov drift inequalities on the realized
actions and arrivals.  They run inside the engine loop in integer
arithmetic: the virtual-queue check is scaled by ``lq**2`` and the T-slot
check by ``big_m``, so a reported violation is never a rounding artefact.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .policy import BETA1, BYPASS

SLOPE_THRESHOLD = 1e-3
RATE_TOLERANCE = 0.02


class BoundUndefined(ValueError):
    """The bound's precondition (eps > 0, or eps * T > 1) does not hold."""


# -- backlog statistics ---------------------------------------------------

def average_backlog(backlog, window: slice | tuple[int, int] | None = None) -> Fraction:
    """Exact time-average of an integer backlog series over ``window``."""
    series = getattr(backlog, "backlog", backlog)
    if isinstance(window, tuple):
        window = slice(*window)
    values = series[window] if window is not None else series
    n = len(values)
    if n == 0:
        raise ValueError("empty window")
    return Fraction(int(np.sum(values, dtype=np.int64)), n)


def tail_slope(backlog) -> float:
    """Least-squares slope (packets/slot) over the final half of the series."""
    series = np.asarray(getattr(backlog, "backlog", backlog), dtype=float)
    tail = series[len(series) // 2:]
    if len(tail) < 2:
        return 0.0
    x = np.arange(len(tail), dtype=float)
    return float(np.polyfit(x, tail, 1)[0])


@dataclass
class StabilityVerdict:
    stable: bool
    slope: float
    mean_backlog: float  # over the final half
    deficits: dict[tuple[int, int], float]
    slope_threshold: float = SLOPE_THRESHOLD
    rate_tolerance: float = RATE_TOLERANCE

    def as_dict(self) -> dict:
        return {
            "stable": self.stable,
            "slope": self.slope,
            "tail_mean_backlog": self.mean_backlog,
            "deficits": {f"{i}->{c}": v for (i, c), v in sorted(self.deficits.items())},
            "slope_threshold": self.slope_threshold,
            "rate_tolerance": self.rate_tolerance,
        }


def stability_verdict(result, slope_threshold: float = SLOPE_THRESHOLD, rate_tolerance: float = RATE_TOLERANCE) -> StabilityVerdict:
    """Stable iff the tail slope is below threshold and every flow keeps up with its rate."""
    series = result.backlog
    slope = tail_slope(series)
    tail = series[len(series) // 2:]
    mean = float(np.mean(tail)) if len(tail) else 0.0
    achieved = result.delivery_rates()
    deficits = {k: float(lam) - achieved.get(k, 0.0) for k, lam in result.rates.items() if lam > 0}
    stable = slope < slope_threshold and all(d < rate_tolerance for d in deficits.values())
    return StabilityVerdict(stable, slope, mean, deficits, slope_threshold, rate_tolerance)


# -- theorem bounds -------------------------------------------------------

def thm2_bound(K: int, N: int, T: int, mu_max: int, a_max: int, eps) -> Fraction:
    """Average-backlog bound of the T-slot policy; needs ``eps * T > 1``."""
    eps = Fraction(eps)
    if eps * T <= 1:
        raise BoundUndefined(f"eps*T = {eps * T} must exceed 1")
    s = mu_max + a_max
    return Fraction(K * N * T * T * s * s + N * T * T, 1) / (2 * (eps * T - 1)) + Fraction(K * N * (T - 1) * s, 2)


def thm4_bound(d: int, K: int, N: int, a_max: int, eta, eps) -> Fraction:
    """Average-backlog bound of the virtual-queue policy; needs ``eps > 0``."""
    eps, eta = Fraction(eps), Fraction(eta)
    if eps <= 0:
        raise BoundUndefined(f"eps = {eps} must be positive")
    return (2 * d + 1) * (K * N * (d + a_max) ** 2 + 2 * N + (2 * eta + 1) * K * N * d) / eps


# -- drift monitors -------------------------------------------------------

@dataclass
class DriftReport:
    kind: str  # "slot" or "epoch"
    checks: int = 0
    violations: int = 0
    worst_margin: Fraction | None = None  # min over checks of RHS - LHS
    worst_at: int | None = None
    first_violations: list[int] = field(default_factory=list)

    def record(self, at: int, margin: int, scale: int):
        self.checks += 1
        m = Fraction(margin, scale)
        if self.worst_margin is None or m < self.worst_margin:
            self.worst_margin, self.worst_at = m, at
        if margin < 0:
            self.violations += 1
            if len(self.first_violations) < 10:
                self.first_violations.append(at)

    def merge(self, other: "DriftReport") -> "DriftReport":
        out = DriftReport(self.kind, self.checks + other.checks, self.violations + other.violations)
        pairs = [(m, a) for m, a in ((self.worst_margin, self.worst_at), (other.worst_margin, other.worst_at)) if m is not None]
        if pairs:
            out.worst_margin, out.worst_at = min(pairs, key=lambda p: p[0])
        out.first_violations = (self.first_violations + other.first_violations)[:10]
        return out

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "checks": self.checks,
            "violations": self.violations,
            "worst_margin": None if self.worst_margin is None else str(self.worst_margin),
            "worst_margin_float": None if self.worst_margin is None else float(self.worst_margin),
            "worst_at": self.worst_at,
        }


def _alpha2(net, a_max: int) -> int:
    K, N, d = net.K, net.n, net.max_degree
    return K * N * (d + a_max) ** 2 + 2 * N + K * N * d


def _alpha1(net, T: int, a_max: int) -> int:
    K, N, d = net.K, net.n, net.max_degree
    return K * N * T * T * (d + a_max) ** 2 + N * T * T


class VQDriftMonitor:
    """Per-slot check of the drift inequality for L = sum U^2 + sum V^2 + sum (P - eta)^2.

    A strong-link handoff is scored as the constructed-network transition it
    stands for: push, transmit at rate one and decode in the same slot, with
    V = P = 0 before and after.
    """

    def __init__(self, net, a_max: int):
        self.net = net
        self.scale = net.lq * net.lq
        self.alpha = _alpha2(net, a_max) * self.scale
        self.report_ = DriftReport("slot")
        self.t = 0

    def lyapunov(self, st) -> int:
        eta = self.net.eta_t
        return sum(u * u for u in st.U) + sum(v * v for v in st.V) + sum((p - eta) * (p - eta) for p in st.P)

    def pre(self, st, action, arrivals):
        net = self.net
        K, lq, eta = net.K, net.lq, net.eta_t
        U, V, P = st.U, st.V, st.P
        dst, dests = net.dst, net.dests
        mrow = net.m[action.table]
        rhs = self.alpha
        for q, n in arrivals:
            rhs += 2 * U[q] * n * lq
        for i, e, k, mode in action.transmit:
            ui = U[i * K + k]
            if mode == BYPASS:
                rhs -= 2 * ui * lq
                if ui >= lq:
                    uj = 0 if dests[k] == dst[e] else U[dst[e] * K + k]
                    rhs -= 2 * (-eta - uj) * lq
                continue
            idx = e * K + k
            if mode == BETA1:
                rhs -= 2 * (ui - V[idx]) * lq
            rhs -= 2 * (V[idx] - P[idx]) * (lq // mrow[e])
        for e, k in action.decodes:
            uj = U[dst[e] * K + k]
            rhs -= 2 * (P[e * K + k] - eta - uj) * lq
        self._rhs = rhs
        self._l0 = self.lyapunov(st)

    def post(self, st):
        lhs = self.lyapunov(st) - self._l0
        self.report_.record(self.t, self._rhs - lhs, self.scale)
        self.t += 1

    def report(self) -> DriftReport:
        return self.report_


class TSlotDriftMonitor:
    """Per-epoch check of the T-slot drift inequality for L = sum Q^2."""

    def __init__(self, net, T: int, a_max: int):
        self.net = net
        self.T = T
        self.scale = net.big_m
        self.alpha = _alpha1(net, T, a_max) * self.scale
        self.report_ = DriftReport("epoch")
        self._open = False

    def epoch_start(self, st, action):
        self._q0 = list(st.Q)
        self._l0 = sum(q * q for q in st.Q)
        self._action = action
        self._arr: dict[int, int] = {}
        self._open = True

    def arrivals(self, arrivals):
        for q, n in arrivals:
            self._arr[q] = self._arr.get(q, 0) + n

    def epoch_end(self, st):
        if not self._open:
            return
        net = self.net
        K, T, M = net.K, self.T, net.big_m
        mrow = net.m[self._action.table]
        service = {}
        for i, e, k in self._action.pairs:
            flow = T * (M // mrow[e])
            service[i * K + k] = service.get(i * K + k, 0) + flow
            j = net.dst[e]
            if net.dests[k] != j:
                service[j * K + k] = service.get(j * K + k, 0) - flow
        rhs = self.alpha
        for q, q0 in enumerate(self._q0):
            if q0:
                rhs -= 2 * q0 * (service.get(q, 0) - self._arr.get(q, 0) * M - M)
        lhs = (sum(q * q for q in st.Q) - self._l0) * M
        self.report_.record(self._action.epoch, rhs - lhs, self.scale)
        self._open = False

    def report(self) -> DriftReport:
        return self.report_


# -- run summaries --------------------------------------------------------

def bound_for(result, net_info: dict, eps) -> tuple[str, Fraction] | None:
    """The matching theorem bound for a run, or None when its precondition fails.

    ``net_info`` carries K, N, d, a_max, T and eta.
    """
    try:
        if result.kind == "tslot":
            return "thm2", thm2_bound(net_info["K"], net_info["N"], net_info["T"], net_info["d"], net_info["a_max"], eps)
        if result.kind in ("vq", "vq-enhanced"):
            return "thm4", thm4_bound(net_info["d"], net_info["K"], net_info["N"], net_info["a_max"], net_info["eta"], eps)
    except BoundUndefined:
        return None
    return None
