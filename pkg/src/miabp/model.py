"""Network description: topology, activation patterns, arrivals and config files."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping

import yaml

Link = tuple[int, int]

POLICY_KINDS = ("tslot", "vq", "vq-enhanced", "randomized")
DISTRIBUTIONS = ("bernoulli", "batch")


class ConfigError(ValueError):
    """Raised for unreadable or invalid configuration input."""


def parse_rational(value, what: str = "value") -> Fraction:
    """Parse ``"p/q"``, a decimal string, or an int into an exact Fraction.

    Floats from YAML are converted through their shortest repr, so ``0.52``
    becomes 13/25 rather than the nearest binary double.
    """
    if isinstance(value, bool):
        raise ConfigError(f"{what}: expected a number, got {value!r}")
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        return Fraction(repr(value))
    if isinstance(value, str):
        try:
            return Fraction(value.strip())
        except (ValueError, ZeroDivisionError):
            pass
    raise ConfigError(f"{what}: cannot parse {value!r} as a rational number")


def unit_rate(rate: Fraction) -> Fraction:
    """Round a rate down to the nearest unit fraction 1/ceil(1/r)."""
    return Fraction(1, math.ceil(1 / rate))


def is_strong(rate: Fraction) -> bool:
    return rate == 1


@dataclass(frozen=True)
class Topology:
    """Nodes ``1..n_nodes``, directed link rates and the commodity set.

    Commodities are named by their destination node.
    """

    n_nodes: int
    rates: Mapping[Link, Fraction]
    commodities: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "rates", dict(sorted(self.rates.items())))
        object.__setattr__(self, "commodities", tuple(sorted(set(self.commodities))))

    @property
    def nodes(self) -> range:
        return range(1, self.n_nodes + 1)

    @property
    def links(self) -> list[Link]:
        return list(self.rates)

    def rate(self, i: int, j: int) -> Fraction:
        return self.rates.get((i, j), Fraction(0))

    def neighbors(self, i: int) -> list[int]:
        return sorted({j for (a, j) in self.rates if a == i} | {a for (a, j) in self.rates if j == i})

    def out_neighbors(self, i: int) -> list[int]:
        return [j for (a, j) in self.rates if a == i]

    @property
    def max_degree(self) -> int:
        """The degree bound d, computed as the largest neighbour count."""
        return max((len(self.neighbors(i)) for i in self.nodes), default=0)

    @property
    def weak_links(self) -> list[Link]:
        return [l for l, r in self.rates.items() if r < 1]

    def without_weak_links(self) -> "Topology":
        return replace(self, rates={l: r for l, r in self.rates.items() if r >= 1})


@dataclass(frozen=True)
class PatternSet:
    """Feasible activation patterns.

    ``patterns=None`` stands for every subset of the nodes; that family is
    never enumerated.  ``overrides`` maps ``(pattern_index, (i, j))`` to a
    pattern-dependent link rate and requires an explicit pattern list.
    """

    patterns: tuple[frozenset[int], ...] | None = None
    overrides: Mapping[tuple[int, Link], Fraction] = field(default_factory=dict)

    @classmethod
    def all_subsets(cls) -> "PatternSet":
        return cls(None)

    @classmethod
    def explicit(cls, patterns: Iterable[Iterable[int]], overrides=None) -> "PatternSet":
        seen = []
        for s in patterns:
            s = frozenset(s)
            if s not in seen:
                seen.append(s)
        return cls(tuple(seen), dict(overrides or {}))

    @property
    def symbolic(self) -> bool:
        return self.patterns is None

    def __contains__(self, s) -> bool:
        return True if self.patterns is None else frozenset(s) in self.patterns

    def rate(self, index: int, link: Link, base: Fraction) -> Fraction:
        return self.overrides.get((index, link), base)

    def maximal(self) -> list[frozenset[int]]:
        assert self.patterns is not None
        return [s for s in self.patterns if not any(s < t for t in self.patterns)]


def downward_closure(patterns: Iterable[Iterable[int]]) -> list[frozenset[int]]:
    """All subsets of the given patterns, ordered by size then contents."""
    out = set()
    for s in patterns:
        s = sorted(s)
        for k in range(len(s) + 1):
            out.update(frozenset(c) for c in itertools.combinations(s, k))
    return sorted(out, key=lambda s: (len(s), sorted(s)))


@dataclass(frozen=True)
class ArrivalStream:
    node: int
    dest: int
    rate: Fraction
    dist: str = "bernoulli"
    a_max: int = 1


@dataclass(frozen=True)
class ArrivalSpec:
    streams: tuple[ArrivalStream, ...] = ()

    @property
    def a_max(self) -> int:
        return max((s.a_max for s in self.streams), default=1)

    def rates(self) -> dict[tuple[int, int], Fraction]:
        out: dict[tuple[int, int], Fraction] = {}
        for s in self.streams:
            out[(s.node, s.dest)] = out.get((s.node, s.dest), Fraction(0)) + s.rate
        return out

    def with_rate(self, rate) -> "ArrivalSpec":
        """Every stream set to the same per-flow rate (symmetric sweeps)."""
        rate = parse_rational(rate, "lambda")
        return ArrivalSpec(tuple(replace(s, rate=rate) for s in self.streams))

    def with_rates(self, rates: Mapping[tuple[int, int], Fraction]) -> "ArrivalSpec":
        return ArrivalSpec(tuple(replace(s, rate=Fraction(rates[(s.node, s.dest)])) for s in self.streams))


@dataclass(frozen=True)
class PolicyParams:
    kind: str = "vq"
    T: int = 1
    eta: Fraction = Fraction(1)
    gamma: Fraction = Fraction(1, 2)
    # route strong links through V/P like weak ones instead of direct handoff
    uniform_strong: bool = False

    @property
    def enhanced(self) -> bool:
        return self.kind == "vq-enhanced"

    @property
    def label(self) -> str:
        if self.kind == "tslot":
            return f"tslot(T={self.T})"
        if self.kind == "vq-enhanced":
            return f"vq-enhanced(gamma={self.gamma})"
        return self.kind


@dataclass(frozen=True)
class NetworkConfig:
    topology: Topology
    patterns: PatternSet
    arrivals: ArrivalSpec
    policy: PolicyParams = PolicyParams()
    horizon: int = 10_000
    seed: int = 0
    degree_bound: int | None = None

    def with_overrides(self, **kw) -> "NetworkConfig":
        policy_kw = {k: kw.pop(k) for k in ("kind", "T", "eta", "gamma", "uniform_strong") if k in kw}
        cfg = self
        if policy_kw:
            cfg = replace(cfg, policy=replace(cfg.policy, **policy_kw))
        if "rate" in kw:
            cfg = replace(cfg, arrivals=cfg.arrivals.with_rate(kw.pop("rate")))
        if kw.pop("no_mia", False):
            cfg = replace(cfg, topology=cfg.topology.without_weak_links())
        return replace(cfg, **kw)


@dataclass(frozen=True)
class Violation:
    kind: str
    where: object
    message: str

    def __str__(self):
        return f"{self.kind} violation at {self.where}: {self.message}"


def normalize_rates(topology: Topology) -> Topology:
    """Round every rate down to a unit fraction; rejects rates outside (0, 1]."""
    out = {}
    for link, r in topology.rates.items():
        r = Fraction(r)
        if r <= 0 or r > 1:
            raise ValueError(f"link {link}: rate {r} outside (0, 1]")
        out[link] = unit_rate(r)
    return replace(topology, rates=out)


def normalize_patterns(patterns: PatternSet) -> PatternSet:
    out = {}
    for key, r in patterns.overrides.items():
        r = Fraction(r)
        if r <= 0 or r > 1:
            raise ValueError(f"pattern {key[0]} link {key[1]}: rate {r} outside (0, 1]")
        out[key] = unit_rate(r)
    return replace(patterns, overrides=out)


def validate(config: NetworkConfig) -> list[Violation]:
    """Collect every model-level problem with ``config``; empty means valid."""
    topo, pats = config.topology, config.patterns
    nodes = set(topo.nodes)
    v: list[Violation] = []
    for (i, j), r in topo.rates.items():
        if i not in nodes or j not in nodes:
            v.append(Violation("node", (i, j), "link endpoint is not a node"))
        if i == j:
            v.append(Violation("self-link", (i, j), "links must join distinct nodes"))
        if not 0 < r <= 1:
            v.append(Violation("rate", (i, j), f"rate {r} outside (0, 1]"))
        elif (1 / r).denominator != 1:
            v.append(Violation("rate-form", (i, j), f"rate {r} is not 1/m; run normalize_rates"))
        if i < j or (j, i) not in topo.rates:
            back = topo.rates.get((j, i))
            if back != r:
                v.append(Violation("reciprocity", (min(i, j), max(i, j)), f"r{i}{j}={r} but r{j}{i}={back}"))
    if config.degree_bound is not None and topo.max_degree > config.degree_bound:
        v.append(Violation("degree", topo.max_degree, f"exceeds declared bound {config.degree_bound}"))
    for c in topo.commodities:
        if c not in nodes:
            v.append(Violation("commodity", c, "destination is not a node"))

    if pats.patterns is not None:
        members = set(pats.patterns)
        for s in pats.patterns:
            if not s <= nodes:
                v.append(Violation("pattern", sorted(s), "contains unknown nodes"))
        missing = [s for s in downward_closure(pats.patterns) if s not in members]
        if missing:
            v.append(Violation("closure", [sorted(s) for s in missing], "subsets of member patterns are absent"))
    elif pats.overrides:
        v.append(Violation("pattern", "all-subsets", "pattern-dependent rates need an explicit pattern list"))
    for (idx, (i, j)), r in pats.overrides.items():
        if pats.patterns is not None and not 0 <= idx < len(pats.patterns):
            v.append(Violation("pattern", idx, "override refers to a missing pattern"))
        if (i, j) not in topo.rates:
            v.append(Violation("pattern", (idx, (i, j)), "override on a non-existent link"))
        if not 0 < r <= 1:
            v.append(Violation("rate", (idx, (i, j)), f"rate {r} outside (0, 1]"))
        elif (1 / r).denominator != 1:
            v.append(Violation("rate-form", (idx, (i, j)), f"rate {r} is not 1/m"))

    for s in config.arrivals.streams:
        where = (s.node, s.dest)
        if s.node not in nodes or s.dest not in nodes:
            v.append(Violation("arrival", where, "unknown node"))
        if s.dest not in topo.commodities:
            v.append(Violation("arrival", where, "destination is not a declared commodity"))
        if s.node == s.dest:
            v.append(Violation("arrival", where, "source equals destination"))
        if s.dist not in DISTRIBUTIONS:
            v.append(Violation("arrival", where, f"unknown distribution {s.dist!r}"))
        if s.a_max < 1:
            v.append(Violation("arrival", where, "a_max must be >= 1"))
        cap = 1 if s.dist == "bernoulli" else s.a_max
        if not 0 <= s.rate <= cap:
            v.append(Violation("arrival", where, f"rate {s.rate} outside [0, {cap}]"))

    p = config.policy
    if p.kind not in POLICY_KINDS:
        v.append(Violation("policy", p.kind, "unknown policy kind"))
    if p.T < 1:
        v.append(Violation("policy", "T", f"T={p.T} must be >= 1"))
    if p.eta < 1:
        v.append(Violation("policy", "eta", f"eta={p.eta} must be >= 1"))
    if p.gamma < 0:
        v.append(Violation("policy", "gamma", f"gamma={p.gamma} must be >= 0"))
    if config.horizon < 0:
        v.append(Violation("sim", "horizon", "horizon must be >= 0"))
    if not 0 <= config.seed < 2**64:
        v.append(Violation("sim", "seed", "seed must be an unsigned 64-bit integer"))
    return v


# -- config files ---------------------------------------------------------

def _field(tree: Mapping, key: str, where: str, default=..., kind=None):
    if key not in tree:
        if default is ...:
            raise ConfigError(f"{where}: missing field {key!r}")
        return default
    value = tree[key]
    if kind is not None and not isinstance(value, kind) or isinstance(value, bool) and kind is int:
        raise ConfigError(f"{where}.{key}: expected {getattr(kind, '__name__', kind)}, got {value!r}")
    return value


def parse_config(tree: Mapping, source: str = "<config>") -> NetworkConfig:
    """Build a normalized, validated NetworkConfig from a parsed key-value tree."""
    if not isinstance(tree, Mapping):
        raise ConfigError(f"{source}: top level must be a mapping")
    n = _field(tree, "nodes", source, kind=int)

    rates: dict[Link, Fraction] = {}
    for k, entry in enumerate(_field(tree, "links", source, kind=list)):
        where = f"{source}: links[{k}]"
        if not isinstance(entry, Mapping):
            raise ConfigError(f"{where}: expected a mapping")
        a = _field(entry, "a", where, kind=int)
        b = _field(entry, "b", where, kind=int)
        r = parse_rational(_field(entry, "rate", where), f"{where}.rate")
        if r <= 0 or r > 1:
            raise ConfigError(f"{where}.rate: link ({a}, {b}) rate {r} outside (0, 1]")
        rates[(a, b)] = r
        if entry.get("directed"):
            continue
        rates[(b, a)] = r

    commodities = []
    for k, entry in enumerate(_field(tree, "commodities", source, kind=list)):
        where = f"{source}: commodities[{k}]"
        if isinstance(entry, int):
            commodities.append(entry)
        else:
            commodities.append(_field(entry, "dest", where, kind=int))

    pats = tree.get("patterns")
    if pats is None:
        if tree.get("interference_free"):
            pattern_set = PatternSet.all_subsets()
        else:
            raise ConfigError(f"{source}: give 'patterns' or set interference_free: true")
    elif pats == "all-subsets":
        pattern_set = PatternSet.all_subsets()
    elif isinstance(pats, list):
        members = []
        for k, p in enumerate(pats):
            if not isinstance(p, list) or not all(isinstance(x, int) for x in p):
                raise ConfigError(f"{source}: patterns[{k}]: expected a list of node indices")
            members.append(p)
        if tree.get("close_patterns"):
            members = downward_closure(members)
        overrides = {}
        for k, entry in enumerate(tree.get("pattern_rates") or []):
            where = f"{source}: pattern_rates[{k}]"
            idx = _field(entry, "pattern_index", where, kind=int)
            a = _field(entry, "a", where, kind=int)
            b = _field(entry, "b", where, kind=int)
            r = parse_rational(_field(entry, "rate", where), f"{where}.rate")
            if r <= 0 or r > 1:
                raise ConfigError(f"{where}.rate: {r} outside (0, 1]")
            overrides[(idx, (a, b))] = r
            overrides.setdefault((idx, (b, a)), r)
        pattern_set = PatternSet.explicit(members, overrides)
    else:
        raise ConfigError(f"{source}: patterns must be 'all-subsets' or a list of node lists")
    if pats is None or pats == "all-subsets":
        if tree.get("pattern_rates"):
            raise ConfigError(f"{source}: pattern_rates need an explicit pattern list")

    streams = []
    for k, entry in enumerate(tree.get("arrivals") or []):
        where = f"{source}: arrivals[{k}]"
        dist = entry.get("dist", "bernoulli")
        if dist not in DISTRIBUTIONS:
            raise ConfigError(f"{where}.dist: expected one of {DISTRIBUTIONS}, got {dist!r}")
        streams.append(
            ArrivalStream(
                node=_field(entry, "node", where, kind=int),
                dest=_field(entry, "dest", where, kind=int),
                rate=parse_rational(_field(entry, "rate", where), f"{where}.rate"),
                dist=dist,
                a_max=_field(entry, "a_max", where, default=1, kind=int),
            )
        )

    pol = tree.get("policy") or {}
    try:
        policy = PolicyParams(
            kind=pol.get("kind", "vq"),
            T=int(pol.get("T", 1)),
            eta=parse_rational(pol.get("eta", 1), "policy.eta"),
            gamma=parse_rational(pol.get("gamma", "1/2"), "policy.gamma"),
            uniform_strong=bool(pol.get("uniform_strong", False)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: policy: {exc}") from exc
    sim = tree.get("sim") or {}
    topo = Topology(n, rates, tuple(commodities))
    cfg = NetworkConfig(
        topology=normalize_rates(topo),
        patterns=normalize_patterns(pattern_set),
        arrivals=ArrivalSpec(tuple(streams)),
        policy=policy,
        horizon=int(sim.get("horizon", 10_000)),
        seed=int(sim.get("seed", 0)),
        degree_bound=tree.get("max_degree"),
    )
    problems = validate(cfg)
    if problems:
        raise ConfigError(f"{source}: " + "; ".join(str(p) for p in problems))
    return cfg


def load_config(path) -> NetworkConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror or exc}") from exc
    try:
        tree = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        loc = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown location"
        raise ConfigError(f"{path}: parse error at {loc}: {getattr(exc, 'problem', exc)}") from exc
    return parse_config(tree, str(path))


def dump_config(config: NetworkConfig) -> dict:
    """Inverse of :func:`parse_config` (links written as directed entries)."""
    pats = config.patterns
    tree: dict = {
        "nodes": config.topology.n_nodes,
        "links": [{"a": i, "b": j, "rate": str(r), "directed": True} for (i, j), r in config.topology.rates.items()],
        "commodities": [{"dest": c} for c in config.topology.commodities],
        "patterns": "all-subsets" if pats.symbolic else [sorted(s) for s in pats.patterns],
        "arrivals": [
            {"node": s.node, "dest": s.dest, "rate": str(s.rate), "dist": s.dist, "a_max": s.a_max}
            for s in config.arrivals.streams
        ],
        "policy": {
            "kind": config.policy.kind,
            "T": config.policy.T,
            "eta": str(config.policy.eta),
            "gamma": str(config.policy.gamma),
        },
        "sim": {"horizon": config.horizon, "seed": config.seed},
    }
    if pats.overrides:
        tree["pattern_rates"] = [
            {"pattern_index": idx, "a": a, "b": b, "rate": str(r)} for (idx, (a, b)), r in pats.overrides.items()
        ]
    return tree


REFERENCE_DIR = Path(__file__).parent / "configs"


def reference_config(name: str) -> Path:
    """Path of a shipped reference network (``net4`` or ``net10``)."""
    path = REFERENCE_DIR / f"{name}.yaml"
    if not path.exists():
        raise ConfigError(f"no reference config named {name!r}")
    return path
