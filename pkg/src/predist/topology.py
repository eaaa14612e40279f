"""Network topology, physical parameters, and request-set handling.

Covers the random geometric (Waxman-style) topology generator used for
experiments, the request-pair sampler, and JSON file I/O with validation.
All generators are pure functions of their inputs and seed.
"""
from __future__ import annotations

import json
import math
import random
from collections import deque
from dataclasses import dataclass

from .errors import InfeasibleDensityError, InfeasibleRangeError, TopologyFormatError

WAXMAN_BETA = 0.6
_MAX_GEN_ATTEMPTS = 100
_LENGTH_TOL = 1e-6


@dataclass(frozen=True)
class Node:
    id: int
    x_km: float
    y_km: float


@dataclass(frozen=True)
class Edge:
    u: int
    v: int
    length_km: float


@dataclass(frozen=True)
class PhysicalParams:
    """Hardware and protocol constants shared by every node (homogeneous network).

    p_b / t_b_s       success probability and duration of an atomic joint measurement
    g_t_s / g_p       atom-photon generation time and success probability
    p_op              optical joint-measurement success probability (default p_b / 2)
    l_att_km          fiber attenuation length
    c_sig_km_s        signal speed for photons and classical messages
    tau_s             request slot length
    ttl_s             optional memory cutoff: entangled pairs older than this are dropped
    fixed_tc_s        optional constant classical-notification delay; when unset the
                      delay is derived from node distances
    """

    p_b: float = 0.4
    t_b_s: float = 1e-5
    g_t_s: float = 5e-5
    g_p: float = 0.33
    p_op: float | None = None
    l_att_km: float = 20.0
    c_sig_km_s: float = 2e5
    tau_s: float = 4.0
    ttl_s: float | None = None
    fixed_tc_s: float | None = None

    def __post_init__(self):
        if self.p_op is None:
            object.__setattr__(self, "p_op", 0.5 * self.p_b)
        for name in ("p_b", "g_p", "p_op"):
            p = getattr(self, name)
            if not 0.0 < p <= 1.0:
                raise ValueError(f"{name} must be in (0, 1], got {p}")
        for name in ("t_b_s", "g_t_s", "l_att_km", "c_sig_km_s", "tau_s"):
            t = getattr(self, name)
            if t <= 0.0:
                raise ValueError(f"{name} must be positive, got {t}")
        if self.p_op > self.p_b:
            raise ValueError(f"p_op ({self.p_op}) must not exceed p_b ({self.p_b})")
        if self.ttl_s is not None and self.ttl_s <= 0.0:
            raise ValueError("ttl_s must be positive when set")
        if self.fixed_tc_s is not None and self.fixed_tc_s < 0.0:
            raise ValueError("fixed_tc_s must be non-negative when set")


@dataclass(frozen=True)
class Topology:
    """Undirected quantum-network graph with geometric node positions.

    Node ids are dense integers 0..n-1. Every edge length must equal the
    Euclidean distance of its endpoints and the graph must be connected.
    """

    nodes: tuple[Node, ...]
    edges: tuple[Edge, ...]
    gen_seed: int | None = None
    gen_density: float | None = None

    def __post_init__(self):
        _validate_topology(self)

    @property
    def n(self) -> int:
        return len(self.nodes)

    def xy(self, node_id: int) -> tuple[float, float]:
        node = self.nodes[node_id]
        return (node.x_km, node.y_km)

    def distance(self, u: int, v: int) -> float:
        ux, uy = self.xy(u)
        vx, vy = self.xy(v)
        return math.hypot(ux - vx, uy - vy)

    def adjacency(self) -> dict[int, list[tuple[int, float]]]:
        adj: dict[int, list[tuple[int, float]]] = {node.id: [] for node in self.nodes}
        for e in self.edges:
            adj[e.u].append((e.v, e.length_km))
            adj[e.v].append((e.u, e.length_km))
        for lst in adj.values():
            lst.sort()
        return adj

    def edge_length(self, u: int, v: int) -> float:
        key = (u, v) if u < v else (v, u)
        lengths = _edge_length_map(self)
        if key not in lengths:
            raise KeyError(f"no edge between nodes {u} and {v}")
        return lengths[key]

    def has_edge(self, u: int, v: int) -> bool:
        key = (u, v) if u < v else (v, u)
        return key in _edge_length_map(self)


# Edge lookup maps are memoized outside the frozen dataclass.
_EDGE_MAPS: dict[int, dict[tuple[int, int], float]] = {}


def _edge_length_map(topo: Topology) -> dict[tuple[int, int], float]:
    cached = _EDGE_MAPS.get(id(topo))
    if cached is None:
        cached = {(e.u, e.v): e.length_km for e in topo.edges}
        _EDGE_MAPS[id(topo)] = cached
        if len(_EDGE_MAPS) > 64:
            _EDGE_MAPS.pop(next(iter(_EDGE_MAPS)))
    return cached


def _validate_topology(topo: Topology) -> None:
    n = len(topo.nodes)
    if n < 2:
        raise TopologyFormatError("topology needs at least two nodes")
    for i, node in enumerate(topo.nodes):
        if node.id != i:
            raise TopologyFormatError(
                f"node ids must be dense integers 0..n-1; position {i} holds id {node.id}"
            )
    seen: set[tuple[int, int]] = set()
    for e in topo.edges:
        if not (0 <= e.u < n) or not (0 <= e.v < n):
            bad = e.u if not (0 <= e.u < n) else e.v
            raise TopologyFormatError(f"edge ({e.u}, {e.v}) references unknown node id {bad}")
        if e.u == e.v:
            raise TopologyFormatError(f"self-loop on node {e.u}")
        key = (e.u, e.v) if e.u < e.v else (e.v, e.u)
        if key in seen:
            raise TopologyFormatError(f"duplicate edge ({key[0]}, {key[1]})")
        seen.add(key)
        geo = topo.distance(e.u, e.v)
        if abs(geo - e.length_km) > _LENGTH_TOL * max(1.0, geo):
            raise TopologyFormatError(
                f"edge ({e.u}, {e.v}) length {e.length_km} does not match "
                f"node distance {geo:.6f}"
            )
    if not _is_connected(n, topo.edges):
        raise TopologyFormatError("topology graph is not connected")


def _is_connected(n: int, edges: tuple[Edge, ...]) -> bool:
    adj: dict[int, list[int]] = {i: [] for i in range(n)}
    for e in edges:
        adj[e.u].append(e.v)
        adj[e.v].append(e.u)
    seen = {0}
    queue = deque([0])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return len(seen) == n


@dataclass(frozen=True)
class Request:
    s: int
    d: int
    weight: float


@dataclass(frozen=True)
class RequestSet:
    """Expected request pairs with weights normalized to sum to one."""

    pairs: tuple[Request, ...]

    def __post_init__(self):
        if not self.pairs:
            raise ValueError("request set must not be empty")
        for r in self.pairs:
            if r.s == r.d:
                raise ValueError(f"request pair has identical endpoints ({r.s})")
            if r.weight <= 0.0:
                raise ValueError(f"request ({r.s}, {r.d}) has non-positive weight")
        total = sum(r.weight for r in self.pairs)
        if abs(total - 1.0) > 1e-12:
            normalized = tuple(
                Request(r.s, r.d, r.weight / total) for r in self.pairs
            )
            object.__setattr__(self, "pairs", normalized)

    def __len__(self) -> int:
        return len(self.pairs)


def gen_waxman(
    n: int,
    area_km: tuple[float, float],
    max_link_km: float,
    target_density: float,
    seed: int,
) -> Topology:
    """Generate a connected random geometric topology at a target edge density.

    Nodes are placed uniformly in the given rectangle. Candidate edges are node
    pairs at most ``max_link_km`` apart; each is kept with probability
    ``beta * exp(-d / (alpha * max_link_km))`` with beta fixed at 0.6 and alpha
    calibrated by bisection so the expected edge count matches
    ``target_density * n * (n - 1) / 2``. Draws are retried with an incremented
    seed (up to 100 times) until the realized edge count is within +/-10% of the
    target and the graph is connected.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    if not 0.0 < target_density <= 1.0:
        raise ValueError("target_density must be in (0, 1]")
    if max_link_km <= 0.0:
        raise ValueError("max_link_km must be positive")
    width, height = area_km
    target_edges = target_density * n * (n - 1) / 2.0
    best_density = 0.0
    best_gap = math.inf

    for attempt in range(_MAX_GEN_ATTEMPTS):
        rng = random.Random(seed + attempt)
        pts = [(rng.uniform(0.0, width), rng.uniform(0.0, height)) for _ in range(n)]
        candidates = []
        for u in range(n):
            for v in range(u + 1, n):
                d = math.hypot(pts[u][0] - pts[v][0], pts[u][1] - pts[v][1])
                if d <= max_link_km:
                    candidates.append((u, v, d))
        if not candidates:
            continue
        alpha = _calibrate_alpha(
            [d for _, _, d in candidates], max_link_km, target_edges
        )
        edges = tuple(
            Edge(u, v, d)
            for u, v, d in candidates
            if rng.random() < WAXMAN_BETA * math.exp(-d / (alpha * max_link_km))
        )
        density = len(edges) / (n * (n - 1) / 2.0)
        if abs(density - target_density) < best_gap:
            best_gap = abs(density - target_density)
            best_density = density
        if abs(len(edges) - target_edges) > 0.1 * target_edges:
            continue
        if not _is_connected(n, edges):
            continue
        nodes = tuple(Node(i, pts[i][0], pts[i][1]) for i in range(n))
        return Topology(nodes, edges, gen_seed=seed, gen_density=target_density)

    raise InfeasibleDensityError(target_density, best_density, _MAX_GEN_ATTEMPTS)


def _calibrate_alpha(distances: list[float], scale_km: float, target: float) -> float:
    """Bisect the Waxman alpha so the expected edge count hits the target."""

    def expected(alpha: float) -> float:
        return sum(WAXMAN_BETA * math.exp(-d / (alpha * scale_km)) for d in distances)

    lo, hi = 1e-9, 1e9
    if expected(hi) <= target:
        return hi
    for _ in range(200):
        mid = math.sqrt(lo * hi)
        if expected(mid) < target:
            lo = mid
        else:
            hi = mid
        if hi / lo < 1.0 + 1e-12:
            break
    return math.sqrt(lo * hi)


def gen_requests(
    topo: Topology,
    k: int,
    dist_range_km: tuple[float, float],
    seed: int,
) -> RequestSet:
    """Sample k distinct request pairs whose endpoint distance lies in the range."""
    if k < 1:
        raise ValueError("k must be at least 1")
    lo, hi = dist_range_km
    candidates = []
    span_lo, span_hi = math.inf, 0.0
    for u in range(topo.n):
        for v in range(u + 1, topo.n):
            d = topo.distance(u, v)
            span_lo = min(span_lo, d)
            span_hi = max(span_hi, d)
            if lo <= d <= hi:
                candidates.append((u, v))
    if len(candidates) < k:
        raise InfeasibleRangeError(k, len(candidates), (span_lo, span_hi))
    rng = random.Random(seed)
    picks = rng.sample(candidates, k)
    weight = 1.0 / k
    return RequestSet(tuple(Request(s, d, weight) for s, d in picks))


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------

def save_topology(topo: Topology, path: str) -> None:
    payload = {
        "nodes": [{"id": nd.id, "x_km": nd.x_km, "y_km": nd.y_km} for nd in topo.nodes],
        "edges": [{"u": e.u, "v": e.v, "length_km": e.length_km} for e in topo.edges],
        "meta": {"seed": topo.gen_seed, "density": topo.gen_density},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_topology(path: str) -> Topology:
    payload = _load_json(path)
    try:
        nodes = tuple(
            Node(int(nd["id"]), float(nd["x_km"]), float(nd["y_km"]))
            for nd in payload["nodes"]
        )
        edges = tuple(
            Edge(int(e["u"]), int(e["v"]), float(e["length_km"]))
            for e in payload["edges"]
        )
        meta = payload.get("meta", {})
    except (KeyError, TypeError, ValueError) as exc:
        raise TopologyFormatError(f"{path}: malformed topology field: {exc}") from exc
    return Topology(
        nodes,
        edges,
        gen_seed=meta.get("seed"),
        gen_density=meta.get("density"),
    )


def save_requests(requests: RequestSet, path: str) -> None:
    payload = {
        "pairs": [{"s": r.s, "d": r.d, "weight": r.weight} for r in requests.pairs]
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_requests(path: str) -> RequestSet:
    payload = _load_json(path)
    try:
        pairs = tuple(
            Request(int(r["s"]), int(r["d"]), float(r["weight"]))
            for r in payload["pairs"]
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise TopologyFormatError(f"{path}: malformed request field: {exc}") from exc
    try:
        return RequestSet(pairs)
    except ValueError as exc:
        raise TopologyFormatError(f"{path}: {exc}") from exc


def _load_json(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise TopologyFormatError(
            f"{path}: parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
