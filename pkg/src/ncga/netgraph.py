"""Directed acyclic overlay topologies.

A :class:`Network` is an immutable DAG with a single source, a receiver set,
integer link capacities and per-link aliveness.  Churn is expressed as a
time-ordered list of link up/down events; :func:`apply_churn` returns the
topology as seen at a given round.
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    CycleDetected,
    EmptyReceiverSet,
    InfeasibleParameters,
    UnknownLink,
    UnreachableReceiver,
)


@dataclass(frozen=True)
class Link:
    id: int
    tail: int
    head: int
    capacity: int = 1
    alive: bool = True


@dataclass(frozen=True)
class Network:
    n_nodes: int
    links: tuple[Link, ...]
    source: int
    receivers: frozenset[int]
    target_rate: int

    @property
    def nodes(self) -> range:
        return range(self.n_nodes)

    @cached_property
    def in_links(self) -> tuple[tuple[int, ...], ...]:
        """Incoming link ids per node (all links, alive or not), ascending."""
        acc: list[list[int]] = [[] for _ in range(self.n_nodes)]
        for ln in self.links:
            acc[ln.head].append(ln.id)
        return tuple(tuple(sorted(a)) for a in acc)

    @cached_property
    def out_links(self) -> tuple[tuple[int, ...], ...]:
        acc: list[list[int]] = [[] for _ in range(self.n_nodes)]
        for ln in self.links:
            acc[ln.tail].append(ln.id)
        return tuple(tuple(sorted(a)) for a in acc)

    @cached_property
    def topo_order(self) -> tuple[int, ...]:
        return _topological_order(self.n_nodes, [(ln.tail, ln.head) for ln in self.links])

    @cached_property
    def link_order(self) -> tuple[int, ...]:
        """Link ids sorted so that every link follows all links into its tail."""
        pos = {v: i for i, v in enumerate(self.topo_order)}
        return tuple(sorted(range(len(self.links)), key=lambda i: (pos[self.links[i].tail], i)))

    def alive_in(self, node: int) -> list[int]:
        return [i for i in self.in_links[node] if self.links[i].alive]

    def alive_out(self, node: int) -> list[int]:
        return [i for i in self.out_links[node] if self.links[i].alive]

    def link(self, link_id: int) -> Link:
        if not 0 <= link_id < len(self.links):
            raise UnknownLink(f"no link with id {link_id}")
        return self.links[link_id]

    def with_links(self, links: Sequence[Link]) -> "Network":
        return replace(self, links=tuple(links))

    def with_target_rate(self, rate: int) -> "Network":
        """Same topology with a different target rate (no feasibility check)."""
        return replace(self, target_rate=rate)

    def set_alive(self, link_ids: Iterable[int], alive: bool) -> "Network":
        ids = set(link_ids)
        for i in ids:
            self.link(i)
        return self.with_links([replace(ln, alive=alive) if ln.id in ids else ln for ln in self.links])


@dataclass(frozen=True)
class ChurnEvent:
    time: int
    link_id: int
    action: str  # "down" | "up"

    def __post_init__(self):
        if self.action not in ("down", "up"):
            raise ValueError(f"churn action must be 'down' or 'up', got {self.action!r}")
        if self.time < 0:
            raise ValueError("churn time must be non-negative")


@dataclass(frozen=True)
class ChurnSchedule:
    events: tuple[ChurnEvent, ...] = field(default_factory=tuple)

    def __post_init__(self):
        times = [e.time for e in self.events]
        if times != sorted(times):
            raise ValueError("churn events must be sorted by time")
        down: set[int] = set()
        for e in self.events:
            if e.action == "down":
                if e.link_id in down:
                    raise ValueError(f"link {e.link_id} goes down twice without coming up")
                down.add(e.link_id)
            else:
                down.discard(e.link_id)

    def __len__(self) -> int:
        return len(self.events)

    def due(self, t: int) -> list[ChurnEvent]:
        """Events scheduled exactly at round ``t``."""
        return [e for e in self.events if e.time == t]


def _topological_order(n: int, edges: Sequence[tuple[int, int]]) -> tuple[int, ...]:
    indeg = [0] * n
    succ: list[list[int]] = [[] for _ in range(n)]
    for u, v in edges:
        succ[u].append(v)
        indeg[v] += 1
    heap = [v for v in range(n) if indeg[v] == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        u = heapq.heappop(heap)
        order.append(u)
        for v in succ[u]:
            indeg[v] -= 1
            if indeg[v] == 0:
                heapq.heappush(heap, v)
    if len(order) != n:
        raise CycleDetected("link list contains a directed cycle")
    return tuple(order)


def _max_flow(n: int, edges: Sequence[tuple[int, int, int]], s: int, t: int) -> tuple[int, set[int]]:
    """Edmonds-Karp.  Returns the flow value and the source side of a min cut."""
    head: list[int] = []
    cap: list[int] = []
    adj: list[list[int]] = [[] for _ in range(n)]
    for u, v, c in edges:
        adj[u].append(len(head))
        head.append(v)
        cap.append(c)
        adj[v].append(len(head))
        head.append(u)
        cap.append(0)
    flow = 0
    while True:
        prev = [-1] * n
        prev[s] = -2
        q = deque([s])
        while q and prev[t] == -1:
            u = q.popleft()
            for e in adj[u]:
                v = head[e]
                if cap[e] > 0 and prev[v] == -1:
                    prev[v] = e
                    q.append(v)
        if prev[t] == -1:
            reach = {v for v in range(n) if prev[v] != -1}
            return flow, reach
        push = None
        v = t
        while v != s:
            e = prev[v]
            push = cap[e] if push is None else min(push, cap[e])
            v = head[e ^ 1]
        v = t
        while v != s:
            e = prev[v]
            cap[e] -= push
            cap[e ^ 1] += push
            v = head[e ^ 1]
        flow += push


def max_flow(net: Network, receiver: int) -> int:
    """Maximum source-to-receiver flow over alive links."""
    edges = [(ln.tail, ln.head, ln.capacity) for ln in net.links if ln.alive]
    if receiver == net.source:
        return 0
    return _max_flow(net.n_nodes, edges, net.source, receiver)[0]


def min_max_flow(net: Network) -> int:
    return min(max_flow(net, r) for r in net.receivers)


def build_network(
    nodes: int,
    links: Sequence[tuple[int, int, int] | tuple[int, int]],
    source: int,
    receivers: Iterable[int],
    target_rate: int,
) -> Network:
    """Validate an edge list and return a :class:`Network`.

    ``links`` holds ``(tail, head)`` or ``(tail, head, capacity)`` tuples;
    link ids are their positions in the list.
    """
    receivers = frozenset(receivers)
    if not receivers:
        raise EmptyReceiverSet("at least one receiver is required")
    if not 0 <= source < nodes:
        raise ValueError(f"source {source} out of range")
    if source in receivers:
        raise ValueError("the source cannot be a receiver")
    if any(not 0 <= r < nodes for r in receivers):
        raise ValueError("receiver id out of range")
    if target_rate < 0:
        raise ValueError("target rate must be non-negative")
    built = []
    for i, spec in enumerate(links):
        tail, head, *rest = spec
        capacity = int(rest[0]) if rest else 1
        if not (0 <= tail < nodes and 0 <= head < nodes):
            raise ValueError(f"link {i} ({tail}->{head}) has an endpoint out of range")
        if tail == head:
            raise CycleDetected(f"link {i} is a self-loop on node {tail}")
        if capacity < 1:
            raise ValueError(f"link {i} has non-positive capacity")
        built.append(Link(i, int(tail), int(head), capacity))
    _topological_order(nodes, [(ln.tail, ln.head) for ln in built])
    net = Network(nodes, tuple(built), source, receivers, target_rate)
    for r in sorted(receivers):
        f = max_flow(net, r)
        if f < max(target_rate, 1):
            raise UnreachableReceiver(f"receiver {r} has max-flow {f} < target rate {target_rate}")
    return net


def merging_nodes(net: Network) -> list[int]:
    """Nodes that may code: alive in-degree >= 2 and alive out-degree >= 1."""
    return [
        v
        for v in net.topo_order
        if v != net.source and len(net.alive_in(v)) >= 2 and len(net.alive_out(v)) >= 1
    ]


def apply_churn(net: Network, schedule: ChurnSchedule, t: int) -> Network:
    """Topology after applying every event with ``time <= t``."""
    alive = [ln.alive for ln in net.links]
    for ev in schedule.events:
        if not 0 <= ev.link_id < len(net.links):
            raise UnknownLink(f"churn event refers to unknown link {ev.link_id}")
        if ev.time > t:
            break
        alive[ev.link_id] = ev.action == "up"
    if all(a == ln.alive for a, ln in zip(alive, net.links)):
        return net
    return net.with_links([replace(ln, alive=a) for ln, a in zip(net.links, alive)])


def peer_departure(net: Network, node: int, time: int, back: int | None = None) -> list[ChurnEvent]:
    """A peer leaving, expressed as down events on every incident link."""
    ids = sorted(set(net.in_links[node]) | set(net.out_links[node]))
    events = [ChurnEvent(time, i, "down") for i in ids]
    if back is not None:
        events += [ChurnEvent(back, i, "up") for i in ids]
    return events


def random_churn(
    net: Network,
    n_dynamic: int,
    horizon: int,
    seed: int,
    mean_up: float = 8.0,
    mean_down: float = 4.0,
) -> ChurnSchedule:
    """On/off churn on ``n_dynamic`` randomly chosen links.

    Each dynamic link alternates exponentially distributed up and down
    periods (rounded up to whole rounds) until ``horizon``.
    """
    rng = np.random.default_rng([seed, 0xC0FFEE])
    n_dynamic = min(n_dynamic, len(net.links))
    chosen = sorted(rng.choice(len(net.links), size=n_dynamic, replace=False).tolist())
    events = []
    for lid in chosen:
        t = 0
        while True:
            t += 1 + int(rng.exponential(mean_up))
            if t > horizon:
                break
            events.append(ChurnEvent(t, lid, "down"))
            t += 1 + int(rng.exponential(mean_down))
            if t > horizon:
                break
            events.append(ChurnEvent(t, lid, "up"))
    events.sort(key=lambda e: (e.time, e.link_id, e.action == "up"))
    return ChurnSchedule(tuple(events))


def generate_random_dag(
    n_nodes: int,
    n_links: int,
    n_receivers: int,
    target_rate: int,
    seed: int,
    max_attempts: int = 100,
) -> Network:
    """Random connected DAG with a guaranteed min-cut to every receiver.

    Node ids double as ranks: node 0 is the source and links only point
    from lower to higher ids.  A random spanning arborescence keeps every
    node reachable, the remaining links are drawn uniformly among unused
    forward pairs, and link capacities start at 1 and are raised on
    minimum cuts until each receiver's max-flow reaches ``target_rate``.
    """
    if n_nodes < 2:
        raise InfeasibleParameters("need at least two nodes")
    if n_links < n_nodes - 1:
        raise InfeasibleParameters(f"{n_links} links cannot connect {n_nodes} nodes")
    if n_links > n_nodes * (n_nodes - 1) // 2:
        raise InfeasibleParameters(f"{n_links} links exceed the simple DAG limit for {n_nodes} nodes")
    if not 1 <= n_receivers < n_nodes:
        raise InfeasibleParameters("receiver count must be in [1, n_nodes)")
    if target_rate < 1:
        raise InfeasibleParameters("target rate must be positive")

    rng = np.random.default_rng(seed)
    for _ in range(max_attempts):
        net = _draw_dag(rng, n_nodes, n_links, n_receivers, target_rate)
        if net is not None:
            return net
    raise InfeasibleParameters(f"no feasible topology after {max_attempts} attempts")


def _draw_dag(rng, n_nodes, n_links, n_receivers, target_rate, max_bumps=10_000):
    pairs = set()
    for j in range(1, n_nodes):
        pairs.add((int(rng.integers(0, j)), j))
    free = [(i, j) for j in range(1, n_nodes) for i in range(j) if (i, j) not in pairs]
    extra = n_links - len(pairs)
    if extra:
        pick = rng.choice(len(free), size=extra, replace=False)
        pairs.update(free[k] for k in pick)
    edges = sorted(pairs, key=lambda p: (p[0], p[1]))
    caps = [1] * len(edges)
    receivers = sorted(int(r) for r in rng.choice(np.arange(1, n_nodes), size=n_receivers, replace=False))

    bumps = 0
    for r in receivers:
        while True:
            flow, reach = _max_flow(n_nodes, [(u, v, c) for (u, v), c in zip(edges, caps)], 0, r)
            if flow >= target_rate:
                break
            cut = [k for k, (u, v) in enumerate(edges) if u in reach and v not in reach]
            caps[cut[int(rng.integers(0, len(cut)))]] += 1
            bumps += 1
            if bumps > max_bumps:
                return None
    links = tuple(Link(i, u, v, c) for i, ((u, v), c) in enumerate(zip(edges, caps)))
    return Network(n_nodes, links, 0, frozenset(receivers), target_rate)


# -- text format -----------------------------------------------------------

def serialize(net: Network, schedule: ChurnSchedule | None = None) -> str:
    lines = [f"nodes {net.n_nodes} links {len(net.links)} source {net.source} rate {net.target_rate}"]
    lines += [f"recv {r}" for r in sorted(net.receivers)]
    lines += [f"link {ln.id} {ln.tail} {ln.head} {ln.capacity}" for ln in net.links]
    if schedule is not None:
        lines += [f"churn {e.time} {e.link_id} {e.action}" for e in schedule.events]
    return "\n".join(lines) + "\n"


def parse(text: str, validate: bool = True) -> tuple[Network, ChurnSchedule]:
    """Parse the line-oriented graph format.

    With ``validate`` the result goes through :func:`build_network`;
    otherwise only structural checks (acyclicity, ids) are made.
    """
    header = None
    receivers: list[int] = []
    links: dict[int, tuple[int, int, int]] = {}
    events: list[ChurnEvent] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        try:
            if tok[0] == "nodes":
                kv = dict(zip(tok[0::2], tok[1::2]))
                header = (int(kv["nodes"]), int(kv["links"]), int(kv["source"]), int(kv["rate"]))
            elif tok[0] == "recv":
                receivers.append(int(tok[1]))
            elif tok[0] == "link":
                lid, tail, head, cap = (int(x) for x in tok[1:5])
                links[lid] = (tail, head, cap)
            elif tok[0] == "churn":
                events.append(ChurnEvent(int(tok[1]), int(tok[2]), tok[3]))
            else:
                raise ValueError(f"unknown record {tok[0]!r}")
        except (KeyError, IndexError, ValueError) as exc:
            raise ValueError(f"line {lineno}: {exc}") from exc
    if header is None:
        raise ValueError("missing 'nodes ... links ... source ... rate ...' header")
    n, m, source, rate = header
    if sorted(links) != list(range(m)):
        raise ValueError(f"expected link ids 0..{m - 1}")
    edge_list = [links[i] for i in range(m)]
    if validate:
        net = build_network(n, edge_list, source, receivers, rate)
    else:
        if not receivers:
            raise EmptyReceiverSet("at least one receiver is required")
        _topological_order(n, [(t, h) for t, h, _ in edge_list])
        net = Network(n, tuple(Link(i, t, h, c) for i, (t, h, c) in enumerate(edge_list)), source,
                      frozenset(receivers), rate)
    for e in events:
        net.link(e.link_id)
    return net, ChurnSchedule(tuple(events))


def load(path, validate: bool = True) -> tuple[Network, ChurnSchedule]:
    with open(path) as fh:
        return parse(fh.read(), validate=validate)


def save(path, net: Network, schedule: ChurnSchedule | None = None) -> None:
    with open(path, "w") as fh:
        fh.write(serialize(net, schedule))


def butterfly(target_rate: int = 2) -> Network:
    """The canonical butterfly: s=0, a=1, b=2, m1=3, m2=4, r1=5, r2=6."""
    links = [(0, 1), (0, 2), (1, 5), (2, 6), (1, 3), (2, 3), (3, 4), (4, 5), (4, 6)]
    return build_network(7, links, 0, {5, 6}, target_rate)
