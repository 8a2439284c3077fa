"""Round-based P2P content distribution with selective random linear coding.

Time advances in synchronous rounds.  In each round every link believed
alive carries up to ``capacity`` packets, chosen from the state at the
start of the round, so a packet moves one hop per round.  A sender learns
that a link died one round late; packets sent over a dead link are lost
and retransmitted later.

Per outgoing link a node acts as

* source  - fresh random combination of the original segment blocks,
* coder   - fresh random combination of everything in its segment buffer
            (multi-bit mask),
* forward - fresh random combination of the packets that arrived on one
            incoming link only (single-bit mask, or any non-merging node).
            If that link is down the lowest-id live incoming link stands in.

Receivers keep only innovative packets; a segment is decoded as soon as its
buffer reaches rank B.  Transfers are pulled: each round, heads ask their
in-links for what is missing and still innovative, and relays pass the
demand upstream.  Only a window of the lowest unfinished segments is in
flight at a time.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .coding import CodingAssignment, Layout
from .errors import MissingGaResult
from .galois import field as gf_field
from .netgraph import ChurnSchedule, Network, apply_churn, random_churn

STRATEGIES = ("GANS", "RSN", "CAN", "NONE")


@dataclass(frozen=True)
class SimConfig:
    content_size_bytes: int
    block_size_bytes: int = 16
    blocks_per_segment: int = 8
    strategy: str = "CAN"
    rsn_count: int = 0
    churn: ChurnSchedule = field(default_factory=ChurnSchedule)
    deadline_rounds: int = 1000
    seed: int = 0
    q: int = 8
    ideal: str = "peer"  # "peer": receivers x blocks; "tree": shortest-path tree links x blocks
    window: int = 8  # segments in flight network-wide
    trace: bool = False

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.block_size_bytes < 1 or self.blocks_per_segment < 1:
            raise ValueError("block size and blocks per segment must be positive")
        if self.content_size_bytes < 1:
            raise ValueError("content size must be positive")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.ideal not in ("peer", "tree"):
            raise ValueError("ideal must be 'peer' or 'tree'")

    @property
    def n_blocks(self) -> int:
        return math.ceil(self.content_size_bytes / self.block_size_bytes)

    @property
    def n_segments(self) -> int:
        return math.ceil(self.n_blocks / self.blocks_per_segment)


@dataclass(frozen=True)
class SimMetrics:
    packet_redundancy: float
    avg_distribution_time: Optional[float]
    max_download_time: Optional[int]
    system_throughput: float
    failure_rate: float


@dataclass(frozen=True)
class CodedPacket:
    segment_id: int
    coding_vector: np.ndarray
    payload: np.ndarray


@dataclass
class PeerState:
    node: int
    buffers: list["SegmentBuffer"]
    decoded_segments: set[int] = field(default_factory=set)
    completion_round: Optional[int] = None


@dataclass
class SimResult:
    metrics: SimMetrics
    peers: dict[int, PeerState]
    rounds: int
    sent: int
    received: int
    lost: int
    redundant: int
    decode_errors: int
    timeline: list[int]  # cumulative decoded bytes after each round
    content: np.ndarray
    trace: list[tuple[int, int, int, bool]] = field(default_factory=list)


@dataclass(frozen=True)
class CodingPlan:
    """Effective coding assignment used by a simulation run."""

    strategy: str
    nodes: frozenset[int]
    assignment: CodingAssignment
    genome: np.ndarray = field(repr=False, compare=False)


class SegmentBuffer:
    """Innovative packets of one segment, kept in reduced row echelon form
    as augmented rows ``[coding vector | payload]``."""

    def __init__(self, gf, B: int, S: int):
        self.gf = gf
        self.B = B
        self.rows = np.zeros((B, B + S), dtype=gf.dtype)
        self.pivots: list[int] = []

    @property
    def rank(self) -> int:
        return len(self.pivots)

    def reduce(self, row: np.ndarray) -> np.ndarray:
        if self.pivots:
            r = len(self.pivots)
            row = row ^ self.gf.combine(row[self.pivots], self.rows[:r])
        return row

    def insert(self, row: np.ndarray) -> bool:
        """Add a packet; returns False (and keeps nothing) if not innovative."""
        row = self.reduce(row)
        nz = np.flatnonzero(row[: self.B])
        if nz.size == 0:
            return False
        col = int(nz[0])
        row = self.gf.mul(self.gf.inv(row[col]), row)
        r = len(self.pivots)
        if r:
            f = self.rows[:r, col].copy()
            self.rows[:r] ^= self.gf.mul(f[:, None], row[None, :])
        self.rows[r] = row
        self.pivots.append(col)
        if r and col < self.pivots[-2]:
            order = np.argsort(self.pivots)
            self.rows[: r + 1] = self.rows[order]
            self.pivots = [self.pivots[i] for i in order]
        return True

    def decoded(self) -> np.ndarray:
        if self.rank < self.B:
            from .errors import RankDeficient
            raise RankDeficient(f"rank {self.rank} < {self.B}")
        return self.rows[:, self.B:]

    def combination(self, rng: np.random.Generator) -> np.ndarray:
        r = self.rank
        c = self.gf.random(rng, r, nonzero=True)
        return self.gf.combine(c, self.rows[:r])


def select_coding_nodes(net: Network, strategy: str, rsn_count: int = 0,
                        ga_result: CodingAssignment | None = None, seed: int = 0) -> CodingPlan:
    """Coding plan for one of the compared strategies.

    CAN codes at every merging node; RSN at ``rsn_count`` randomly chosen
    merging nodes; NONE nowhere.  Non-coding merging links forward one
    uniformly chosen input.  GANS uses ``ga_result`` as is.
    """
    lay = Layout(net)
    rng = np.random.default_rng([seed, 0x5E1EC7])
    if strategy == "GANS":
        if ga_result is None:
            raise MissingGaResult("GANS needs the GA's best assignment")
        genome = lay.encode(ga_result)
    elif strategy == "CAN":
        genome = lay.all_ones()
    elif strategy in ("RSN", "NONE"):
        genome = lay.single_bits(rng)
        if strategy == "RSN":
            cands = lay.coding_candidates
            if not 0 <= rsn_count <= len(cands):
                raise ValueError(f"rsn_count must be in [0, {len(cands)}]")
            chosen = set(rng.choice(cands, size=rsn_count, replace=False).tolist()) if rsn_count else set()
            for k, slot in enumerate(lay.slots):
                if slot.node in chosen:
                    genome[lay.gene_range(k)] = 1
    else:
        raise ValueError(f"unknown strategy {strategy!r}")
    a = lay.decode(genome)
    return CodingPlan(strategy, frozenset(a.coding_nodes()), a, genome)


def _tree_links(net: Network) -> int:
    """Links on the union of BFS shortest paths from the source to receivers."""
    from collections import deque

    prev = {net.source: None}
    q = deque([net.source])
    while q:
        u = q.popleft()
        for lid in net.out_links[u]:
            v = net.links[lid].head
            if v not in prev:
                prev[v] = lid
                q.append(v)
    used = set()
    for r in net.receivers:
        v = r
        while prev.get(v) is not None:
            lid = prev[v]
            used.add(lid)
            v = net.links[lid].tail
    return len(used)


class _Simulation:
    def __init__(self, net: Network, plan: CodingPlan, cfg: SimConfig):
        self.net = net
        self.cfg = cfg
        self.gf = gf_field(cfg.q)
        self.B = cfg.blocks_per_segment
        self.S = cfg.block_size_bytes
        self.n_seg = cfg.n_segments
        self.rng = np.random.default_rng([cfg.seed, 0x51A])
        content_rng = np.random.default_rng([cfg.seed, 0xC0DE])
        total = self.n_seg * self.B * self.S
        content = np.zeros(total, dtype=np.uint8)
        content[: cfg.content_size_bytes] = content_rng.integers(0, 256, cfg.content_size_bytes, dtype=np.uint8)
        if self.gf.q != 8:
            content &= self.gf.order
        self.content = content
        self.segments = content.reshape(self.n_seg, self.B, self.S).astype(self.gf.dtype)
        self.segment_bytes = [
            max(0, min(cfg.content_size_bytes - s * self.B * self.S, self.B * self.S))
            for s in range(self.n_seg)
        ]

        lay = Layout(net)
        self.mode: list[tuple[str, tuple[int, ...]]] = []
        for ln in net.links:
            ins = net.in_links[ln.tail]
            k = lay.slot_of_link.get(ln.id)
            if ln.tail == net.source:
                self.mode.append(("source", ()))
            elif k is not None:
                bits = plan.genome[lay.gene_range(k)]
                chosen = tuple(e for e, b in zip(ins, bits) if b)
                if len(chosen) >= 2:
                    self.mode.append(("code", ins))
                elif len(chosen) == 1:
                    self.mode.append(("forward", chosen))
                else:
                    self.mode.append(("idle", ()))
            elif len(ins) == 1:
                self.mode.append(("forward", ins))
            else:
                self.mode.append(("idle", ()))

        self.receivers = sorted(net.receivers)
        self.peers = {
            v: PeerState(v, [SegmentBuffer(self.gf, self.B, self.S) for _ in range(self.n_seg)])
            for v in net.nodes if v != net.source
        }
        # what arrived on each link, per segment; forwarders draw only from this
        self.link_span = [[SegmentBuffer(self.gf, self.B, self.S) for _ in range(self.n_seg)]
                          for _ in net.links]
        self.complete = np.zeros((net.n_nodes, self.n_seg), dtype=bool)
        self.is_receiver = np.zeros(net.n_nodes, dtype=bool)
        self.is_receiver[self.receivers] = True
        self.link_rev = list(reversed(net.link_order))

    # -- helpers -------------------------------------------------------------
    def _inputs(self, lid: int, alive) -> tuple[str, int | None]:
        mode, ins = self.mode[lid]
        if mode != "forward":
            return mode, None
        e = ins[0]
        if not alive[e]:
            live = [x for x in self.net.in_links[self.net.links[lid].tail] if alive[x]]
            if not live:
                return "idle", None
            e = live[0]
        return "forward", e

    def _plan(self, alive) -> list[tuple[int, int, int]]:
        """Packets to send this round as ``(link, segment, count)``.

        Heads pull.  Visiting nodes downstream first, each head splits what
        it lacks over its live in-links, segments in random order, taking from
        each sender only what is innovative for it.  Demand no sender can
        meet yet is passed upstream as a request.  A relay asks upstream for
        everything asked of it (sent now or not), capped by the room left in
        its buffers, which keeps a steady pipeline without flooding.
        """
        net, B = self.net, self.B
        extra = np.zeros((len(net.links), self.n_seg), dtype=np.int64)  # total asked of each link
        plan = []
        pending = ~self.complete[self.receivers].all(axis=0)
        lo = int(np.argmax(pending)) if pending.any() else self.n_seg
        active = np.zeros(self.n_seg, dtype=bool)
        active[lo: lo + self.cfg.window] = True
        for h in reversed(net.topo_order):
            if h == net.source:
                continue
            bufs = self.peers[h].buffers
            room = B - np.array([b.rank for b in bufs])
            node_dem = room * active if self.is_receiver[h] else np.zeros(self.n_seg, dtype=np.int64)
            span_dem: dict[int, np.ndarray] = {}
            for out in net.out_links[h]:
                if not alive[out]:
                    continue
                mode, src = self._inputs(out, alive)
                if mode == "code":
                    node_dem += extra[out]
                elif mode == "forward":
                    span_dem[src] = span_dem.get(src, 0) + extra[out]
            np.minimum(node_dem, room, out=node_dem)
            for e, d in span_dem.items():
                span_room = B - np.array([b.rank for b in self.link_span[e]])
                span_dem[e] = np.minimum(d, span_room)

            ins = []
            for e in net.in_links[h]:
                if alive[e]:
                    mode, src = self._inputs(e, alive)
                    if mode != "idle":
                        ins.append((e, mode, src, net.links[e].capacity))
            for e, mode, src, cap in ins:
                sd = span_dem.get(e)
                dem = node_dem > 0 if sd is None else (node_dem > 0) | (sd > 0)
                # random order spreads the active segments over the in-links
                segs = self.rng.permutation(np.flatnonzero(dem))
                for seg in segs:
                    if cap == 0:
                        break
                    sender = self._sender(e, seg, mode, src)
                    n = 0
                    if node_dem[seg] > 0:
                        n = min(node_dem[seg], self._gap(sender, bufs[seg]))
                    if sd is not None and sd[seg] > n:
                        n = max(n, min(sd[seg], self._gap(sender, self.link_span[e][seg])))
                    n = min(n, cap)
                    if n:
                        plan.append((e, int(seg), int(n)))
                        extra[e, seg] += n
                        cap -= n
                        node_dem[seg] = max(0, node_dem[seg] - n)
                        if sd is not None:
                            sd[seg] = max(0, sd[seg] - n)
            # look one round ahead: each in-link may also be asked for a
            # full capacity of what is still missing
            for e, mode, src, cap in ins:
                if mode == "source":
                    continue
                sd = span_dem.get(e)
                rem = node_dem if sd is None else np.maximum(node_dem, sd)
                for seg in np.flatnonzero(rem > 0):
                    k = min(int(rem[seg]), cap)
                    extra[e, seg] += k
                    node_dem[seg] -= min(node_dem[seg], k)
                    cap -= k
                    if cap == 0:
                        break
        return plan

    def _gap(self, sender: "SegmentBuffer | None", target: SegmentBuffer) -> int:
        """How many packets from ``sender`` can still be innovative for
        ``target`` (``None`` stands for the source, which holds everything)."""
        B = self.B
        rt = target.rank
        if rt >= B:
            return 0
        if sender is None:
            return B - rt
        rs = sender.rank
        if rs == 0 or rt == 0:
            return rs
        srows = sender.rows[:rs, :B]
        reduced = srows ^ self.gf.matmul(srows[:, target.pivots], target.rows[:rt, :B])
        return self.gf.rank(reduced)

    def _make(self, lid: int, seg: int, mode: str, src) -> np.ndarray:
        if mode == "source":
            c = self.gf.random(self.rng, self.B, nonzero=True)
            payload = self.gf.combine(c, self.segments[seg])
            return np.concatenate([c, payload])
        return self._sender(lid, seg, mode, src).combination(self.rng)

    def _sender(self, lid: int, seg: int, mode: str, src) -> "SegmentBuffer | None":
        if mode == "source":
            return None
        if mode == "code":
            return self.peers[self.net.links[lid].tail].buffers[seg]
        return self.link_span[src][seg]

    # -- main loop -------------------------------------------------------------
    def run(self) -> SimResult:
        net, cfg = self.net, self.cfg
        sent = received = lost = redundant = decode_errors = 0
        decoded_bytes = 0
        timeline: list[int] = []
        trace: list[tuple[int, int, int, bool]] = []
        believed = [ln.alive for ln in apply_churn(net, cfg.churn, 0).links]
        rounds = 0
        pending_receivers = set(self.receivers)
        for t in range(1, cfg.deadline_rounds + 1):
            if not pending_receivers:
                break
            rounds = t
            actual = [ln.alive for ln in apply_churn(net, cfg.churn, t).links]
            outgoing = [(lid, seg, self._make(lid, seg, *self._inputs(lid, believed)))
                        for lid, seg, n in self._plan(believed) for _ in range(n)]
            for lid, seg, pkt in outgoing:
                sent += 1
                if not actual[lid]:
                    lost += 1
                    if cfg.trace:
                        trace.append((t, lid, seg, False))
                    continue
                received += 1
                head = net.links[lid].head
                self.link_span[lid][seg].insert(pkt)
                innovative = self.peers[head].buffers[seg].insert(pkt)
                if not innovative:
                    redundant += 1
                if cfg.trace:
                    trace.append((t, lid, seg, innovative))
            for v in list(pending_receivers):
                peer = self.peers[v]
                for seg, buf in enumerate(peer.buffers):
                    if seg in peer.decoded_segments or buf.rank < self.B:
                        continue
                    peer.decoded_segments.add(seg)
                    self.complete[v, seg] = True
                    if not np.array_equal(buf.decoded(), self.segments[seg]):
                        decode_errors += 1
                    decoded_bytes += self.segment_bytes[seg]
                if len(peer.decoded_segments) == self.n_seg:
                    peer.completion_round = t
                    pending_receivers.discard(v)
            timeline.append(decoded_bytes)
            believed = actual

        times = [self.peers[v].completion_round for v in self.receivers
                 if self.peers[v].completion_round is not None]
        n_recv = len(self.receivers)
        if cfg.ideal == "peer":
            ideal = n_recv * self.n_seg * self.B
        else:
            ideal = _tree_links(net) * self.n_seg * self.B
        max_t = max(times) if times else None
        if max_t:
            throughput = decoded_bytes / max_t
        else:
            throughput = decoded_bytes / rounds if rounds else 0.0
        metrics = SimMetrics(
            packet_redundancy=sent / ideal if ideal else 0.0,
            avg_distribution_time=float(np.mean(times)) if times else None,
            max_download_time=max_t,
            system_throughput=float(throughput),
            failure_rate=(n_recv - len(times)) / n_recv if n_recv else 0.0,
        )
        return SimResult(metrics, self.peers, rounds, sent, received, lost, redundant, decode_errors,
                         timeline, self.content[: cfg.content_size_bytes].copy(), trace)


def simulate(net: Network, coding: CodingPlan | CodingAssignment, cfg: SimConfig) -> SimResult:
    """Run one simulation and return metrics plus the final peer state."""
    if isinstance(coding, CodingAssignment):
        lay = Layout(net)
        g = lay.encode(coding)
        coding = CodingPlan(cfg.strategy, frozenset(coding.coding_nodes()), coding, g)
    return _Simulation(net, coding, cfg).run()


def run_simulation(net: Network, coding: CodingPlan | CodingAssignment, cfg: SimConfig) -> SimMetrics:
    return simulate(net, coding, cfg).metrics


def compute_metrics(result: SimResult) -> SimMetrics:
    return result.metrics


def compare_strategies(
    net: Network,
    cfg_base: SimConfig,
    ga_result: CodingAssignment | None,
    seeds: Iterable[int],
    strategies: Sequence[str] = STRATEGIES,
    dynamic_links: int = 0,
) -> dict[str, list[SimMetrics]]:
    """Run every strategy over ``seeds`` with paired content, coefficient
    streams and churn.  With ``dynamic_links`` > 0 a fresh on/off churn
    schedule is drawn per seed and shared by all strategies."""
    if "GANS" in strategies and ga_result is None:
        raise MissingGaResult("GANS needs the GA's best assignment")
    rsn = cfg_base.rsn_count
    if "RSN" in strategies and not rsn and ga_result is not None:
        rsn = len(ga_result.coding_nodes())
    out: dict[str, list[SimMetrics]] = {s: [] for s in strategies}
    for seed in seeds:
        churn = cfg_base.churn
        if dynamic_links:
            churn = random_churn(net, dynamic_links, cfg_base.deadline_rounds, seed)
        for strat in strategies:
            plan = select_coding_nodes(net, strat, rsn, ga_result, seed)
            cfg = replace(cfg_base, strategy=strat, seed=seed, churn=churn, rsn_count=rsn)
            out[strat].append(run_simulation(net, plan, cfg))
    return out


def summarize(metrics: Sequence[SimMetrics]) -> dict[str, tuple[float, float]]:
    """Mean and standard deviation of each metric (absent values skipped)."""
    out = {}
    for name in SimMetrics.__dataclass_fields__:
        vals = [getattr(m, name) for m in metrics if getattr(m, name) is not None]
        out[name] = (float(np.mean(vals)), float(np.std(vals))) if vals else (float("nan"), float("nan"))
    return out


METRIC_COLUMNS = ["strategy", "seed", "redundancy", "avg_time", "max_time", "throughput", "failure_rate"]


def _fmt(x) -> str:
    if x is None:
        return ""
    return f"{x:.6f}" if isinstance(x, float) else str(x)


def write_metrics_csv(path, rows: Iterable[tuple], extra_columns: Sequence[str] = ()) -> None:
    """One line per ``(strategy, seed, metrics, *extra)`` row."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS + list(extra_columns))
        for strat, seed, m, *extra in rows:
            w.writerow([strat, seed, _fmt(m.packet_redundancy), _fmt(m.avg_distribution_time),
                        _fmt(m.max_download_time), _fmt(m.system_throughput), _fmt(m.failure_rate),
                        *map(_fmt, extra)])


def write_trace(path, result: SimResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["round", "link", "segment", "innovative"])
        for row in result.trace:
            w.writerow([row[0], row[1], row[2], int(row[3])])


def rsn_min_count(net: Network, seed: int = 0) -> int:
    """Smallest number of random coding nodes that still reaches the target
    rate, found by bisection.

    The merging nodes are put in one random order and RSN(k) codes at the
    first k of them, with the same forwarding choice everywhere else, so
    feasibility is monotone in k and bisection is exact for that order.
    Feasibility uses the generic (symbolic) rate.
    """
    from .coding import symbolic_rates

    lay = Layout(net)
    rng = np.random.default_rng([seed, 0xB15EC7])
    base = lay.single_bits(rng)
    order = list(rng.permutation(lay.coding_candidates))
    target = net.target_rate

    def feasible(k: int) -> bool:
        g = base.copy()
        chosen = set(order[:k])
        for i, slot in enumerate(lay.slots):
            if slot.node in chosen:
                g[lay.gene_range(i)] = 1
        rates = symbolic_rates(net, genome=g)
        return min(rates.values()) >= target

    lo, hi = 0, len(order)
    if not feasible(hi):
        raise ValueError("target rate is not reachable even with every merging node coding")
    while lo < hi:
        mid = (lo + hi) // 2
        if feasible(mid):
            hi = mid
        else:
            lo = mid + 1
    return lo
