"""Coding assignments and their evaluation.

A coding assignment gives every merging node, for each outgoing link, a
binary mask over its incoming links: bit ``1`` means the incoming link may
contribute to what is sent on that outgoing link.  A mask with two or more
ones makes the outgoing link a coding link.

Rates are evaluated by propagating global coding vectors with random
GF(2^q) coefficients.  A link of capacity ``c`` carries ``c`` vectors per
use.  :func:`symbolic_rates` computes the same quantity for indeterminate
coefficients as a vertex-capacitated max-flow on the link graph, which is
exact and serves as the independent check of :func:`evaluate_rates`.
"""

from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass
from typing import Callable, Iterator, Mapping, NamedTuple

import numpy as np
from scipy import stats

from .errors import InconsistentAssignment, InvalidCoefficients, TooLarge
from .galois import field
from .netgraph import Network, _max_flow

DEFAULT_TRIALS = 3


# -- layout and assignments -------------------------------------------------

@dataclass(frozen=True)
class Slot:
    """One mask position: ``node`` decides what goes out on ``out_link``."""

    node: int
    out_link: int
    in_links: tuple[int, ...]


class Layout:
    """Gene layout of a network: slots in (topological node, out-link id) order."""

    def __init__(self, net: Network):
        self.net = net
        self.coding_candidates = [
            v for v in net.topo_order
            if v != net.source and len(net.in_links[v]) >= 2 and len(net.out_links[v]) >= 1
        ]
        self.slots: list[Slot] = []
        self.offsets: list[int] = []
        off = 0
        for v in self.coding_candidates:
            for lid in net.out_links[v]:
                self.slots.append(Slot(v, lid, net.in_links[v]))
                self.offsets.append(off)
                off += len(net.in_links[v])
        self.length = off
        self.slot_of_link = {s.out_link: i for i, s in enumerate(self.slots)}
        node_ids = sorted({s.node for s in self.slots})
        self._node_index = {v: i for i, v in enumerate(node_ids)}
        self.slot_node = np.array([self._node_index[s.node] for s in self.slots], dtype=np.int64)
        self.node_ids = node_ids

    def gene_range(self, k: int) -> slice:
        return slice(self.offsets[k], self.offsets[k] + len(self.slots[k].in_links))

    def decode(self, genome) -> "CodingAssignment":
        genome = np.asarray(genome)
        if genome.shape != (self.length,):
            raise InconsistentAssignment(f"genome length {genome.shape} != {self.length}")
        masks = {
            (s.node, s.out_link): tuple(int(b) for b in genome[self.gene_range(k)])
            for k, s in enumerate(self.slots)
        }
        return CodingAssignment(masks)

    def encode(self, a: "CodingAssignment") -> np.ndarray:
        self.check(a)
        genome = np.zeros(self.length, dtype=np.uint8)
        for k, s in enumerate(self.slots):
            genome[self.gene_range(k)] = a.masks[(s.node, s.out_link)]
        return genome

    def check(self, a: "CodingAssignment") -> None:
        expected = {(s.node, s.out_link): len(s.in_links) for s in self.slots}
        if set(a.masks) != set(expected):
            raise InconsistentAssignment("assignment keys do not match the network's merging links")
        for key, mask in a.masks.items():
            if len(mask) != expected[key] or any(b not in (0, 1) for b in mask):
                raise InconsistentAssignment(f"bad mask {mask} for {key}")

    def counts(self, genome) -> tuple[int, int]:
        """``(N_n, N_l)`` for a genome."""
        if not self.slots:
            return 0, 0
        genome = np.asarray(genome, dtype=np.int64)
        ones = np.add.reduceat(genome, self.offsets) if self.length else np.zeros(0)
        coding = ones >= 2
        n_l = int(coding.sum())
        n_n = int(np.unique(self.slot_node[coding]).size)
        return n_n, n_l

    def all_ones(self) -> np.ndarray:
        return np.ones(self.length, dtype=np.uint8)

    def single_bits(self, rng: np.random.Generator) -> np.ndarray:
        """Every slot forwards one uniformly chosen incoming link."""
        g = np.zeros(self.length, dtype=np.uint8)
        for k, s in enumerate(self.slots):
            g[self.offsets[k] + int(rng.integers(len(s.in_links)))] = 1
        return g


@dataclass(frozen=True)
class CodingAssignment:
    """Per (merging node, outgoing link) contribution masks.

    Mask bits are ordered by ascending incoming link id.
    """

    masks: Mapping[tuple[int, int], tuple[int, ...]]

    def coding_links(self) -> list[tuple[int, int]]:
        return sorted(k for k, m in self.masks.items() if sum(m) >= 2)

    def coding_nodes(self) -> list[int]:
        return sorted({node for node, _ in self.coding_links()})

    @classmethod
    def uniform(cls, net: Network, value: int) -> "CodingAssignment":
        lay = Layout(net)
        return lay.decode(np.full(lay.length, value, dtype=np.uint8))


def count_resources(net: Network, a: CodingAssignment) -> tuple[int, int]:
    """Number of coding nodes and coding links."""
    Layout(net).check(a)
    links = a.coding_links()
    return len({n for n, _ in links}), len(links)


def serialize_assignment(a: CodingAssignment) -> str:
    lines = [f"mask {node} {lid} {''.join(str(b) for b in m)}" for (node, lid), m in sorted(a.masks.items())]
    return "\n".join(lines) + ("\n" if lines else "")


def parse_assignment(text: str) -> CodingAssignment:
    masks = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if tok[0] != "mask" or len(tok) != 4 or set(tok[3]) - {"0", "1"}:
            raise ValueError(f"line {lineno}: expected 'mask <node> <out_link_id> <bits>'")
        masks[(int(tok[1]), int(tok[2]))] = tuple(int(c) for c in tok[3])
    return CodingAssignment(masks)


# -- rate evaluation ----------------------------------------------------------

class RateEvaluator:
    """Random-coefficient rate evaluation for a fixed network.

    Coefficients are drawn for every (outgoing channel, incoming channel)
    pair of the full topology whether or not the link is alive or the
    mask bit is set, so downing a link or clearing a bit never shifts the
    random stream seen by the rest of the network.
    """

    def __init__(self, net: Network, q: int = 8):
        self.net = net
        self.gf = field(q)
        self.layout = Layout(net)
        self.h = max(net.target_rate, 1)
        caps = np.array([ln.capacity for ln in net.links], dtype=np.int64)
        self.ch_start = np.concatenate([[0], np.cumsum(caps)])
        self.n_channels = int(self.ch_start[-1])
        self.receivers = sorted(net.receivers)

        # Flat list of contributions (out channel <- coeff * in channel).
        # Virtual source symbols occupy rows n_channels+1 .. n_channels+h of
        # the vector table; row n_channels stays zero for padding.
        virt = self.n_channels + 1
        depth = {}
        for v in net.topo_order:
            depth[v] = max((depth[net.links[e].tail] + 1 for e in net.in_links[v]), default=0)
        n_genes = self.layout.length
        levels: dict[int, list[tuple[int, int, int, int, int]]] = {}
        off = 0
        for lid in net.link_order:
            ln = net.links[lid]
            if ln.tail == net.source:
                inputs = [(virt + i, n_genes) for i in range(self.h)]
            else:
                k = self.layout.slot_of_link.get(lid)
                inputs = []
                for pos, e in enumerate(net.in_links[ln.tail]):
                    gene = self.layout.offsets[k] + pos if k is not None else n_genes
                    inputs += [(int(c), gene) for c in range(self.ch_start[e], self.ch_start[e + 1])]
            rows = levels.setdefault(depth[ln.tail], [])
            for ch in range(self.ch_start[lid], self.ch_start[lid + 1]):
                for src, gene in inputs:
                    rows.append((int(ch), src, off, gene, lid))
                    off += 1
        self.n_coeffs = off
        self._levels = []
        for d in sorted(levels):
            e = np.array(sorted(levels[d]), dtype=np.int64).reshape(-1, 5)
            if e.size == 0:
                continue
            out_ch, starts = np.unique(e[:, 0], return_index=True)
            self._levels.append((out_ch, starts, e[:, 1], e[:, 2], e[:, 3], e[:, 4]))

        rows = [
            np.concatenate([np.arange(self.ch_start[e], self.ch_start[e + 1]) for e in net.in_links[r]])
            if net.in_links[r] else np.zeros(0, dtype=np.int64)
            for r in self.receivers
        ]
        width = max((len(x) for x in rows), default=0)
        idx = np.full((len(rows), max(width, 1)), self.n_channels, dtype=np.int64)
        for i, x in enumerate(rows):
            idx[i, : len(x)] = x
        self._recv_idx = idx

    def draw(self, trials: int, seed) -> np.ndarray:
        rng = np.random.default_rng(seed)
        return self.gf.random(rng, (trials, self.n_coeffs), nonzero=True)

    def channel_vectors(self, genome, coeffs: np.ndarray, alive=None) -> np.ndarray:
        """Global coding vectors, shape ``(trials, n_channels + 1 + h, h)``.

        Row ``n_channels`` is all-zero padding; the last ``h`` rows are the
        source symbols.
        """
        gf = self.gf
        ext = np.append(np.asarray(genome, dtype=gf.dtype), gf.dtype(1))
        if alive is None:
            alive = np.array([ln.alive for ln in self.net.links], dtype=gf.dtype)
        else:
            alive = np.asarray(alive, dtype=gf.dtype)
        T = coeffs.shape[0]
        V = np.zeros((T, self.n_channels + 1 + self.h, self.h), dtype=gf.dtype)
        V[:, self.n_channels + 1:] = np.eye(self.h, dtype=gf.dtype)
        for out_ch, starts, src, cidx, gene, lid in self._levels:
            on = ext[gene] & alive[lid]
            c = coeffs[:, cidx] * on
            prod = gf.mul(c[:, :, None], V[:, src])
            V[:, out_ch] = np.bitwise_xor.reduceat(prod, starts, axis=1)
        return V

    def rates(self, genome, trials: int = DEFAULT_TRIALS, seed=0, alive=None) -> np.ndarray:
        """Per-receiver rank (sorted receiver order), maximised over trials."""
        if not self.receivers:
            return np.zeros(0, dtype=np.int64)
        coeffs = self.draw(trials, seed)
        V = self.channel_vectors(genome, coeffs, alive)
        stack = V[:, self._recv_idx]
        T, R, rows, h = stack.shape
        ranks = self.gf.batch_rank(stack.reshape(T * R, rows, h)).reshape(T, R)
        return ranks.max(axis=0)

    def report(self, genome, coeffs: "FitnessCoefficients", trials: int = DEFAULT_TRIALS,
               seed=0, alive=None) -> "FitnessReport":
        r = self.rates(genome, trials, seed, alive)
        n_n, n_l = self.layout.counts(genome)
        return make_report(dict(zip(self.receivers, r.tolist())), n_n, n_l, coeffs)


def evaluate_rates(net: Network, a: CodingAssignment, q: int = 8, trials: int = DEFAULT_TRIALS,
                   seed=0) -> dict[int, int]:
    """Achieved rate per receiver: rank of its received coding vectors,
    maximised over ``trials`` independent coefficient draws."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    ev = RateEvaluator(net, q)
    genome = ev.layout.encode(a)
    return dict(zip(ev.receivers, ev.rates(genome, trials, seed).tolist()))


def symbolic_rates(net: Network, a: CodingAssignment | None = None, genome=None) -> dict[int, int]:
    """Generic rank of every receiver's transfer matrix.

    With independent indeterminate coefficients this equals the maximum
    number of channel-disjoint paths from the ``target_rate`` source
    symbols to the receiver, where a channel may feed another only if the
    mask permits it.
    """
    lay = Layout(net)
    if genome is None:
        genome = lay.encode(a) if a is not None else lay.all_ones()
    genome = np.asarray(genome)
    h = max(net.target_rate, 1)
    L = len(net.links)
    big = 1 << 30
    # vertices: 2*lid = link entry, 2*lid+1 = link exit, 2L = super source, 2L+1 = virtual inputs
    S, VIRT, T = 2 * L, 2 * L + 1, 2 * L + 2
    base = [(S, VIRT, h)]
    for ln in net.links:
        base.append((2 * ln.id, 2 * ln.id + 1, ln.capacity if ln.alive else 0))
        if ln.tail == net.source:
            base.append((VIRT, 2 * ln.id, big))
            continue
        ins = net.in_links[ln.tail]
        k = lay.slot_of_link.get(ln.id)
        bits = genome[lay.gene_range(k)] if k is not None else [1] * len(ins)
        for e, b in zip(ins, bits):
            if b:
                base.append((2 * e + 1, 2 * ln.id, big))
    out = {}
    for r in sorted(net.receivers):
        edges = base + [(2 * e + 1, T, big) for e in net.in_links[r]]
        out[r] = _max_flow(2 * L + 3, edges, S, T)[0]
    return out


# -- objective ----------------------------------------------------------------

@dataclass(frozen=True)
class FitnessCoefficients:
    """Weights of the two-branch objective.

    Rate weights must dominate the below-target resource weights and the
    above-target resource weights must dominate the rate weights.
    """

    a1: float = 10.0
    a2: float = 10.0
    a3: float = 1.0
    a4: float = 1.0
    a5: float = 100.0
    a6: float = 100.0
    target_rate: int = 1

    def __post_init__(self):
        a = (self.a1, self.a2, self.a3, self.a4, self.a5, self.a6)
        if min(a) <= 0:
            raise InvalidCoefficients("all coefficients must be positive")
        if not min(self.a1, self.a2) > max(self.a3, self.a4):
            raise InvalidCoefficients("need min(a1, a2) > max(a3, a4)")
        if not min(self.a5, self.a6) > max(self.a1, self.a2):
            raise InvalidCoefficients("need min(a5, a6) > max(a1, a2)")


@dataclass(frozen=True)
class FitnessReport:
    achieved: Mapping[int, int]
    min_rate: int
    avg_rate: float
    n_coding_nodes: int
    n_coding_links: int
    objective: float


def fitness(achieved, n_n: int, n_l: int, c: FitnessCoefficients) -> float:
    """Objective value: rate terms plus resource terms whose weights switch
    once every receiver reaches the target rate."""
    rates = list(achieved.values()) if isinstance(achieved, Mapping) else list(achieved)
    lo = min(rates) if rates else 0
    avg = sum(rates) / len(rates) if rates else 0.0
    if lo < c.target_rate:
        return c.a1 * lo + c.a2 * avg + c.a3 / (n_n + 1) + c.a4 / (n_l + 1)
    return c.a1 * lo + c.a2 * avg + c.a5 / (n_n + 1) + c.a6 / (n_l + 1)


def make_report(achieved: Mapping[int, int], n_n: int, n_l: int, c: FitnessCoefficients) -> FitnessReport:
    rates = list(achieved.values())
    return FitnessReport(
        achieved=dict(achieved),
        min_rate=min(rates) if rates else 0,
        avg_rate=sum(rates) / len(rates) if rates else 0.0,
        n_coding_nodes=n_n,
        n_coding_links=n_l,
        objective=fitness(achieved, n_n, n_l, c),
    )


def is_feasible(net: Network, a: CodingAssignment, target: int, seed=0, q: int = 8) -> bool:
    if target <= 0:
        return True
    rates = evaluate_rates(net, a, q=q, trials=DEFAULT_TRIALS, seed=seed)
    return min(rates.values()) >= target


# -- sequential fitness estimation -------------------------------------------

@functools.lru_cache(maxsize=4096)
def _t_crit(confidence: float, dof: int) -> float:
    return float(stats.t.ppf(0.5 + confidence / 2, dof))


class FitnessEstimator:
    """Running trial mean and variance of sampled fitness values (Welford)."""

    def __init__(self):
        self.samples: list[float] = []
        self._mean = 0.0
        self._m2 = 0.0

    def push(self, x: float) -> None:
        self.samples.append(float(x))
        n = len(self.samples)
        d = x - self._mean
        self._mean += d / n
        self._m2 += d * (x - self._mean)

    @property
    def n(self) -> int:
        return len(self.samples)

    @property
    def mean(self) -> float:
        return self._mean

    @property
    def variance(self) -> float:
        if self.n < 2:
            raise ValueError("trial variance needs at least two samples")
        return self._m2 / (self.n - 1)

    def half_width(self, confidence: float) -> float:
        """Half-width of the Student-t confidence interval for the mean."""
        t = math.sqrt(max(self.variance, 0.0))
        crit = _t_crit(confidence, self.n - 1)
        return crit * t / math.sqrt(self.n)


class Estimate(NamedTuple):
    mean: float
    trials: int
    converged: bool


def estimate_fitness(sampler: Callable[[int], float], confidence: float = 0.95,
                     tolerance: float = 0.1, max_trials: int = 1000, min_trials: int = 2) -> Estimate:
    """Sample until the mean's confidence half-width drops to ``tolerance``.

    The stopping rule is only checked from ``min_trials`` samples on; a
    pilot of a few dozen keeps two lucky early draws from ending the run.
    ``converged`` is False when ``max_trials`` ran out first.
    """
    if max_trials < 2:
        raise ValueError("max_trials must be >= 2")
    if not 2 <= min_trials <= max_trials:
        raise ValueError("min_trials must be in [2, max_trials]")
    est = FitnessEstimator()
    for j in range(max_trials):
        est.push(sampler(j))
        if est.n >= min_trials and est.half_width(confidence) <= tolerance:
            return Estimate(est.mean, est.n, True)
    return Estimate(est.mean, est.n, False)


# -- exhaustive oracle -----------------------------------------------------------

def _candidates(lay: Layout) -> Iterator[tuple[int, int, tuple[int, ...]]]:
    """Coding-link subsets ordered by (coding nodes, coding links)."""
    n = len(lay.slots)
    subsets = []
    for mask in range(1 << n):
        chosen = tuple(k for k in range(n) if mask >> k & 1)
        nodes = {lay.slots[k].node for k in chosen}
        subsets.append((len(nodes), len(chosen), chosen))
    subsets.sort()
    yield from subsets


def reduced_space_size(net: Network) -> int:
    lay = Layout(net)
    return math.prod(len(s.in_links) + 1 for s in lay.slots)


def brute_force_min_coding(net: Network, target: int, limit: int = 1 << 24):
    """Exact lexicographic minimum ``(N_n, N_l)`` over all assignments.

    Multi-bit masks may be widened to all-ones and empty masks to a single
    bit without changing the counts or losing feasibility, so it suffices
    to search each slot over {code, forward input i}.  Feasibility uses
    :func:`symbolic_rates`.  Returns ``(N_n, N_l, witness)`` or ``None``
    when no assignment attains ``target``.
    """
    lay = Layout(net)
    size = reduced_space_size(net)
    if size > limit or len(lay.slots) > 24:
        raise TooLarge(f"search space {size} exceeds limit {limit}")

    def ok(genome) -> bool:
        if target <= 0:
            return True
        return min(symbolic_rates(net, genome=genome).values()) >= target

    if not ok(lay.all_ones()):
        return None
    for n_n, n_l, chosen in _candidates(lay):
        rest = [k for k in range(len(lay.slots)) if k not in chosen]
        for picks in itertools.product(*(range(len(lay.slots[k].in_links)) for k in rest)):
            g = np.zeros(lay.length, dtype=np.uint8)
            for k in chosen:
                g[lay.gene_range(k)] = 1
            for k, i in zip(rest, picks):
                g[lay.offsets[k] + i] = 1
            if ok(g):
                return n_n, n_l, lay.decode(g)
    return None  # pragma: no cover - all-ones is feasible
