"""Genetic search for coding assignments with few coding nodes and links.

Chromosomes are bit strings: the concatenated contribution masks of every
merging node (see :class:`ncga.coding.Layout`).  The loop is elitist with
roulette-wheel parent selection, common-gene-preserving uniform crossover,
bit-flip plus structural mutation and a per-offspring gene improvement
step that diversifies duplicate flows arriving at a merging node.
"""

from __future__ import annotations

import csv
import logging
import warnings
import zlib
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .coding import (
    DEFAULT_TRIALS,
    estimate_fitness,
    CodingAssignment,
    FitnessCoefficients,
    FitnessReport,
    Layout,
    RateEvaluator,
)
from .errors import LengthMismatch
from .netgraph import Network

log = logging.getLogger(__name__)


class DegenerateFitness(UserWarning):
    """All fitness values were zero; roulette fell back to uniform choice."""


@dataclass
class GaParams:
    pop_size: int = 50
    crossover_prob: float = 0.8
    mutation_prob: float = 0.01
    max_generations: int = 100
    elite_count: int = 2
    p_uniform: float = 0.5
    p_struct: float = 0.1
    improvement_threshold: float = 1e-3
    stall_generations: int = 10
    eval_trials: int = DEFAULT_TRIALS
    q: int = 8
    # churn sampling: fitness becomes the sequential Student-t estimate of F
    # over random outages of `churn_links` dynamic links
    churn_links: int = 0
    churn_down_prob: float = 0.2
    churn_tolerance: float = 1.0
    churn_max_trials: int = 30

    def __post_init__(self):
        for name in ("crossover_prob", "mutation_prob", "p_uniform", "p_struct", "churn_down_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.pop_size < 2:
            raise ValueError("pop_size must be >= 2")
        if not 1 <= self.elite_count < self.pop_size:
            raise ValueError("elite_count must be in [1, pop_size)")
        if self.max_generations < 1:
            raise ValueError("max_generations must be >= 1")
        if self.churn_links < 0 or self.churn_max_trials < 2 or self.churn_tolerance <= 0:
            raise ValueError("churn sampling needs churn_links >= 0, churn_max_trials >= 2, churn_tolerance > 0")


@dataclass
class Chromosome:
    genes: np.ndarray
    fitness_cache: Optional[float] = None

    def copy(self) -> "Chromosome":
        return Chromosome(self.genes.copy(), self.fitness_cache)

    def key(self) -> bytes:
        return self.genes.tobytes()

    def __len__(self) -> int:
        return len(self.genes)


@dataclass
class Population:
    members: list[Chromosome]
    generation: int = 0

    def __len__(self) -> int:
        return len(self.members)


@dataclass(frozen=True)
class GenerationStats:
    generation: int
    best_F: float
    mean_F: float
    best_Nn: int
    best_Nl: int
    min_rate: int
    avg_rate: float


@dataclass
class RunResult:
    best: Chromosome
    best_report: FitnessReport
    assignment: CodingAssignment
    history: list[GenerationStats] = field(default_factory=list)
    generations_run: int = 0
    terminated_by: str = "max_gen"


# -- codec ---------------------------------------------------------------------

def encode(net: Network, a: CodingAssignment) -> Chromosome:
    return Chromosome(Layout(net).encode(a))


def decode(net: Network, c: Chromosome) -> CodingAssignment:
    return Layout(net).decode(c.genes)


def opposite(x, low=0, high=1):
    """Opposite point ``low + high - x`` inside the interval [low, high]."""
    return low + high - x


# -- fitness with caching ------------------------------------------------------

class FitnessFunction:
    """Cached chromosome evaluation.

    The coefficient seed of a chromosome is derived from the run seed and
    the genome itself, so a genome always gets the same score within a run
    no matter when or where in the population it is evaluated.
    """

    def __init__(self, net: Network, coeffs: FitnessCoefficients, seed: int = 0,
                 trials: int = DEFAULT_TRIALS, q: int = 8, churn: GaParams | None = None):
        self.net = net
        self.coeffs = coeffs
        self.seed = seed
        self.trials = trials
        self.evaluator = RateEvaluator(net, q)
        self.layout = self.evaluator.layout
        self._cache: dict[bytes, FitnessReport] = {}
        self.evaluations = 0
        self.churn = churn if churn is not None and churn.churn_links > 0 else None
        if self.churn is not None:
            pick = np.random.default_rng([seed, 0xD1]).choice(
                len(net.links), size=min(self.churn.churn_links, len(net.links)), replace=False)
            self.dynamic = np.sort(pick)

    def genome_seed(self, genes: np.ndarray) -> list[int]:
        return [self.seed, zlib.crc32(genes.tobytes()), len(genes)]

    def _sampled(self, genes: np.ndarray, rep: FitnessReport) -> FitnessReport:
        """Replace the objective by its estimated mean under random outages."""
        ch = self.churn
        base = np.array([ln.alive for ln in self.net.links])
        rng = np.random.default_rng(self.genome_seed(genes) + [0xD2])

        def sample(j: int) -> float:
            alive = base.copy()
            alive[self.dynamic[rng.random(len(self.dynamic)) < ch.churn_down_prob]] = False
            return self.evaluator.report(genes, self.coeffs, self.trials,
                                         self.genome_seed(genes) + [j], alive).objective

        est = estimate_fitness(sample, 0.95, ch.churn_tolerance, ch.churn_max_trials)
        return replace(rep, objective=est.mean)

    def report(self, c: Chromosome | np.ndarray) -> FitnessReport:
        genes = c.genes if isinstance(c, Chromosome) else np.asarray(c, dtype=np.uint8)
        key = genes.tobytes()
        rep = self._cache.get(key)
        if rep is None:
            rep = self.evaluator.report(genes, self.coeffs, self.trials, self.genome_seed(genes))
            if self.churn is not None:
                rep = self._sampled(genes, rep)
            self._cache[key] = rep
            self.evaluations += 1
        if isinstance(c, Chromosome):
            c.fitness_cache = rep.objective
        return rep

    def __call__(self, c) -> float:
        return self.report(c).objective


def _default_fitness(net: Network, seed: int) -> FitnessFunction:
    return FitnessFunction(net, FitnessCoefficients(target_rate=net.target_rate), seed)


# -- operators -------------------------------------------------------------------

def init_population_opposition(net: Network, s: int, seed: int,
                               fit: FitnessFunction | None = None) -> Population:
    """Random population plus its opposites; keep the ``s`` fittest."""
    if s < 2:
        raise ValueError("population size must be >= 2")
    fit = fit or _default_fitness(net, seed)
    rng = np.random.default_rng([seed, 1])
    n = fit.layout.length
    raw = [Chromosome(rng.integers(0, 2, n, dtype=np.uint8)) for _ in range(s)]
    opp = [Chromosome(opposite(c.genes).astype(np.uint8)) for c in raw]
    union = raw + opp
    scores = np.array([fit(c) for c in union])
    order = np.argsort(-scores, kind="stable")[:s]
    return Population([union[i] for i in order], 0)


def roulette_indices(fitnesses, k: int, rng: np.random.Generator) -> np.ndarray:
    f = np.asarray(fitnesses, dtype=float)
    if np.any(f < 0):
        raise ValueError("roulette selection needs non-negative fitness")
    total = f.sum()
    if total <= 0:
        warnings.warn("all fitness values are zero; selecting uniformly", DegenerateFitness)
        return rng.integers(0, len(f), size=k)
    cum = np.cumsum(f)
    idx = np.searchsorted(cum, rng.random(k) * total, side="right")
    return np.minimum(idx, len(f) - 1)


def select_parent_roulette(pop: Population, fitnesses, rng: np.random.Generator) -> Chromosome:
    """Pick member i with probability F_i / sum(F)."""
    return pop.members[int(roulette_indices(fitnesses, 1, rng)[0])]


def crossover_uniform(p1: Chromosome, p2: Chromosome, p_uniform: float,
                      rng: np.random.Generator) -> Chromosome:
    """Keep genes the parents share; otherwise take p1's gene with
    probability ``p_uniform`` and p2's otherwise."""
    if len(p1) != len(p2):
        raise LengthMismatch(f"parents have lengths {len(p1)} and {len(p2)}")
    from_p1 = rng.random(len(p1)) < p_uniform
    genes = np.where((p1.genes == p2.genes) | from_p1, p1.genes, p2.genes).astype(np.uint8)
    return Chromosome(genes)


def mutate(c: Chromosome, pm: float, rng: np.random.Generator,
           layout: Layout | None = None, p_struct: float = 0.0) -> Chromosome:
    """Independent bit flips at rate ``pm``; then, with probability
    ``p_struct``, turn one random coding node into a forwarding node."""
    genes = c.genes.copy()
    flips = rng.random(len(genes)) < pm
    genes[flips] ^= 1
    if layout is not None and p_struct > 0 and rng.random() < p_struct:
        coding_nodes = sorted({
            layout.slots[k].node for k in range(len(layout.slots))
            if genes[layout.gene_range(k)].sum() >= 2
        })
        if coding_nodes:
            node = coding_nodes[int(rng.integers(len(coding_nodes)))]
            for k, slot in enumerate(layout.slots):
                if slot.node == node:
                    sl = layout.gene_range(k)
                    genes[sl] = 0
                    genes[sl.start + int(rng.integers(len(slot.in_links)))] = 1
    return Chromosome(genes)


def improve_gene(c: Chromosome, net: Network, rng: np.random.Generator,
                 fit: FitnessFunction | None = None) -> Chromosome:
    """Change at most one gene so that a merging node stops receiving the
    same flow on two incoming links.

    Flows are the links' global coding vectors under one coefficient draw.
    A merging node qualifies when two of its incoming links span the same
    space; an upstream merging node feeding one of them is then redirected
    to forward an input the downstream node does not yet hold.  The change
    is kept only if the minimum receiver rate does not drop.
    """
    fit = fit or _default_fitness(net, 0)
    lay = fit.layout
    if not lay.slots:
        return c
    ev = fit.evaluator
    gf = ev.gf
    coeffs = ev.draw(1, fit.genome_seed(c.genes) + [7])
    V = ev.channel_vectors(c.genes, coeffs)[0]
    starts = ev.ch_start
    n_links = len(net.links)
    caps = np.diff(starts)
    width = int(caps.max())

    # canonical span (RREF) of every link's flow
    stack = np.zeros((n_links, width, ev.h), dtype=gf.dtype)
    for lid in range(n_links):
        stack[lid, : caps[lid]] = V[starts[lid]:starts[lid + 1]]
    canon = gf.batch_rref(stack)
    nonzero = canon.reshape(n_links, -1).any(axis=1)
    span_key = [canon[i].tobytes() for i in range(n_links)]

    candidates = list(lay.coding_candidates)
    rng.shuffle(candidates)
    for lcp in candidates:
        ins = [e for e in net.alive_in(lcp) if nonzero[e]]
        seen: dict[bytes, list[int]] = {}
        for e in ins:
            seen.setdefault(span_key[e], []).append(e)
        dup = sorted(e for group in seen.values() if len(group) >= 2 for e in group)
        if not dup:
            continue
        held = np.vstack([V[starts[e]:starts[e + 1]] for e in ins])
        options = []
        for e in dup:
            k = lay.slot_of_link.get(e)
            if k is None:
                continue
            for pos, src in enumerate(lay.slots[k].in_links):
                if net.links[src].alive and nonzero[src]:
                    options.append((k, pos, src))
        if options:
            tests = np.zeros((len(options), held.shape[0] + width, ev.h), dtype=gf.dtype)
            for i, (_, _, src) in enumerate(options):
                tests[i, : held.shape[0]] = held
                tests[i, held.shape[0]: held.shape[0] + caps[src]] = V[starts[src]:starts[src + 1]]
            base = gf.rank(held)
            grows = gf.batch_rank(tests) > base
            options = [o for o, g in zip(options, grows) if g]
        if not options:
            continue  # Step 3: mark this LCP and look at the next one
        k, pos, _ = options[int(rng.integers(len(options)))]
        genes = c.genes.copy()
        sl = lay.gene_range(k)
        genes[sl] = 0
        genes[sl.start + pos] = 1
        child = Chromosome(genes)
        if fit.report(child).min_rate >= fit.report(c).min_rate:
            return child
    return c


# -- main loop --------------------------------------------------------------------

def _stats(gen: int, pop: Population, fit: FitnessFunction) -> tuple[GenerationStats, int]:
    reports = [fit.report(m) for m in pop.members]
    scores = np.array([r.objective for r in reports])
    b = int(np.argmax(scores))
    br = reports[b]
    return GenerationStats(gen, float(scores[b]), float(scores.mean()), br.n_coding_nodes,
                           br.n_coding_links, br.min_rate, br.avg_rate), b


def run_ga(net: Network, params: GaParams | None = None, coeffs: FitnessCoefficients | None = None,
           seed: int = 0) -> RunResult:
    params = params or GaParams()
    coeffs = coeffs or FitnessCoefficients(target_rate=net.target_rate)
    fit = FitnessFunction(net, coeffs, seed, params.eval_trials, params.q, params)
    lay = fit.layout
    rng = np.random.default_rng([seed, 2])

    if lay.length == 0:
        pop = Population([Chromosome(np.zeros(0, dtype=np.uint8)) for _ in range(params.pop_size)])
        st, b = _stats(0, pop, fit)
        best = pop.members[b]
        return RunResult(best, fit.report(best), lay.decode(best.genes), [st], 1, "stall")

    pop = init_population_opposition(net, params.pop_size, seed, fit)
    st, b = _stats(0, pop, fit)
    history = [st]
    best = pop.members[b].copy()
    stall = 0
    terminated = "max_gen"
    for gen in range(1, params.max_generations):
        scores = np.array([fit(m) for m in pop.members])
        order = np.argsort(-scores, kind="stable")
        nxt = [pop.members[i].copy() for i in order[: params.elite_count]]
        while len(nxt) < params.pop_size:
            p1 = pop.members[int(roulette_indices(scores, 1, rng)[0])]
            if rng.random() < params.crossover_prob:
                p2 = pop.members[int(roulette_indices(scores, 1, rng)[0])]
                child = crossover_uniform(p1, p2, params.p_uniform, rng)
            else:
                child = p1.copy()
            child = mutate(child, params.mutation_prob, rng, lay, params.p_struct)
            child = improve_gene(child, net, rng, fit)
            nxt.append(child)
        pop = Population(nxt, gen)
        st, b = _stats(gen, pop, fit)
        prev = history[-1].best_F
        history.append(st)
        if st.best_F > fit(best):
            best = pop.members[b].copy()
        gain = (st.best_F - prev) / prev if prev > 0 else float("inf")
        stall = stall + 1 if gain < params.improvement_threshold else 0
        if stall >= params.stall_generations:
            terminated = "stall"
            break
    log.debug("ga finished after %d generations (%s), %d evaluations", len(history), terminated,
              fit.evaluations)
    return RunResult(best, fit.report(best), lay.decode(best.genes), history, len(history), terminated)


def write_run_log(path, result: RunResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["generation", "best_F", "mean_F", "best_Nn", "best_Nl", "min_rate", "avg_rate"])
        for s in result.history:
            w.writerow([s.generation, f"{s.best_F:.6f}", f"{s.mean_F:.6f}", s.best_Nn, s.best_Nl,
                        s.min_rate, f"{s.avg_rate:.6f}"])
