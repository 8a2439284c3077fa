import numpy as np
import pytest
from hypothesis import given, strategies as st

from ncga import ga
from ncga.coding import CodingAssignment, FitnessCoefficients, Layout, brute_force_min_coding, evaluate_rates
from ncga.errors import LengthMismatch
from ncga.ga import (Chromosome, DegenerateFitness, FitnessFunction, GaParams, Population, crossover_uniform,
                     decode, encode, improve_gene, init_population_opposition, mutate, opposite,
                     roulette_indices, run_ga, select_parent_roulette, write_run_log)
from ncga.netgraph import build_network, butterfly, generate_random_dag

QUICK = GaParams(pop_size=20, max_generations=30)


def diamond_merge():
    """Two merging nodes x, y both fed by a and b, merging again at m.

    With x and y both forwarding a's flow, m sees the same packet twice.
    """
    links = [(0, 1), (0, 2), (1, 3), (2, 3), (1, 4), (2, 4), (3, 5), (4, 5), (5, 6, 2)]
    return build_network(7, links, 0, {6}, 2)


def changed_slots(lay, a, b):
    return {k for k in range(len(lay.slots))
            if not np.array_equal(a.genes[lay.gene_range(k)], b.genes[lay.gene_range(k)])}


def C(bits):
    return Chromosome(np.array(bits, dtype=np.uint8))


# -- codec ---------------------------------------------------------------------

def test_codec_bijective():
    net = generate_random_dag(30, 90, 20, 5, seed=1)
    lay = Layout(net)
    rng = np.random.default_rng(0)
    for _ in range(1000):
        g = rng.integers(0, 2, lay.length).astype(np.uint8)
        a = lay.decode(g)
        assert np.array_equal(encode(net, a).genes, g)
        assert decode(net, encode(net, a)) == a


def test_gene_order_is_topological_then_link_id():
    net = generate_random_dag(20, 50, 8, 2, seed=3)
    lay = Layout(net)
    pos = {v: i for i, v in enumerate(net.topo_order)}
    keys = [(pos[s.node], s.out_link) for s in lay.slots]
    assert keys == sorted(keys)
    want = sum(len(net.in_links[v]) * len(net.out_links[v]) for v in lay.coding_candidates)
    assert lay.length == want


# -- opposition init -------------------------------------------------------------

def test_opposite_examples():
    assert opposite(0.3) == pytest.approx(0.7)
    assert opposite(1) == 0 and opposite(0) == 1
    assert opposite(2, low=1, high=5) == 4


def test_opposition_keeps_fittest_of_union():
    net = butterfly()
    fit = FitnessFunction(net, FitnessCoefficients(target_rate=2), 11)
    pop = init_population_opposition(net, 4, 11, fit)
    rng = np.random.default_rng([11, 1])
    raw = [rng.integers(0, 2, fit.layout.length, dtype=np.uint8) for _ in range(4)]
    union = raw + [1 - g for g in raw]
    scores = sorted((fit(g) for g in union), reverse=True)
    assert sorted((fit(c) for c in pop.members), reverse=True) == scores[:4]
    assert min(fit(c) for c in pop.members) >= min(fit(g) for g in raw)
    assert len(pop) == 4


def test_opposition_needs_two():
    with pytest.raises(ValueError):
        init_population_opposition(butterfly(), 1, 0)


# -- selection --------------------------------------------------------------------

def test_roulette_examples():
    rng = np.random.default_rng(5)
    pop = Population([C([0]), C([1])])
    picks = [select_parent_roulette(pop, [1, 3], rng).genes[0] for _ in range(20000)]
    assert np.mean(picks) == pytest.approx(0.75, abs=0.015)
    one = Population([C([1, 1])])
    assert all(select_parent_roulette(one, [5], rng) is one.members[0] for _ in range(50))


def test_roulette_frequencies():
    rng = np.random.default_rng(5)
    n = 100_000
    counts = np.bincount(roulette_indices([1, 1, 2], n, rng), minlength=3)
    p = np.array([0.25, 0.25, 0.5])
    sigma = np.sqrt(n * p * (1 - p))
    assert np.all(np.abs(counts - n * p) <= 3 * sigma)


def test_roulette_degenerate_and_negative():
    rng = np.random.default_rng(0)
    with pytest.warns(DegenerateFitness):
        idx = roulette_indices([0, 0, 0], 300, rng)
    assert set(idx.tolist()) == {0, 1, 2}
    with pytest.raises(ValueError):
        roulette_indices([1, -1], 1, rng)


# -- crossover --------------------------------------------------------------------

def test_crossover_examples():
    rng = np.random.default_rng(0)
    p = C([1, 0, 1, 1, 0])
    assert np.array_equal(crossover_uniform(p, p.copy(), 0.5, rng).genes, p.genes)
    q = C([0, 1, 1, 0, 1])
    assert np.array_equal(crossover_uniform(p, q, 1.0, rng).genes, p.genes)
    assert np.array_equal(crossover_uniform(p, q, 0.0, rng).genes, q.genes)
    with pytest.raises(LengthMismatch):
        crossover_uniform(p, C([1, 0]), 0.5, rng)


def test_crossover_bias_frequency():
    rng = np.random.default_rng(1)
    n = 10_000
    ones = sum(crossover_uniform(C([0, 0, 0, 0]), C([1, 1, 1, 1]), 0.5, rng).genes.astype(int) for _ in range(n))
    sigma = np.sqrt(n * 0.25)
    assert np.all(np.abs(ones - n / 2) <= 3 * sigma)


@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=40),
       st.floats(0, 1), st.integers(0, 2**32 - 1))
def test_crossover_keeps_common_genes(pairs, pu, seed):
    p1 = C([a for a, _ in pairs])
    p2 = C([b for _, b in pairs])
    child = crossover_uniform(p1, p2, pu, np.random.default_rng(seed))
    same = p1.genes == p2.genes
    assert np.array_equal(child.genes[same], p1.genes[same])
    assert np.all((child.genes == p1.genes) | (child.genes == p2.genes))


# -- mutation ---------------------------------------------------------------------

def test_mutation_examples():
    rng = np.random.default_rng(0)
    c = C([1, 0, 1, 1, 0, 0])
    assert np.array_equal(mutate(c, 0.0, rng).genes, c.genes)
    assert np.array_equal(mutate(c, 1.0, rng).genes, 1 - c.genes)
    assert np.array_equal(c.genes, [1, 0, 1, 1, 0, 0])  # input untouched


def test_mutation_rate():
    rng = np.random.default_rng(9)
    genes = np.zeros(10_000, dtype=np.uint8)
    flips = sum(int(mutate(Chromosome(genes), 0.01, rng).genes.sum()) for _ in range(100))
    n = 1_000_000
    assert 0.0097 * n <= flips <= 0.0103 * n


def test_structural_mutation_removes_one_coding_node():
    net = generate_random_dag(30, 90, 20, 5, seed=1)
    lay = Layout(net)
    rng = np.random.default_rng(2)
    c = Chromosome(lay.all_ones())
    before = lay.counts(c.genes)
    out = mutate(c, 0.0, rng, lay, p_struct=1.0)
    after = lay.counts(out.genes)
    assert after[0] == before[0] - 1
    changed = {lay.slots[k].node for k in range(len(lay.slots))
               if not np.array_equal(out.genes[lay.gene_range(k)], c.genes[lay.gene_range(k)])}
    assert len(changed) == 1
    v = changed.pop()
    for k, s in enumerate(lay.slots):
        if s.node == v:
            assert out.genes[lay.gene_range(k)].sum() == 1


# -- gene improvement ----------------------------------------------------------------

def test_improve_gene_breaks_duplicate_flow():
    net = diamond_merge()
    lay = Layout(net)
    a = CodingAssignment({(3, 6): (1, 0), (4, 7): (1, 0), (5, 8): (1, 1)})
    c = Chromosome(lay.encode(a))
    assert evaluate_rates(net, a) == {6: 1}
    fit = FitnessFunction(net, FitnessCoefficients(target_rate=2), 0)
    out = improve_gene(c, net, np.random.default_rng(0), fit)
    assert len(changed_slots(lay, c, out)) == 1
    assert evaluate_rates(net, lay.decode(out.genes)) == {6: 2}


def test_improve_gene_no_duplicates_unchanged():
    net = diamond_merge()
    lay = Layout(net)
    a = CodingAssignment({(3, 6): (1, 0), (4, 7): (0, 1), (5, 8): (1, 1)})
    c = Chromosome(lay.encode(a))
    out = improve_gene(c, net, np.random.default_rng(0))
    assert np.array_equal(out.genes, c.genes)


def test_improve_gene_without_merging_nodes():
    net = build_network(3, [(0, 1), (1, 2)], 0, {2}, 1)
    c = Chromosome(np.zeros(0, dtype=np.uint8))
    assert improve_gene(c, net, np.random.default_rng(0)) is c


def test_improve_gene_never_lowers_min_rate():
    net = generate_random_dag(20, 50, 8, 3, seed=7)
    fit = FitnessFunction(net, FitnessCoefficients(target_rate=3), 0)
    rng = np.random.default_rng(3)
    for _ in range(40):
        c = Chromosome(rng.integers(0, 2, fit.layout.length).astype(np.uint8))
        out = improve_gene(c, net, rng, fit)
        assert fit.report(out).min_rate >= fit.report(c).min_rate
        assert len(changed_slots(fit.layout, c, out)) <= 1


# -- main loop ------------------------------------------------------------------------

def test_butterfly_optimum():
    res = run_ga(butterfly(), GaParams(), seed=1)
    r = res.best_report
    assert r.min_rate == 2
    assert (r.n_coding_nodes, r.n_coding_links) == brute_force_min_coding(butterfly(), 2)[:2] == (1, 1)


def test_no_merging_nodes():
    net = build_network(4, [(0, 1), (1, 2), (2, 3)], 0, {2, 3}, 1)
    res = run_ga(net, QUICK, seed=0)
    assert res.generations_run == 1
    r = res.best_report
    assert (r.n_coding_nodes, r.n_coding_links) == (0, 0) and r.min_rate == 1


def test_elitism_and_history():
    net = generate_random_dag(15, 40, 6, 3, seed=2)
    for seed in range(3):
        res = run_ga(net, QUICK, seed=seed)
        best = [h.best_F for h in res.history]
        assert all(b2 >= b1 for b1, b2 in zip(best, best[1:]))
        assert len(res.history) == res.generations_run
        assert res.terminated_by in ("max_gen", "stall")
        assert res.best_report.objective == pytest.approx(best[-1])


def test_population_size_constant(monkeypatch):
    sizes = []
    real = ga.Population

    class Spy(real):
        def __init__(self, members, generation=0):
            sizes.append(len(members))
            super().__init__(members, generation)

    monkeypatch.setattr(ga, "Population", Spy)
    run_ga(generate_random_dag(15, 40, 6, 3, seed=2), QUICK, seed=0)
    assert len(sizes) > 1 and set(sizes) == {QUICK.pop_size}


def test_seed_determinism():
    net = generate_random_dag(15, 40, 6, 3, seed=2)
    a = run_ga(net, QUICK, seed=4)
    b = run_ga(net, QUICK, seed=4)
    assert np.array_equal(a.best.genes, b.best.genes)
    assert a.history == b.history and a.best_report == b.best_report


def test_stall_termination():
    res = run_ga(butterfly(), GaParams(stall_generations=3), seed=0)
    assert res.terminated_by == "stall" and res.generations_run < 100


def test_params_validation():
    for bad in (dict(pop_size=1), dict(elite_count=0), dict(elite_count=50), dict(crossover_prob=1.5),
                dict(mutation_prob=-0.1), dict(max_generations=0), dict(churn_links=-1),
                dict(churn_max_trials=1)):
        with pytest.raises(ValueError):
            GaParams(**bad)


def test_churn_sampled_fitness():
    net = generate_random_dag(15, 40, 6, 3, seed=2)
    params = GaParams(pop_size=10, max_generations=5, churn_links=4, churn_max_trials=10)
    a = run_ga(net, params, seed=1)
    b = run_ga(net, params, seed=1)
    assert a.history == b.history
    static = FitnessFunction(net, FitnessCoefficients(target_rate=3), 1)
    # outages can only lower rates, so the sampled mean never beats the static score
    sampled = FitnessFunction(net, FitnessCoefficients(target_rate=3), 1, churn=params)
    rng = np.random.default_rng(0)
    for _ in range(10):
        g = rng.integers(0, 2, static.layout.length).astype(np.uint8)
        assert sampled(g) <= static(g) + 1e-9


def test_fitness_cache_and_seed():
    net = butterfly()
    fit = FitnessFunction(net, FitnessCoefficients(target_rate=2), 3)
    g = np.array([1, 1], dtype=np.uint8)
    fit(g)
    fit(Chromosome(g.copy()))
    assert fit.evaluations == 1


def test_run_log(tmp_path):
    res = run_ga(butterfly(), GaParams(pop_size=6, max_generations=4), seed=0)
    path = tmp_path / "log.csv"
    write_run_log(path, res)
    lines = path.read_text().splitlines()
    assert lines[0] == "generation,best_F,mean_F,best_Nn,best_Nl,min_rate,avg_rate"
    assert len(lines) == 1 + res.generations_run
