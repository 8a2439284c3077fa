import csv
from dataclasses import replace

import numpy as np
import pytest

from ncga.coding import Layout
from ncga.errors import MissingGaResult
from ncga.galois import decode_segment, field, rank
from ncga.netgraph import ChurnEvent, ChurnSchedule, build_network, butterfly, generate_random_dag
from ncga.sim import (METRIC_COLUMNS, SegmentBuffer, SimConfig, compare_strategies, compute_metrics,
                      rsn_min_count, run_simulation, select_coding_nodes, simulate, summarize,
                      write_metrics_csv, write_trace)

R1, R2 = 5, 6


def cfg(blocks=8, B=8, **kw):
    return SimConfig(content_size_bytes=blocks * 16, blocks_per_segment=B, **kw)


def star(n_recv):
    return build_network(n_recv + 1, [(0, i) for i in range(1, n_recv + 1)], 0, set(range(1, n_recv + 1)), 1)


@pytest.fixture(scope="module")
def nset():
    return generate_random_dag(30, 90, 20, 5, seed=1)


# -- segment buffer ------------------------------------------------------------

def test_segment_buffer_keeps_only_innovative():
    gf = field(8)
    rng = np.random.default_rng(0)
    buf = SegmentBuffer(gf, 4, 3)
    rows = gf.random(rng, (4, 7))
    assert all(buf.insert(r) for r in rows[:3])
    assert not buf.insert(rows[0] ^ rows[1])
    assert not buf.insert(np.zeros(7, dtype=np.uint8))
    assert buf.rank == 3
    assert buf.pivots == sorted(buf.pivots)
    combo = buf.combination(rng)
    assert rank(np.vstack([rows[:3, :4], combo[:4]])) == 3


def test_segment_buffer_decodes():
    gf = field(8)
    rng = np.random.default_rng(1)
    M = rng.integers(0, 256, (5, 6)).astype(np.uint8)
    buf = SegmentBuffer(gf, 5, 6)
    while buf.rank < 5:
        c = gf.random(rng, 5)
        buf.insert(np.concatenate([c, gf.combine(c, M)]))
    assert np.array_equal(buf.decoded(), M)


# -- strategy selection ------------------------------------------------------------

def test_select_examples(nset):
    net = butterfly()
    assert select_coding_nodes(net, "CAN").nodes == {3}
    rsn = select_coding_nodes(net, "RSN", rsn_count=0, seed=4)
    assert rsn.nodes == set()
    assert all(sum(m) == 1 for m in rsn.assignment.masks.values())
    a = select_coding_nodes(nset, "RSN", rsn_count=5, seed=2)
    b = select_coding_nodes(nset, "RSN", rsn_count=5, seed=2)
    assert len(a.nodes) == 5 and a.assignment == b.assignment
    assert select_coding_nodes(nset, "NONE", seed=3).nodes == set()


def test_select_errors(nset):
    with pytest.raises(MissingGaResult):
        select_coding_nodes(butterfly(), "GANS")
    with pytest.raises(ValueError):
        select_coding_nodes(butterfly(), "RSN", rsn_count=2)
    with pytest.raises(ValueError):
        select_coding_nodes(butterfly(), "SOME")


def test_gans_uses_assignment_verbatim(nset):
    lay = Layout(nset)
    a = lay.decode(np.random.default_rng(0).integers(0, 2, lay.length))
    assert select_coding_nodes(nset, "GANS", ga_result=a).assignment == a


# -- runs -----------------------------------------------------------------------------

def test_butterfly_can_two_blocks():
    res = simulate(butterfly(), select_coding_nodes(butterfly(), "CAN"), cfg(blocks=2, B=2))
    # one round to reach a and b, then one block per round on each direct link
    assert res.peers[R1].completion_round == res.peers[R2].completion_round == 3
    assert res.metrics.failure_rate == 0


def test_butterfly_none_slower_than_can():
    net = butterfly()
    slower = 0
    for seed in range(100):
        t = {}
        for s in ("CAN", "NONE"):
            res = simulate(net, select_coding_nodes(net, s, seed=seed), cfg(strategy=s, seed=seed))
            t[s] = max(res.peers[R1].completion_round, res.peers[R2].completion_round)
        slower += t["NONE"] > t["CAN"]
    assert slower >= 90


def test_zero_deadline():
    m = run_simulation(butterfly(), select_coding_nodes(butterfly(), "CAN"), cfg(deadline_rounds=0))
    assert m.failure_rate == 1.0 and m.system_throughput == 0
    assert m.avg_distribution_time is None and m.max_download_time is None


def test_ideal_traffic_gives_redundancy_one():
    res = simulate(star(3), select_coding_nodes(star(3), "CAN"), cfg(blocks=24))
    assert res.metrics.packet_redundancy == 1.0
    assert res.redundant == 0 and res.metrics.failure_rate == 0


def test_failure_rate_counts_incomplete_peers():
    net = star(20)
    churn = ChurnSchedule((ChurnEvent(0, 3, "down"), ChurnEvent(0, 7, "down")))
    m = compute_metrics(simulate(net, select_coding_nodes(net, "CAN"), cfg(churn=churn, deadline_rounds=50)))
    assert m.failure_rate == pytest.approx(0.10)


def test_metric_relations(nset):
    res = simulate(nset, select_coding_nodes(nset, "CAN"), cfg(blocks=64))
    m = res.metrics
    assert m.packet_redundancy >= 1
    assert m.avg_distribution_time <= m.max_download_time
    assert m.system_throughput == pytest.approx(20 * 64 * 16 / m.max_download_time)
    assert res.timeline[-1] == 20 * 64 * 16
    assert all(a <= b for a, b in zip(res.timeline, res.timeline[1:]))


def test_padding_of_last_segment():
    c = SimConfig(content_size_bytes=100, block_size_bytes=16, blocks_per_segment=4)
    assert c.n_blocks == 7 and c.n_segments == 2
    res = simulate(butterfly(), select_coding_nodes(butterfly(), "CAN"), c)
    assert res.metrics.system_throughput * res.metrics.max_download_time == pytest.approx(200)
    assert len(res.content) == 100


def test_config_validation():
    for bad in (dict(strategy="X"), dict(block_size_bytes=0), dict(window=0), dict(ideal="x")):
        with pytest.raises(ValueError):
            cfg(**bad)
    with pytest.raises(ValueError):
        SimConfig(content_size_bytes=0)


# -- invariants ---------------------------------------------------------------------------

@pytest.mark.parametrize("strategy", ["CAN", "NONE", "RSN"])
def test_conservation_and_bit_exact_decode(nset, strategy):
    for seed in range(3):
        churn = ChurnSchedule((ChurnEvent(3, 0, "down"), ChurnEvent(9, 0, "up"), ChurnEvent(12, 5, "down")))
        plan = select_coding_nodes(nset, strategy, rsn_count=4, seed=seed)
        res = simulate(nset, plan, cfg(blocks=64, strategy=strategy, seed=seed, churn=churn))
        assert res.sent == res.received + res.lost
        assert res.lost > 0
        assert res.decode_errors == 0
        for v in nset.receivers:
            p = res.peers[v]
            assert all(b.rank <= 8 for b in p.buffers)
            if p.completion_round is not None:
                got = np.concatenate([b.decoded().reshape(-1) for b in p.buffers])
                assert np.array_equal(got[: len(res.content)], res.content)


def test_ranks_never_decrease(nset):
    plan = select_coding_nodes(nset, "NONE", seed=1)
    prev = None
    for d in (3, 6, 10, 20, 40):
        res = simulate(nset, plan, cfg(blocks=64, seed=1, deadline_rounds=d))
        ranks = np.array([[b.rank for b in res.peers[v].buffers] for v in sorted(res.peers)])
        assert ranks.max() <= 8
        if prev is not None:
            assert np.all(ranks >= prev)
        prev = ranks


def test_can_completes_on_generated_networks():
    for seed in range(5):
        net = generate_random_dag(30, 90, 20, 5, seed)
        blocks = 64
        deadline = 30 + 8 + (blocks // 8) * 8
        m = run_simulation(net, select_coding_nodes(net, "CAN"), cfg(blocks=blocks, deadline_rounds=deadline))
        assert m.failure_rate == 0


def test_determinism(nset):
    plan = select_coding_nodes(nset, "RSN", rsn_count=3, seed=5)
    a = simulate(nset, plan, cfg(blocks=32, seed=5, trace=True))
    b = simulate(nset, plan, cfg(blocks=32, seed=5, trace=True))
    assert a.metrics == b.metrics and a.trace == b.trace


def test_equal_importance_four_peers():
    # source, two relays, and a peer fed by both
    net = build_network(4, [(0, 1), (0, 2), (1, 3), (2, 3), (1, 2)], 0, {1, 2, 3}, 1)
    res = simulate(net, select_coding_nodes(net, "CAN"), cfg(blocks=6, B=6, seed=2))
    assert res.metrics.failure_rate == 0
    M = res.content.reshape(6, 16)
    rng = np.random.default_rng(0)
    for gone in res.peers:
        pool = np.vstack([res.peers[v].buffers[0].rows for v in res.peers if v != gone])
        for _ in range(20):
            picked = []
            for row in pool[rng.permutation(len(pool))]:
                if rank([r[:6] for r in picked] + [row[:6]]) > len(picked):
                    picked.append(row)
            assert len(picked) == 6
            assert np.array_equal(decode_segment([(r[:6], r[6:]) for r in picked]), M)


# -- comparisons ------------------------------------------------------------------------

def test_butterfly_gans_equals_can():
    net = butterfly()
    ga = select_coding_nodes(net, "CAN").assignment
    out = compare_strategies(net, cfg(blocks=16), ga, range(10))
    assert out["GANS"] == out["CAN"]
    assert set(out) == {"GANS", "RSN", "CAN", "NONE"} and all(len(v) == 10 for v in out.values())


def test_rsn_with_every_node_is_can(nset):
    k = len(Layout(nset).coding_candidates)
    base = replace(cfg(blocks=32), rsn_count=k)
    out = compare_strategies(nset, base, None, range(3), strategies=("RSN", "CAN"))
    assert out["RSN"] == out["CAN"]


def test_compare_with_churn_is_paired(nset):
    out = compare_strategies(nset, cfg(blocks=32, deadline_rounds=300), None, [0, 1], ("CAN", "NONE"),
                             dynamic_links=9)
    assert len(out["CAN"]) == 2
    with pytest.raises(MissingGaResult):
        compare_strategies(nset, cfg(), None, [0])


def test_summarize():
    net = butterfly()
    runs = [run_simulation(net, select_coding_nodes(net, "CAN"), cfg(seed=s)) for s in range(4)]
    s = summarize(runs)
    assert s["failure_rate"] == (0.0, 0.0)
    assert s["avg_distribution_time"][0] == pytest.approx(np.mean([m.avg_distribution_time for m in runs]))


def test_rsn_min_count(nset):
    k = rsn_min_count(nset, 0)
    assert 0 <= k <= len(Layout(nset).coding_candidates)
    assert rsn_min_count(butterfly(), 0) == 1
    assert rsn_min_count(butterfly(target_rate=1), 0) == 0


# -- output files ---------------------------------------------------------------------------

def test_metrics_csv_and_trace(tmp_path):
    net = butterfly()
    res = simulate(net, select_coding_nodes(net, "CAN"), cfg(trace=True))
    path = tmp_path / "m.csv"
    write_metrics_csv(path, [("CAN", 0, res.metrics, 8)], extra_columns=["file_blocks"])
    rows = list(csv.reader(path.open()))
    assert rows[0] == METRIC_COLUMNS + ["file_blocks"]
    assert rows[1][0] == "CAN" and rows[1][-1] == "8"
    tpath = tmp_path / "t.csv"
    write_trace(tpath, res)
    lines = tpath.read_text().splitlines()
    assert lines[0] == "round,link,segment,innovative" and len(lines) == 1 + res.sent
