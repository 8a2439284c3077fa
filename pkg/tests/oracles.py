"""Slow, independent reference implementations used as test oracles.

Nothing here imports the package's arithmetic or flow code.
"""

from __future__ import annotations

import itertools

POLY = {4: 0x13, 8: 0x11B, 16: 0x1100B}


def mul(a: int, b: int, q: int = 8) -> int:
    """Carry-less product reduced bit by bit from the top."""
    prod = 0
    for i in range(q):
        if b >> i & 1:
            prod ^= a << i
    poly = POLY[q]
    for bit in range(2 * q - 2, q - 1, -1):
        if prod >> bit & 1:
            prod ^= poly << (bit - q)
    return prod


def inv(a: int, q: int = 8) -> int:
    # a^(2^q - 2) by square and multiply
    result, base, e = 1, a, (1 << q) - 2
    while e:
        if e & 1:
            result = mul(result, base, q)
        base = mul(base, base, q)
        e >>= 1
    return result


def rank(rows, q: int = 8) -> int:
    """Rank by column-wise elimination on lists of ints."""
    m = [list(map(int, r)) for r in rows]
    if not m:
        return 0
    r = 0
    for col in range(len(m[0])):
        piv = next((i for i in range(r, len(m)) if m[i][col]), None)
        if piv is None:
            continue
        m[r], m[piv] = m[piv], m[r]
        f = inv(m[r][col], q)
        m[r] = [mul(f, x, q) for x in m[r]]
        for i in range(len(m)):
            if i != r and m[i][col]:
                g = m[i][col]
                m[i] = [x ^ mul(g, y, q) for x, y in zip(m[i], m[r])]
        r += 1
    return r


def simple_paths(n_nodes: int, links, s: int, t: int):
    """All simple s->t paths as tuples of link indices (alive links only)."""
    out_of = {v: [] for v in range(n_nodes)}
    for i, (u, v) in enumerate(links):
        out_of[u].append((i, v))
    paths = []

    def walk(v, used, seen):
        if v == t:
            paths.append(tuple(used))
            return
        for i, w in out_of[v]:
            if w not in seen:
                walk(w, used + [i], seen | {w})

    walk(s, [], {s})
    return paths


def max_disjoint_paths(n_nodes: int, links, s: int, t: int) -> int:
    """Largest set of pairwise link-disjoint s->t paths (unit capacities)."""
    paths = simple_paths(n_nodes, links, s, t)
    top = min(sum(1 for u, _ in links if u == s), sum(1 for _, v in links if v == t))
    for k in range(top, 0, -1):
        for combo in itertools.combinations(paths, k):
            used = [e for p in combo for e in p]
            if len(used) == len(set(used)):
                return k
    return 0
