"""Reference implementations used as test oracles (deliberately naive)."""

import itertools
from fractions import Fraction

import numpy as np


def average_ranks(values):
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        for t in range(i, j + 1):
            ranks[order[t]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def enumeration_p(diffs):
    """Two-sided p by listing every sign assignment (exact rational arithmetic)."""
    d = [x for x in diffs if x != 0]
    ranks = [Fraction(r) for r in average_ranks([abs(x) for x in d])]
    observed = sum(r for r, x in zip(ranks, d) if x > 0)
    lo = hi = 0
    for signs in itertools.product((0, 1), repeat=len(d)):
        w = sum(r for r, s in zip(ranks, signs) if s)
        lo += w <= observed
        hi += w >= observed
    return float(min(Fraction(1), Fraction(2 * min(lo, hi), 2 ** len(d))))


def coincidence_alpha(a, b):
    """Interval alpha via the coincidence matrix of pairable values."""
    values = sorted(set(a) | set(b))
    idx = {v: j for j, v in enumerate(values)}
    o = np.zeros((len(values), len(values)))
    for x, y in zip(a, b):
        o[idx[x], idx[y]] += 1  # m_u - 1 = 1 for two raters
        o[idx[y], idx[x]] += 1
    n_c = o.sum(axis=1)
    n = n_c.sum()
    delta = np.subtract.outer(values, values) ** 2
    d_o = (o * delta).sum()
    d_e = (np.outer(n_c, n_c) * delta).sum() / (n - 1)
    return 1 - d_o / d_e
