"""Shared test utilities: tabular games and independent Shapley oracles."""

from __future__ import annotations

from itertools import permutations

from shapmat.estimators import CallableGame


def table_game(players, rng, lo=0.0, hi=1.0, zero_empty=False):
    """A random bounded game stored as an explicit coalition table."""
    players = tuple(sorted(players))
    table = {}
    for mask in range(1 << len(players)):
        s = tuple(players[i] for i in range(len(players)) if mask >> i & 1)
        table[s] = float(rng.uniform(lo, hi))
    if zero_empty:
        table[()] = 0.0
    return CallableGame(lambda s: table[s]), table


def fixed_game(table):
    return CallableGame(lambda s: table[tuple(sorted(s))])


def permutation_shapley_oracle(utility, players):
    """Average marginal contributions over all |players|! orderings.

    Independent of the subset-weight enumeration used by the library.
    """
    players = tuple(sorted(players))
    totals = {z: 0.0 for z in players}
    count = 0
    for order in permutations(players):
        prev = utility(())
        prefix = []
        for z in order:
            prefix.append(z)
            v = utility(tuple(sorted(prefix)))
            totals[z] += v - prev
            prev = v
        count += 1
    return {z: t / count for z, t in totals.items()}


def definition_shapley_oracle(utility, players):
    """Direct evaluation of the subset-sum definition (per-player marginals)."""
    from math import comb

    players = tuple(sorted(players))
    n = len(players)
    out = {}
    for z in players:
        rest = [p for p in players if p != z]
        total = 0.0
        for mask in range(1 << len(rest)):
            s = tuple(rest[i] for i in range(len(rest)) if mask >> i & 1)
            s_with = tuple(sorted(s + (z,)))
            total += (utility(s_with) - utility(s)) / comb(n - 1, len(s))
        out[z] = total / n
    return out
