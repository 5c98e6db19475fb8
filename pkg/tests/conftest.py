"""Shared instance factories for the test suite.

Random games are constructed so that a chosen mixture is exactly an
equilibrium: sample utilities, then shift whole own-action slices so each
player is indifferent across her support against the others' mixtures.
Slice shifts preserve the difference structure, so non-degeneracy is a
property of the draw and is filtered for.
"""

from __future__ import annotations

import zlib

import numpy as np
import pytest

from commitment_games import (
    Game,
    MixedProfile,
    deviation_payoffs,
    expected_utility,
    is_nash,
    is_non_degenerate,
    welfare_max,
)


def full_support_two_player(rng, actions=3, min_prob=0.08, span=2.0):
    """Random 2-player game with a full-support non-degenerate equilibrium."""
    while True:
        p1 = rng.dirichlet(np.ones(actions) * 3.0)
        p2 = rng.dirichlet(np.ones(actions) * 3.0)
        if min(p1.min(), p2.min()) < min_prob:
            continue
        u1 = rng.uniform(-span, span, (actions, actions))
        u2 = rng.uniform(-span, span, (actions, actions))
        v1 = u1 @ p2
        u1 = u1 - (v1 - v1[0])[:, None]
        v2 = p1 @ u2
        u2 = u2 - (v2 - v2[0])[None, :]
        game = Game([u1, u2])
        sigma = MixedProfile([p1, p2])
        if not is_nash(game, sigma, 1e-9).ok:
            continue
        if not is_non_degenerate(game, sigma).ok:
            continue
        return game, sigma


def full_support_multiplayer(rng, players=3, actions=2, min_prob=0.2, span=2.0):
    """Random n-player game with a full-support non-degenerate equilibrium."""
    while True:
        probs = [rng.dirichlet(np.ones(actions) * 4.0) for _ in range(players)]
        if min(p.min() for p in probs) < min_prob:
            continue
        u = rng.uniform(-span, span, (players, *[actions] * players))
        game0 = Game(u)
        sigma = MixedProfile(probs)
        u = np.array(u)
        for i in range(players):
            vals = deviation_payoffs(game0, sigma, i)
            for a in range(1, actions):
                idx = [slice(None)] * players
                idx[i] = a
                u[(i, *idx)] += vals[0] - vals[a]
        game = Game(u)
        if not is_nash(game, sigma, 1e-9).ok:
            continue
        try:
            if not is_non_degenerate(game, sigma).ok:
                continue
        except ValueError:
            continue
        return game, sigma


def feasible_payoff_split(rng, game, sigma, min_spare=0.3):
    """Random welfare split strictly improving every player, or None."""
    w, _ = welfare_max(game)
    base = [expected_utility(game, sigma, i) for i in range(game.num_players)]
    spare = w - sum(base)
    if spare < min_spare:
        return None
    weights = rng.dirichlet(np.ones(game.num_players))
    return [base[i] + float(weights[i]) * spare for i in range(game.num_players)]


def random_game(rng, players, counts, span=3.0, integer=False):
    shape = (players, *counts)
    if integer:
        u = rng.integers(-3, 4, shape).astype(float)
    else:
        u = rng.uniform(-span, span, shape)
    return Game(u)


@pytest.fixture()
def rng(request):
    # deterministic per test and independent of execution order
    return np.random.default_rng(zlib.crc32(request.node.nodeid.encode()))
