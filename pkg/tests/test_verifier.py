import dataclasses

import numpy as np
import pytest

from commitment_games import (
    BURN,
    CommitmentRound,
    MixedProfile,
    Pledge,
    build_plan,
    check_deviations,
    check_on_path,
    expected_utility,
    fold_plan,
    round_bound_check,
    verify_plan,
)
from commitment_games.catalog import (
    cyclic_with_prize,
    naive_spoiler_plan,
    spoiler_3x3,
    two_mode_mixing,
    unfair_split,
)
from commitment_games.verifier import commitment_deviation_moves


def split_plan(delta=1.0):
    game = unfair_split()
    sigma = MixedProfile.pure((2, 2), (0, 0))
    return game, build_plan(game, sigma, payoffs=(4.0, 3.0), delta=delta)


def prize_plan(delta=0.5):
    game = cyclic_with_prize()
    sigma = MixedProfile.uniform_over((4, 4), [(0, 1, 2), (0, 1, 2)])
    return game, build_plan(game, sigma, target=(3, 3), delta=delta)


def test_on_path_prize_plan_all_pass():
    game, plan = prize_plan()
    results = check_on_path(game, plan)
    failed = [k for k, v in results.items() if v.status == "fail"]
    assert not failed
    assert results["a"].status == "pass"
    assert results["a1"].status == "pass"
    assert results["b"].status == "pass"


def test_on_path_split_plan_checkpoints():
    game, plan = split_plan()
    sigma = plan.baseline
    for k in range(plan.num_rounds + 1):
        g = fold_plan(game, plan, k)
        assert g.payoff(0, (0, 0)) == 0.0  # anchor outcome untouched
    results = check_on_path(game, plan)
    assert all(v.status != "fail" for v in results.values())
    terminal = fold_plan(game, plan)
    assert tuple(terminal.payoffs((1, 1))) == (4.0, 3.0)


def test_sabotaged_plan_fails_with_round_index():
    game, plan = split_plan()
    rounds = list(plan.rounds)
    rounds[2] = CommitmentRound((Pledge(0, (1, 1), 1, 2.0),))  # breaks the cap
    bad = dataclasses.replace(plan, rounds=tuple(rounds))
    results = check_on_path(game, bad)
    assert results["round_cap"].status == "fail"
    assert results["round_cap"].witness == {"round": 2}
    report = verify_plan(game, bad)
    assert not report.accepted


def test_deviation_classes_on_split_plan():
    game, plan = split_plan()
    results = check_deviations(game, plan, amounts=(0.5, 1.0))
    assert results["commitment"].worst_gain <= 1e-9
    assert not results["commitment"].structural_failures
    # stopping after round 2 strands the deviator at the anchor: 0 < 4
    stops = results["early_stop"]
    assert stops.worst_gain <= 1e-9
    assert stops.worst_gain == pytest.approx(-3.0, abs=1e-9)  # player 2 side
    assert results["continue_when_stop"].worst_gain == 0.0
    # the worst terminal wobble: u'_2(B, A) = -2 against the promised 3
    assert results["terminal_action"].worst_gain == pytest.approx(-5.0, abs=1e-9)


def test_naive_plan_rejected_with_positive_gain():
    game = spoiler_3x3()
    plan = naive_spoiler_plan(0.5)
    report = verify_plan(game, plan)
    assert not report.accepted
    commitment = report.deviations["commitment"]
    assert commitment.worst_gain > 0
    assert commitment.structural_failures  # property (a) refuted
    assert report.witnesses


def test_round_bound_examples():
    game, plan = split_plan()
    check = round_bound_check(plan, game)
    assert check.ok and check.rounds == 6
    assert check.bound == pytest.approx(64 * 2 * 13 * 2 / 1.0)

    empty_game = cyclic_with_prize()
    sigma = MixedProfile.uniform_over((4, 4), [(0, 1, 2), (0, 1, 2)])
    from commitment_games import build_partial_support_plan
    trivial = build_partial_support_plan(unfair_split(),
                                         MixedProfile.pure((2, 2), (0, 0)),
                                         (0, 0), 0.5, validate=False)
    assert round_bound_check(trivial, unfair_split()).ok  # empty plan passes


def test_halving_delta_at_most_two_and_a_half_times_rounds():
    game = cyclic_with_prize()
    sigma = MixedProfile.uniform_over((4, 4), [(0, 1, 2), (0, 1, 2)])
    plan_a = build_plan(game, sigma, target=(3, 3), delta=0.5)
    plan_b = build_plan(game, sigma, target=(3, 3), delta=0.25)
    assert plan_b.num_rounds <= 2.5 * plan_a.num_rounds


def test_grid_refinement_never_turns_fail_into_pass():
    game = spoiler_3x3()
    plan = naive_spoiler_plan(0.5)
    coarse = check_deviations(game, plan, amounts=(0.5,))
    fine = check_deviations(game, plan, amounts=(0.25, 0.5))
    assert coarse["commitment"].worst_gain > 1e-9
    assert fine["commitment"].worst_gain >= coarse["commitment"].worst_gain - 1e-12


def test_a1_implies_a_on_the_corpus():
    for game, plan in (split_plan(), prize_plan()):
        results = check_on_path(game, plan)
        if results["a1"].status == "pass":
            assert results["a"].status == "pass"


def test_punishment_ceiling_bound_for_burn_plans():
    # along a burn-only plan the punishment found never exceeds u(sigma) + L
    game, plan = prize_plan()
    from commitment_games import find_punishment_equilibrium
    stage = plan.punishment[0]
    for k in range(plan.num_rounds + 1):
        g = fold_plan(game, plan, k)
        result = find_punishment_equilibrium(g, stage.supports, stage.seed,
                                             stage.ceiling)
        assert result.profile is not None
        for i in range(2):
            assert expected_utility(g, result.profile, i) <= stage.ceiling[i] + 1e-9


def test_deviation_grid_contents():
    game = unfair_split()
    moves = dict(commitment_deviation_moves(game, 0, 1.0, "transfers",
                                            (0.5, 1.0)))
    assert "noop" in moves
    assert any(name.startswith("P(0, 0)") or name.startswith("P(0,")
               for name in moves)
    assert any(name.startswith("A pay") for name in moves)
    burn_moves = dict(commitment_deviation_moves(game, 0, 1.0, "burn_only",
                                                 (0.5, 1.0)))
    assert not any(name.startswith(("T", "A")) for name in burn_moves)


def test_report_serialization_round_trip():
    game, plan = split_plan()
    report = verify_plan(game, plan, amounts=(0.5, 1.0))
    doc = report.to_dict()
    assert doc["accepted"] is True
    assert doc["grid"]["amounts"] == [0.5, 1.0]
    assert doc["grid"]["certification"] == "grid"
    assert doc["deviations"]["commitment"]["worst_gain"] <= 1e-9
    assert doc["properties"]["b"]["status"] == "pass"


def test_strategy_bundle_validity():
    from commitment_games import StrategyBundle

    game, plan = prize_plan()
    assert StrategyBundle(plan).valid(game)
    bad_game = spoiler_3x3()
    assert not StrategyBundle(naive_spoiler_plan(0.5)).valid(bad_game)
