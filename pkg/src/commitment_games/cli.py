"""Command-line workbench.

Subcommands: analyze a game file, build and verify a plan, simulate a plan
into a transcript, verify a plan file, replay the worked-example corpus,
and export a catalog game.  Exit codes: 0 success, 1 verification failure,
2 input error, 3 infeasibility (construction hypotheses unmet).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys

from . import __version__
from .catalog import GAMES, reproduce
from .engine import (
    cast_votes,
    open_session,
    play_terminal,
    submit_round,
    transcript_to_dict,
)
from .equilibria import (
    DegenerateEquilibriumError,
    NotNashError,
    SupportError,
    enumerate_pure_nash,
    is_non_degenerate,
    solve_on_support,
)
from .games import (
    Game,
    GameShapeError,
    MixedProfile,
    ProfileError,
    content_hash,
    expected_utility,
    format_matrix,
    load_game,
    save_game,
    welfare_max,
)
from .protocols import (
    InfeasibleError,
    build_plan,
    choose_delta,
    load_plan,
    save_plan,
)
from .verifier import verify_plan

EXIT_OK = 0
EXIT_VERIFICATION = 1
EXIT_INPUT = 2
EXIT_INFEASIBLE = 3


class InputError(ValueError):
    pass


def _file_sha256(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def _meta(args, inputs: dict) -> dict:
    return {
        "tool": {"name": "commitment-games", "version": __version__},
        "rng_seed": getattr(args, "seed", 0),
        "inputs": inputs,
    }


def _load_game(path) -> Game:
    try:
        return load_game(path)
    except (OSError, json.JSONDecodeError, GameShapeError, KeyError,
            TypeError, ValueError) as exc:
        raise InputError(f"cannot read game file {path}: {exc}") from exc


def _parse_profile_indices(text: str, game: Game) -> tuple[int, ...]:
    """One action per player, 1-based indices or action names, comma-separated."""
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != game.num_players:
        raise InputError(f"expected {game.num_players} actions, got {len(parts)}")
    out = []
    for i, token in enumerate(parts):
        if game.action_names is not None and token in game.action_names[i]:
            out.append(game.action_names[i].index(token))
            continue
        try:
            a = int(token) - 1
        except ValueError as exc:
            raise InputError(f"player {i + 1}: unknown action {token!r}") from exc
        if not 0 <= a < game.action_counts[i]:
            raise InputError(f"player {i + 1}: action index {token} out of range")
        out.append(a)
    return tuple(out)


def _parse_supports(text: str, game: Game) -> list[tuple[int, ...]]:
    """Per-player 1-based index lists, e.g. '1,2x1,2' for two players."""
    blocks = text.split("x")
    if len(blocks) != game.num_players:
        raise InputError(f"expected {game.num_players} support blocks, "
                         f"got {len(blocks)}")
    out = []
    for i, block in enumerate(blocks):
        try:
            idx = tuple(int(t) - 1 for t in block.split(",") if t.strip())
        except ValueError as exc:
            raise InputError(f"bad support block {block!r}") from exc
        if not idx or any(not 0 <= a < game.action_counts[i] for a in idx):
            raise InputError(f"player {i + 1}: bad support {block!r}")
        out.append(idx)
    return out


def _parse_sigma(text: str, game: Game) -> MixedProfile:
    """Per-player probability vectors, ';'-separated, ','-separated entries."""
    try:
        vecs = [[float(x) for x in block.split(",")]
                for block in text.split(";")]
        return MixedProfile(vecs)
    except (ValueError, ProfileError) as exc:
        raise InputError(f"bad --sigma: {exc}") from exc


def _default_sigma(game: Game) -> MixedProfile:
    """First pure Nash profile (lex order) that is non-degenerate."""
    for prof in enumerate_pure_nash(game):
        sigma = MixedProfile.pure(game.action_counts, prof)
        try:
            if is_non_degenerate(game, sigma).ok:
                return sigma
        except NotNashError:
            continue
    raise InfeasibleError("no non-degenerate pure equilibrium to default to; "
                          "pass --sigma explicitly")


def _profile_label(game: Game, profile) -> str:
    return "(" + ",".join(game.action_label(i, a)
                          for i, a in enumerate(profile)) + ")"


def _write_doc(doc: dict, path) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def cmd_analyze(args) -> int:
    game = _load_game(args.game)
    print(format_matrix(game))
    pure = enumerate_pure_nash(game)
    print("pure Nash:", " ".join(_profile_label(game, p) for p in pure) or "none")
    w, prof = welfare_max(game)
    print(f"welfare max: {w:g} at {_profile_label(game, prof)}")
    for spec in args.support or []:
        supports = _parse_supports(spec, game)
        solve = solve_on_support(game, supports,
                                 MixedProfile.uniform_over(game.action_counts,
                                                           supports))
        print(f"support {spec}:")
        if solve.profile is None:
            print(f"  no equilibrium ({solve.status})")
            continue
        probs = "; ".join(",".join(f"{x:.6g}" for x in p)
                          for p in solve.profile.probs)
        print(f"  solution {probs}")
        utils = ", ".join(f"{expected_utility(game, solve.profile, i):.6g}"
                          for i in range(game.num_players))
        print(f"  expected utilities {utils}")
        report = is_non_degenerate(game, solve.profile)
        print(f"  non-degenerate: {'yes' if report.ok else 'no'} "
              f"(|det|={abs(report.det):.6g}, threshold={report.det_threshold:.3g}, "
              f"min residual={report.min_residual:.6g})")
    return EXIT_OK


def _describe_round(game: Game, round, index: int) -> str:
    if not round.pledges:
        return f"  round {index}: (idle)"
    bits = []
    for p in round.pledges:
        target = "burn" if p.recipient == "BURN" else f"to P{p.recipient + 1}"
        bits.append(f"P{p.payer + 1} {p.amount:g} {target} on "
                    f"{_profile_label(game, p.outcome)}")
    return f"  round {index}: " + "; ".join(bits)


def cmd_plan(args) -> int:
    game = _load_game(args.game)
    sigma = _parse_sigma(args.sigma, game) if args.sigma else _default_sigma(game)
    target = payoffs = None
    if args.target is not None and args.payoffs is not None:
        raise InputError("give either --target or --payoffs, not both")
    if args.target is not None:
        target = _parse_profile_indices(args.target, game)
        if args.mode == "transfers":
            raise InputError("--target plans are burn-only constructions")
    elif args.payoffs is not None:
        try:
            payoffs = [float(x) for x in args.payoffs.split(",")]
        except ValueError as exc:
            raise InputError(f"bad --payoffs: {exc}") from exc
        if len(payoffs) != game.num_players:
            raise InputError("one payoff per player required")
        if args.mode == "burn":
            raise InfeasibleError("payoff splits need transfers; burning "
                                  "cannot redistribute welfare")
    else:
        raise InputError("one of --target or --payoffs is required")

    if args.delta == "auto":
        delta, plan = choose_delta(game, sigma, target=target, payoffs=payoffs)
    else:
        try:
            delta = float(args.delta)
        except ValueError as exc:
            raise InputError(f"bad --delta: {exc}") from exc
        plan = build_plan(game, sigma, target=target, payoffs=payoffs,
                          delta=delta)
    report = verify_plan(game, plan, amounts=args.grid_amounts,
                         budget=args.budget)
    print(f"case: {plan.case_tag}; delta={delta:g}; rounds={plan.num_rounds}")
    for k, r in enumerate(plan.rounds):
        print(_describe_round(game, r, k + 1))
    print(f"target {_profile_label(game, plan.target.profile)}, expected payoffs "
          + ",".join(f"{x:g}" for x in plan.expected_terminal_payoffs))
    print(f"verification: {'accepted' if report.accepted else 'REJECTED'}")
    meta = _meta(args, {"game": _file_sha256(args.game),
                        "game_content": content_hash(game)})
    if args.out:
        save_plan(plan, args.out, extra=meta)
        print(f"plan written to {args.out}")
    if args.report:
        doc = report.to_dict()
        doc["meta"] = meta
        _write_doc(doc, args.report)
    return EXIT_OK if report.accepted else EXIT_VERIFICATION


def _plan_for_game(args, game: Game):
    plan = load_plan(args.plan)
    if plan.base_game_hash != content_hash(game):
        raise InputError("plan/game mismatch: the plan was built for a game "
                         "with a different content hash")
    return plan


def cmd_simulate(args) -> int:
    game = _load_game(args.game)
    if args.script:
        with open(args.script, "r", encoding="utf-8") as fh:
            script = json.load(fh)
        from .engine import round_from_dict
        state = open_session(game, float(script["delta"]),
                             script.get("mode", "transfers"))
        votes = list(script.get("votes", []))
        for r in script.get("rounds", []):
            state = submit_round(state, round_from_dict(r))
            state = cast_votes(state, votes.pop(0) if votes
                               else [True] * game.num_players)
        if state.phase == "playing" and script.get("terminal_actions"):
            state = play_terminal(state, [int(a) - 1
                                          for a in script["terminal_actions"]])
    else:
        plan = _plan_for_game(args, game)
        state = open_session(game, plan.delta, plan.mode)
        n = game.num_players
        if plan.rounds:
            for k, r in enumerate(plan.rounds):
                state = submit_round(state, r)
                keep_going = k + 1 < len(plan.rounds)
                state = cast_votes(state, [keep_going] * n)
        else:
            from .engine import CommitmentRound
            state = submit_round(state, CommitmentRound())
            state = cast_votes(state, [False] * n)
        state = play_terminal(state, plan.target.profile)
        payoffs = state.transcript.final_payoffs
        print("final payoffs:", ",".join(f"{x:.12g}" for x in payoffs))
    doc = transcript_to_dict(state)
    doc["meta"] = _meta(args, {"game": _file_sha256(args.game)})
    _write_doc(doc, args.out)
    return EXIT_OK


def cmd_verify(args) -> int:
    game = _load_game(args.game)
    plan = _plan_for_game(args, game)
    report = verify_plan(game, plan, amounts=args.grid_amounts,
                         budget=args.budget)
    doc = report.to_dict()
    doc["meta"] = _meta(args, {"game": _file_sha256(args.game),
                               "plan": _file_sha256(args.plan)})
    _write_doc(doc, args.out)
    if args.witness and report.witnesses:
        _write_doc({"witnesses": report.witnesses}, args.witness)
    print(f"verification: {'accepted' if report.accepted else 'REJECTED'}")
    return EXIT_OK if report.accepted else EXIT_VERIFICATION


def cmd_reproduce(args) -> int:
    ids = args.examples or None
    rows = reproduce(ids)
    width = max(len(r.example) for r in rows)
    for r in rows:
        mark = "PASS" if r.ok else "FAIL"
        print(f"{r.example.ljust(width)}  {mark}  {r.detail}")
    return EXIT_OK if all(r.ok for r in rows) else EXIT_VERIFICATION


def cmd_export(args) -> int:
    if args.example not in GAMES:
        raise InputError(f"unknown example {args.example!r}; "
                         f"known: {', '.join(sorted(GAMES))}")
    game = GAMES[args.example]()
    if args.out in (None, "-"):
        from .games import game_to_dict
        _write_doc(game_to_dict(game), None)
    else:
        save_game(game, args.out)
        print(f"{args.example} written to {args.out}")
    return EXIT_OK


def _add_grid_args(p):
    p.add_argument("--grid", default=None,
                   help="comma-separated deviation amounts (default: delta/2,delta)")
    p.add_argument("--budget", type=int, default=None,
                   help="max number of prefixes probed per deviation class")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="commitment-games",
        description="workbench for staged side-payment commitment games")
    ap.add_argument("--seed", type=int, default=0,
                    help="rng seed recorded in output artifacts")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="pure Nash set, welfare max, support solves")
    p.add_argument("game")
    p.add_argument("--support", action="append",
                   help="per-player 1-based support lists, e.g. 1,2x1,2")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("plan", help="build and verify a commitment schedule")
    p.add_argument("game")
    p.add_argument("--sigma", help="baseline profile, e.g. 0.5,0.5,0;0.5,0.5,0")
    p.add_argument("--target", help="pure target outcome, e.g. 4,4 or B,B")
    p.add_argument("--payoffs", help="welfare split, e.g. 4,3")
    p.add_argument("--delta", default="auto", help="per-round cap or 'auto'")
    p.add_argument("--mode", choices=["transfers", "burn"], default=None)
    p.add_argument("-o", "--out", help="plan file to write")
    p.add_argument("--report", help="verification report file")
    _add_grid_args(p)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("simulate", help="replay a plan into a transcript")
    p.add_argument("game")
    p.add_argument("plan", nargs="?")
    p.add_argument("--script", help="interactive script JSON instead of a plan")
    p.add_argument("-o", "--out", default="-", help="transcript file")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", help="verify a plan file against its game")
    p.add_argument("game")
    p.add_argument("plan")
    p.add_argument("-o", "--out", default="-", help="report file")
    p.add_argument("--witness", help="dump counterexample transcripts here")
    _add_grid_args(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("reproduce", help="replay the worked-example corpus")
    p.add_argument("examples", nargs="*",
                   help="example ids (default: all)")
    p.set_defaults(func=cmd_reproduce)

    p = sub.add_parser("export", help="write a catalog game to a JSON file")
    p.add_argument("example")
    p.add_argument("-o", "--out", default="-")
    p.set_defaults(func=cmd_export)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if getattr(args, "grid", None):
        try:
            args.grid_amounts = tuple(float(x) for x in args.grid.split(","))
        except ValueError:
            print("error: bad --grid", file=sys.stderr)
            return EXIT_INPUT
    elif hasattr(args, "grid"):
        args.grid_amounts = None
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (InfeasibleError, DegenerateEquilibriumError, NotNashError) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (GameShapeError, ProfileError, SupportError, OSError,
            json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
