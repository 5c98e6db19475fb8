"""Staged commitment sessions over a base game.

A session runs the capped pre-play loop: players submit one simultaneous
round of pledges (per payer, per outcome, totals capped at delta), the
pledges fold into the current game, everyone votes, and the loop repeats
only on unanimous consent.  When any player votes to stop, a terminal
pure profile is played in the current game.  The burn_only variant
restricts pledge recipients to BURN.

States are immutable values; every operation returns a new state, and a
transcript records enough to replay the session bit-for-bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Sequence

from .games import (
    BURN,
    Game,
    TransferError,
    apply_transfers,
    content_hash,
    game_from_dict,
    game_to_dict,
)

TRANSCRIPT_SCHEMA_VERSION = 1

MODES = ("transfers", "burn_only")
PHASES = ("committing", "voting", "playing", "done")


class SessionError(ValueError):
    """Operation applied in the wrong phase or with bad session parameters."""


class RoundViolationError(ValueError):
    def __init__(self, violation: "RoundViolation"):
        super().__init__(str(violation))
        self.violation = violation


class ReplayError(ValueError):
    def __init__(self, step: int, message: str):
        super().__init__(f"replay failed at step {step}: {message}")
        self.step = step


@dataclass(frozen=True)
class Pledge:
    """One outcome-contingent transfer promise."""

    payer: int
    outcome: tuple[int, ...]
    recipient: int | str  # player index or BURN
    amount: float

    def __post_init__(self):
        object.__setattr__(self, "outcome", tuple(int(a) for a in self.outcome))
        if self.amount < 0:
            raise TransferError("negative", f"negative pledge amount {self.amount}",
                                self.payer, self.outcome)
        if self.recipient == self.payer:
            raise TransferError("recipient", "a player cannot pay itself",
                                self.payer, self.outcome)


@dataclass(frozen=True)
class CommitmentRound:
    """One simultaneous round of pledges from any subset of players."""

    pledges: tuple[Pledge, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "pledges", tuple(self.pledges))

    def by_payer(self, player: int) -> tuple[Pledge, ...]:
        return tuple(p for p in self.pledges if p.payer == player)

    def merged(self, other: "CommitmentRound") -> "CommitmentRound":
        return CommitmentRound(self.pledges + other.pledges)


@dataclass(frozen=True)
class RoundViolation:
    code: str  # "cap" | "negative" | "recipient" | "mode" | "outcome" | "payer"
    payer: int | None
    outcome: tuple[int, ...] | None
    message: str

    def __str__(self) -> str:
        return f"[{self.code}] {self.message}"


@dataclass(frozen=True)
class Transcript:
    """Ordered record of rounds, votes, and the terminal play."""

    rounds: tuple[CommitmentRound, ...] = ()
    votes: tuple[tuple[bool, ...], ...] = ()  # True = continue
    terminal_actions: tuple[int, ...] | None = None
    final_payoffs: tuple[float, ...] | None = None


@dataclass(frozen=True)
class SessionState:
    base_game: Game
    current_game: Game
    delta: float
    mode: str
    phase: str
    transcript: Transcript


def open_session(game: Game, delta: float, mode: str = "transfers") -> SessionState:
    if not delta > 0:
        raise SessionError(f"delta must be strictly positive, got {delta}")
    if mode not in MODES:
        raise SessionError(f"mode must be one of {MODES}")
    return SessionState(game, game, float(delta), mode, "committing", Transcript())


def validate_round(state: SessionState, round: CommitmentRound) -> RoundViolation | None:
    """Check cap, sign, recipient, and mode legality; None when the round is ok."""
    game, n = state.current_game, state.current_game.num_players
    totals: dict[tuple[int, tuple[int, ...]], float] = {}
    for p in round.pledges:
        if not 0 <= p.payer < n:
            return RoundViolation("payer", p.payer, p.outcome,
                                  f"payer {p.payer} out of range")
        if len(p.outcome) != n or any(
                not 0 <= a < c for a, c in zip(p.outcome, game.action_counts)):
            return RoundViolation("outcome", p.payer, p.outcome,
                                  f"outcome {p.outcome} out of range")
        if p.amount < 0:
            return RoundViolation("negative", p.payer, p.outcome,
                                  f"negative amount {p.amount}")
        if p.recipient != BURN:
            if not isinstance(p.recipient, int) or not 0 <= p.recipient < n:
                return RoundViolation("recipient", p.payer, p.outcome,
                                      f"recipient {p.recipient!r} out of range")
            if p.recipient == p.payer:
                return RoundViolation("recipient", p.payer, p.outcome,
                                      "a player cannot pay itself")
            if state.mode == "burn_only":
                return RoundViolation("mode", p.payer, p.outcome,
                                      "only BURN pledges allowed in burn_only mode")
        key = (p.payer, p.outcome)
        totals[key] = totals.get(key, 0.0) + p.amount
        if totals[key] > state.delta + 1e-12:
            return RoundViolation("cap", p.payer, p.outcome,
                                  f"player {p.payer} pays {totals[key]:.12g} > "
                                  f"delta={state.delta:.12g} at {p.outcome}")
    return None


def submit_round(state: SessionState, round: CommitmentRound) -> SessionState:
    if state.phase != "committing":
        raise SessionError(f"cannot submit a round in phase {state.phase!r}")
    violation = validate_round(state, round)
    if violation is not None:
        raise RoundViolationError(violation)
    new_game = apply_transfers(state.current_game, round,
                               delta=state.delta, mode=state.mode)
    transcript = replace(state.transcript, rounds=state.transcript.rounds + (round,))
    return replace(state, current_game=new_game, phase="voting", transcript=transcript)


def cast_votes(state: SessionState, votes: Sequence[bool]) -> SessionState:
    if state.phase != "voting":
        raise SessionError(f"cannot vote in phase {state.phase!r}")
    votes = tuple(bool(v) for v in votes)
    if len(votes) != state.current_game.num_players:
        raise SessionError("one vote per player required")
    transcript = replace(state.transcript, votes=state.transcript.votes + (votes,))
    phase = "committing" if all(votes) else "playing"
    return replace(state, phase=phase, transcript=transcript)


def play_terminal(state: SessionState, actions: Sequence[int]) -> SessionState:
    if state.phase != "playing":
        raise SessionError(f"cannot play in phase {state.phase!r}")
    actions = tuple(int(a) for a in actions)
    game = state.current_game
    if len(actions) != game.num_players or any(
            not 0 <= a < c for a, c in zip(actions, game.action_counts)):
        raise SessionError(f"terminal actions {actions} out of range")
    payoffs = tuple(float(x) for x in game.payoffs(actions))
    transcript = replace(state.transcript, terminal_actions=actions,
                         final_payoffs=payoffs)
    return replace(state, phase="done", transcript=transcript)


def replay(base: Game, transcript: Transcript, delta: float,
           mode: str = "transfers") -> SessionState:
    """Re-execute a transcript from the base game, validating every step."""
    state = open_session(base, delta, mode)
    votes = list(transcript.votes)
    for k, round in enumerate(transcript.rounds):
        try:
            state = submit_round(state, round)
        except (RoundViolationError, SessionError, TransferError) as exc:
            raise ReplayError(k, str(exc)) from exc
        if votes:
            state = cast_votes(state, votes.pop(0))
    if votes:
        raise ReplayError(len(transcript.rounds), "more votes than rounds")
    if transcript.terminal_actions is not None:
        if state.phase != "playing":
            raise ReplayError(len(transcript.rounds),
                              f"terminal actions recorded but phase is {state.phase!r}")
        state = play_terminal(state, transcript.terminal_actions)
        if transcript.final_payoffs is not None:
            got = state.transcript.final_payoffs
            if any(abs(a - b) > 1e-12 for a, b in zip(got, transcript.final_payoffs)):
                raise ReplayError(len(transcript.rounds),
                                  f"replayed payoffs {got} != recorded "
                                  f"{transcript.final_payoffs}")
    return state


# ---------------------------------------------------------------------------
# Transcript files (1-based indices in I/O, "BURN" for the sink).
# ---------------------------------------------------------------------------

def pledge_to_dict(p: Pledge) -> dict:
    return {
        "payer": p.payer + 1,
        "outcome": [a + 1 for a in p.outcome],
        "recipient": BURN if p.recipient == BURN else p.recipient + 1,
        "amount": float(p.amount),
    }


def pledge_from_dict(doc: dict) -> Pledge:
    recipient = doc["recipient"]
    return Pledge(
        payer=int(doc["payer"]) - 1,
        outcome=tuple(int(a) - 1 for a in doc["outcome"]),
        recipient=BURN if recipient == BURN else int(recipient) - 1,
        amount=float(doc["amount"]),
    )


def round_to_dict(round: CommitmentRound) -> list[dict]:
    return [pledge_to_dict(p) for p in round.pledges]


def round_from_dict(doc: Sequence[dict]) -> CommitmentRound:
    return CommitmentRound(tuple(pledge_from_dict(p) for p in doc))


def transcript_to_dict(state: SessionState) -> dict:
    t = state.transcript
    return {
        "schema_version": TRANSCRIPT_SCHEMA_VERSION,
        "base_game": game_to_dict(state.base_game),
        "base_game_hash": content_hash(state.base_game),
        "delta": state.delta,
        "mode": state.mode,
        "rounds": [round_to_dict(r) for r in t.rounds],
        "votes": [list(v) for v in t.votes],
        "terminal_actions": None if t.terminal_actions is None
        else [a + 1 for a in t.terminal_actions],
        "final_payoffs": None if t.final_payoffs is None else list(t.final_payoffs),
    }


def transcript_from_dict(doc: dict) -> tuple[Game, Transcript, float, str]:
    base = game_from_dict(doc["base_game"])
    transcript = Transcript(
        rounds=tuple(round_from_dict(r) for r in doc["rounds"]),
        votes=tuple(tuple(bool(v) for v in row) for row in doc["votes"]),
        terminal_actions=None if doc.get("terminal_actions") is None
        else tuple(int(a) - 1 for a in doc["terminal_actions"]),
        final_payoffs=None if doc.get("final_payoffs") is None
        else tuple(float(x) for x in doc["final_payoffs"]),
    )
    return base, transcript, float(doc["delta"]), doc.get("mode", "transfers")


def save_transcript(state: SessionState, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(transcript_to_dict(state), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_transcript(path) -> tuple[Game, Transcript, float, str]:
    with open(path, "r", encoding="utf-8") as fh:
        return transcript_from_dict(json.load(fh))
