"""Equilibrium machinery: Nash checks, support-constrained solving, and
the normalization/indifference system that characterizes equilibria with a
fixed support.

For a support choice M_1..M_n the characteristic system stacks, per
player, one normalization row (probabilities sum to 1) and M_i - 1
indifference rows (the first listed support action ties every other
one).  Out-of-support actions contribute residual rows (first support
action weakly preferred).  An equilibrium with that support is a root of
the system whose residuals are nonnegative; it is non-degenerate when the
system's Jacobian is nonsingular at the point and every residual is
strictly positive.  Non-degenerate equilibria survive small utility
perturbations with the same support, which is what the punishability
probe samples for.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .games import (
    DEFAULT_TOL,
    Game,
    MixedProfile,
    content_hash,
    deviation_payoffs,
    expected_utility,
    game_to_dict,
)

NEWTON_MAX_ITER = 200
NEWTON_TOL = 1e-12
DET_TOL = 1e-8


class SupportError(ValueError):
    """Empty or out-of-range support lists."""


class NotNashError(ValueError):
    """An operation required a Nash equilibrium input."""


class DegenerateEquilibriumError(ValueError):
    """An operation required a non-degenerate equilibrium input."""


def worker_count() -> int:
    """Parallelism cap from COMMITMENT_GAMES_THREADS (default 1)."""
    try:
        return max(1, int(os.environ.get("COMMITMENT_GAMES_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class NashCheck:
    ok: bool
    player: int | None = None
    action: int | None = None
    gain: float = 0.0

    def __bool__(self) -> bool:
        return self.ok


def is_nash(game: Game, profile: MixedProfile, tol: float = DEFAULT_TOL) -> NashCheck:
    """Best-response check; on failure carries a violating (player, action, gain)."""
    worst = NashCheck(True)
    for i in range(game.num_players):
        payoffs = deviation_payoffs(game, profile, i)
        current = float(payoffs @ profile.probs[i])
        a = int(np.argmax(payoffs))
        gain = float(payoffs[a]) - current
        if gain > tol and gain > worst.gain:
            worst = NashCheck(False, i, a, gain)
    return worst


def enumerate_pure_nash(game: Game, tol: float = DEFAULT_TOL) -> list[tuple[int, ...]]:
    """All pure Nash profiles, lexicographically sorted (exhaustive scan)."""
    out = []
    u = game.utilities
    for prof in game.pure_profiles():
        ok = True
        for i in range(game.num_players):
            idx = (i, *prof[:i], slice(None), *prof[i + 1:])
            if float(u[(i, *prof)]) + tol < float(u[idx].max()):
                ok = False
                break
        if ok:
            out.append(tuple(int(a) for a in prof))
    return out


@dataclass(frozen=True)
class Component:
    """One row of the characteristic system.

    Normalization rows have kind "norm" and no coefficients.  Indifference
    rows compare the reference (first listed) support action of `player`
    against `action`; `coeffs` is the payoff-difference tensor over the
    other players' listed support actions, axes in player order, entries
    in the lexicographic order of the listed supports.
    """

    kind: str  # "norm" | "indiff"
    player: int
    action: int | None = None
    coeffs: np.ndarray | None = None


def _difference_tensor(game: Game, supports: Sequence[Sequence[int]],
                       player: int, ref: int, other: int) -> np.ndarray:
    """Tensor of u_i(ref, b) - u_i(other, b) over listed support profiles b."""
    u = game.utilities[player]
    diff = np.take(u, ref, axis=player) - np.take(u, other, axis=player)
    sel = [list(supports[j]) for j in range(game.num_players) if j != player]
    return diff[np.ix_(*sel)]


def _contract(coeffs: np.ndarray, probs: Sequence[np.ndarray], skip: int) -> float:
    t = coeffs
    order = [j for j in range(len(probs)) if j != skip]
    for j in reversed(range(len(order))):
        t = t @ probs[order[j]]
    return float(t)


def _contract_grad(coeffs: np.ndarray, probs: Sequence[np.ndarray],
                   skip: int, wrt: int) -> np.ndarray:
    """Gradient of the contraction with respect to player `wrt`'s block."""
    order = [j for j in range(len(probs)) if j != skip]
    axis = order.index(wrt)
    t = np.moveaxis(coeffs, axis, 0)
    rest = [order[j] for j in range(len(order)) if j != axis]
    for j in reversed(range(len(rest))):
        t = t @ probs[rest[j]]
    return t


@dataclass(frozen=True)
class CharacteristicSystem:
    """Characteristic and residual system for one support choice."""

    game: Game
    supports: tuple[tuple[int, ...], ...]
    components: tuple[Component, ...]
    residual_rows: tuple[Component, ...]

    @property
    def num_vars(self) -> int:
        return sum(len(s) for s in self.supports)

    @property
    def offsets(self) -> tuple[int, ...]:
        out, acc = [], 0
        for s in self.supports:
            out.append(acc)
            acc += len(s)
        return tuple(out)

    @property
    def rhs(self) -> np.ndarray:
        return np.array([1.0 if c.kind == "norm" else 0.0 for c in self.components])

    def split(self, x: np.ndarray) -> list[np.ndarray]:
        out, acc = [], 0
        for s in self.supports:
            out.append(x[acc:acc + len(s)])
            acc += len(s)
        return out

    def profile_vector(self, profile: MixedProfile) -> np.ndarray:
        return np.concatenate([profile.probs[i][list(s)]
                               for i, s in enumerate(self.supports)])

    def profile_from_vector(self, x: np.ndarray) -> MixedProfile:
        vecs = []
        for i, (s, block) in enumerate(zip(self.supports, self.split(x))):
            v = np.zeros(self.game.action_counts[i])
            v[list(s)] = block
            vecs.append(v)
        return MixedProfile(vecs, tol=1e-6)

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        probs = self.split(x)
        vals = []
        for c in self.components:
            if c.kind == "norm":
                vals.append(float(probs[c.player].sum()))
            else:
                vals.append(_contract(c.coeffs, probs, c.player))
        return np.array(vals)

    def residuals(self, x: np.ndarray) -> np.ndarray:
        probs = self.split(x)
        return np.array([_contract(c.coeffs, probs, c.player)
                         for c in self.residual_rows])

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        probs = self.split(x)
        offs = self.offsets
        J = np.zeros((len(self.components), self.num_vars))
        for r, c in enumerate(self.components):
            if c.kind == "norm":
                i = c.player
                J[r, offs[i]:offs[i] + len(self.supports[i])] = 1.0
            else:
                for j in range(len(self.supports)):
                    if j == c.player:
                        continue
                    g = _contract_grad(c.coeffs, probs, c.player, j)
                    J[r, offs[j]:offs[j] + len(self.supports[j])] = g
        return J

    # Two-player block structure: X1 stacks a ones row over player 1's
    # indifference coefficient rows (columns indexed by player 2's listed
    # support); X2 likewise for player 2 over player 1's support.
    def block_matrix(self, player: int) -> np.ndarray:
        if self.game.num_players != 2:
            raise SupportError("block matrices are defined for two players")
        other = 1 - player
        rows = [np.ones(len(self.supports[other]))]
        for c in self.components:
            if c.kind == "indiff" and c.player == player:
                rows.append(c.coeffs)
        return np.vstack(rows)

    @property
    def x1(self) -> np.ndarray:
        return self.block_matrix(0)

    @property
    def x2(self) -> np.ndarray:
        return self.block_matrix(1)

    def linear_system(self) -> tuple[np.ndarray, np.ndarray]:
        """Two-player system with rows [norm_1; other-player indifference;
        norm_2; first-player indifference] over variables (p_1, p_2)."""
        if self.game.num_players != 2:
            raise SupportError("linear_system is defined for two players")
        m1, m2 = len(self.supports[0]), len(self.supports[1])
        x1, x2 = self.x1, self.x2
        A = np.zeros((m1 + m2, m1 + m2))
        A[:x2.shape[0], :m1] = x2
        A[x2.shape[0]:, m1:] = x1
        b = np.zeros(m1 + m2)
        b[0] = 1.0
        b[x2.shape[0]] = 1.0
        return A, b


def build_characteristic_system(game: Game,
                                supports: Sequence[Sequence[int]]) -> CharacteristicSystem:
    """Build the system for ordered support lists.

    The first listed action of each player is the reference action for
    that player's indifference and residual rows.
    """
    n = game.num_players
    if len(supports) != n:
        raise SupportError("one support list per player required")
    supp = []
    for i, s in enumerate(supports):
        s = tuple(int(a) for a in s)
        if not s:
            raise SupportError(f"player {i}: empty support")
        if len(set(s)) != len(s) or any(not 0 <= a < game.action_counts[i] for a in s):
            raise SupportError(f"player {i}: bad support {s}")
        supp.append(s)
    supp = tuple(supp)
    components = [Component("norm", i) for i in range(n)]
    for i in range(n):
        ref = supp[i][0]
        for a in supp[i][1:]:
            components.append(Component("indiff", i, a,
                                        _difference_tensor(game, supp, i, ref, a)))
    residual_rows = []
    for i in range(n):
        ref = supp[i][0]
        for a in range(game.action_counts[i]):
            if a not in supp[i]:
                residual_rows.append(Component("indiff", i, a,
                                               _difference_tensor(game, supp, i, ref, a)))
    return CharacteristicSystem(game, supp, tuple(components), tuple(residual_rows))


@dataclass(frozen=True)
class SupportSolve:
    """Outcome of a support-constrained solve."""

    profile: MixedProfile | None
    status: str  # "ok" | "degenerate" | "no_converge" | "out_of_range" | "residual_negative"
    f_norm: float = float("nan")
    min_residual: float = float("nan")

    def __bool__(self) -> bool:
        return self.profile is not None


def solve_on_support(game: Game, supports: Sequence[Sequence[int]],
                     seed: MixedProfile | None = None, *,
                     tol: float = 1e-10,
                     residual_tol: float = DEFAULT_TOL) -> SupportSolve:
    """Find a profile solving the characteristic system on the support.

    Two players: direct linear solve.  Three or more: damped Newton from
    `seed` (required).  The result must have support probabilities in
    (0, 1], satisfy the system to `tol`, and have residuals >= -residual_tol.
    """
    system = build_characteristic_system(game, supports)
    if game.num_players == 2:
        A, b = system.linear_system()
        try:
            x = np.linalg.solve(A, b)
        except np.linalg.LinAlgError:
            return SupportSolve(None, "degenerate")
        if not np.all(np.isfinite(x)):
            return SupportSolve(None, "degenerate")
    else:
        if seed is None:
            raise SupportError("a seed profile is required for three or more players")
        x = system.profile_vector(seed)
        rhs = system.rhs
        f = system.evaluate(x) - rhs
        converged = False
        for _ in range(NEWTON_MAX_ITER):
            norm = float(np.linalg.norm(f, ord=np.inf))
            if norm <= NEWTON_TOL:
                converged = True
                break
            try:
                step = np.linalg.solve(system.jacobian(x), -f)
            except np.linalg.LinAlgError:
                return SupportSolve(None, "degenerate", f_norm=norm)
            alpha = 1.0
            improved = False
            for _ in range(40):
                xn = x + alpha * step
                fn = system.evaluate(xn) - rhs
                if float(np.linalg.norm(fn, ord=np.inf)) < norm:
                    x, f = xn, fn
                    improved = True
                    break
                alpha *= 0.5
            if not improved:
                return SupportSolve(None, "no_converge", f_norm=norm)
        if not converged:
            norm = float(np.linalg.norm(f, ord=np.inf))
            if norm > NEWTON_TOL:
                return SupportSolve(None, "no_converge", f_norm=norm)

    f_norm = float(np.linalg.norm(system.evaluate(x) - system.rhs, ord=np.inf))
    if f_norm > tol:
        return SupportSolve(None, "no_converge", f_norm=f_norm)
    if np.any(x <= 1e-9) or np.any(x > 1 + 1e-9):
        return SupportSolve(None, "out_of_range", f_norm=f_norm)
    res = system.residuals(x)
    min_res = float(res.min()) if res.size else float("inf")
    if res.size and min_res < -residual_tol:
        return SupportSolve(None, "residual_negative", f_norm=f_norm, min_residual=min_res)
    return SupportSolve(system.profile_from_vector(np.clip(x, 0.0, 1.0)), "ok",
                        f_norm=f_norm, min_residual=min_res)


@dataclass(frozen=True)
class NonDegeneracyReport:
    ok: bool
    det: float
    det_threshold: float
    min_residual: float

    def __bool__(self) -> bool:
        return self.ok


def is_non_degenerate(game: Game, profile: MixedProfile, *,
                      det_tol: float = DET_TOL,
                      nash_tol: float = 1e-8) -> NonDegeneracyReport:
    """Nonsingular Jacobian at the profile and strictly positive residuals.

    Raises NotNashError when the profile is not a Nash equilibrium.
    """
    check = is_nash(game, profile, nash_tol)
    if not check.ok:
        raise NotNashError(
            f"profile is not Nash: player {check.player} gains {check.gain:.3g} "
            f"by action {check.action}")
    system = build_characteristic_system(game, profile.supports())
    x = system.profile_vector(profile)
    J = system.jacobian(x)
    det = float(np.linalg.det(J))
    scale = float(np.max(np.abs(J)))
    threshold = det_tol * (scale ** J.shape[0] if scale > 0 else 1.0)
    res = system.residuals(x)
    min_res = float(res.min()) if res.size else float("inf")
    return NonDegeneracyReport(abs(det) > threshold and min_res > 0.0,
                               det, threshold, min_res)


@dataclass(frozen=True)
class PunishmentResult:
    profile: MixedProfile | None
    kind: str  # "support_solve" | "seed" | "pure" | "support_enum" | "semi_mixed" | "none"
    reason: str = ""

    def __bool__(self) -> bool:
        return self.profile is not None


# Support patterns per player for the two-player enumeration fallback,
# ascending size then lexicographic; capped at desk scale.
_SUPPORT_ENUM_MAX_ACTIONS = 4


def _support_enumeration(game: Game, accept) -> MixedProfile | None:
    if game.num_players != 2 or max(game.action_counts) > _SUPPORT_ENUM_MAX_ACTIONS:
        return None
    from itertools import combinations

    patterns = []
    for c in game.action_counts:
        opts = []
        for size in range(1, c + 1):
            opts.extend(combinations(range(c), size))
        patterns.append(opts)
    for s1 in patterns[0]:
        for s2 in patterns[1]:
            res = solve_on_support(game, (s1, s2))
            if res.profile is None:
                continue
            if not is_nash(game, res.profile, 1e-8).ok:
                continue
            if accept(res.profile):
                return res.profile
    return None


def _boundary_semi_mixed(game: Game, accept, tol: float) -> MixedProfile | None:
    """2x2 continuum equilibria: one player pure, the other indifferent.

    The gap-closing protocols drive preference gaps to exact zeros, where
    the support-constrained systems go singular; the equilibria form a
    segment and any feasible point on it punishes.
    """
    if game.num_players != 2 or game.action_counts != (2, 2):
        return None
    u = game.utilities
    for pure_player in (0, 1):
        mixer = 1 - pure_player
        for b in (0, 1):
            def at(pp_action, mix_action):
                prof = [0, 0]
                prof[pure_player] = pp_action
                prof[mixer] = mix_action
                return tuple(prof)

            if abs(u[(mixer, *at(b, 0))] - u[(mixer, *at(b, 1))]) > tol:
                continue  # the mixer is not indifferent against b
            # b must be a weak best response to the mix q over the mixer's
            # first action: g(q) = alpha*q + beta*(1-q) >= -tol
            alpha = u[(pure_player, *at(b, 0))] - u[(pure_player, *at(1 - b, 0))]
            beta = u[(pure_player, *at(b, 1))] - u[(pure_player, *at(1 - b, 1))]
            candidates = [0.0, 1.0]
            if abs(alpha - beta) > 1e-15:
                root = -beta / (alpha - beta)
                if 0.0 < root < 1.0:
                    candidates.append(root)
            for q in sorted(candidates):
                if alpha * q + beta * (1.0 - q) < -tol:
                    continue
                vecs = [None, None]
                pure_vec = np.zeros(2)
                pure_vec[b] = 1.0
                vecs[pure_player] = pure_vec
                vecs[mixer] = np.array([q, 1.0 - q])
                profile = MixedProfile(vecs)
                if is_nash(game, profile, 1e-8).ok and accept(profile):
                    return profile
    return None


def find_punishment_equilibrium(game: Game, reference_support: Sequence[Sequence[int]],
                                seed: MixedProfile | None,
                                ceiling: Sequence[float], *,
                                tol: float = DEFAULT_TOL) -> PunishmentResult:
    """Same-support equilibrium whose payoffs stay under the ceiling.

    Tries the support-constrained solve first; if the solve fails or
    overshoots the ceiling, falls back to the seed itself (when it is
    still an equilibrium) and then to pure equilibria in lexicographic
    order.  Returns a result with profile None when nothing qualifies.
    """
    ceiling = np.asarray(ceiling, dtype=np.float64)

    def under_ceiling(profile: MixedProfile) -> bool:
        u = np.array([expected_utility(game, profile, i)
                      for i in range(game.num_players)])
        return bool(np.all(u <= ceiling + tol))

    reasons = []
    solve = solve_on_support(game, reference_support, seed)
    if solve.profile is not None:
        if is_nash(game, solve.profile, 1e-8).ok:
            if under_ceiling(solve.profile):
                return PunishmentResult(solve.profile, "support_solve")
            reasons.append("support solve exceeds ceiling")
        else:
            reasons.append("support solve is not Nash (residuals violated)")
    else:
        reasons.append(f"support solve failed: {solve.status}")

    if seed is not None and is_nash(game, seed, 1e-8).ok and under_ceiling(seed):
        return PunishmentResult(seed, "seed")

    for prof in enumerate_pure_nash(game):
        pure = MixedProfile.pure(game.action_counts, prof)
        if under_ceiling(pure):
            return PunishmentResult(pure, "pure")
    reasons.append("no pure equilibrium under ceiling")

    enum = _support_enumeration(game, under_ceiling)
    if enum is not None:
        return PunishmentResult(enum, "support_enum")
    boundary = _boundary_semi_mixed(game, under_ceiling, tol)
    if boundary is not None:
        return PunishmentResult(boundary, "semi_mixed")
    return PunishmentResult(None, "none", "; ".join(reasons))


@dataclass(frozen=True)
class ProbeFailure:
    sample: int
    perturbed_game: Game
    reason: str


@dataclass(frozen=True)
class PunishabilityReport:
    """Evidence from sampling the perturbation ball; falsification only."""

    epsilon: float
    delta: float
    samples: int
    rng_seed: int
    failures: tuple[ProbeFailure, ...]
    worst_excess: float
    base_hash: str = ""

    @property
    def ok(self) -> bool:
        return not self.failures

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "delta": self.delta,
            "samples": self.samples,
            "rng_seed": self.rng_seed,
            "worst_excess": self.worst_excess if np.isfinite(self.worst_excess) else None,
            "failures": [
                {"sample": f.sample, "reason": f.reason,
                 "perturbed_game": game_to_dict(f.perturbed_game)}
                for f in self.failures
            ],
            "base_game_hash": self.base_hash,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def probe_strong_punishability(game: Game, profile: MixedProfile,
                               epsilon: float, delta: float, samples: int,
                               rng_seed: int, *,
                               perturbations: Sequence[np.ndarray] | None = None,
                               allow_degenerate: bool = False) -> PunishabilityReport:
    """Sample perturbed games within distance delta and hunt for punishment
    equilibria with the baseline support and ceiling u(profile) + epsilon.

    With `perturbations` given, those exact utility shifts are probed
    instead of uniform draws (the adversarial negative control).  The
    quantifier in the underlying definition ranges over all perturbations;
    sampling can only falsify, never certify.
    """
    if not allow_degenerate:
        report = is_non_degenerate(game, profile)
        if not report.ok:
            raise DegenerateEquilibriumError(
                f"baseline profile is degenerate (det={report.det:.3g}, "
                f"min residual={report.min_residual:.3g})")
    base_u = np.array([expected_utility(game, profile, i)
                       for i in range(game.num_players)])
    ceiling = base_u + epsilon
    support = profile.supports()

    if perturbations is not None:
        deltas = [np.asarray(p, dtype=np.float64) for p in perturbations]
        if any(d.shape != game.utilities.shape for d in deltas):
            raise ValueError("perturbation tensors must match the utility tensor shape")
        count = len(deltas)
    else:
        rng = np.random.default_rng(rng_seed)
        count = samples
        deltas = [rng.uniform(-delta, delta, size=game.utilities.shape)
                  for _ in range(count)]

    def run(idx: int):
        pert = game.with_utilities(game.utilities + deltas[idx])
        result = find_punishment_equilibrium(pert, support, profile, ceiling)
        if result.profile is None:
            return idx, pert, result.reason, None
        u = np.array([expected_utility(pert, result.profile, i)
                      for i in range(game.num_players)])
        return idx, pert, None, float(np.max(u - base_u))

    threads = worker_count()
    if threads > 1 and count > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, range(count)))
    else:
        results = [run(i) for i in range(count)]

    failures = []
    worst = -np.inf
    for idx, pert, reason, excess in results:
        if reason is not None:
            failures.append(ProbeFailure(idx, pert, reason))
        else:
            worst = max(worst, excess)
    return PunishabilityReport(epsilon, delta, count, rng_seed,
                               tuple(failures), worst, content_hash(game))
