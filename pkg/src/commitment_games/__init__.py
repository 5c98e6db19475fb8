"""Staged side-payment commitment games over finite normal-form games."""

from .games import (
    BURN,
    Game,
    GameShapeError,
    MixedProfile,
    OutcomeTarget,
    ProfileError,
    TransferError,
    apply_transfers,
    content_hash,
    deviation_payoffs,
    expected_utility,
    game_distance,
    game_from_dict,
    game_to_dict,
    load_game,
    pareto_improves,
    save_game,
    social_welfare,
    welfare_max,
)
from .equilibria import (
    CharacteristicSystem,
    DegenerateEquilibriumError,
    NotNashError,
    PunishabilityReport,
    build_characteristic_system,
    enumerate_pure_nash,
    find_punishment_equilibrium,
    is_nash,
    is_non_degenerate,
    probe_strong_punishability,
    solve_on_support,
)
from .engine import (
    CommitmentRound,
    Pledge,
    ReplayError,
    RoundViolationError,
    SessionError,
    SessionState,
    Transcript,
    cast_votes,
    load_transcript,
    open_session,
    play_terminal,
    replay,
    save_transcript,
    submit_round,
    validate_round,
)
from .protocols import (
    InfeasibleError,
    NotImprovingError,
    PathSegment,
    ProtocolPlan,
    PunishmentStage,
    build_2x2_plan,
    build_multiplayer_plan,
    build_partial_support_plan,
    build_plan,
    build_two_player_full_support_plan,
    build_welfare_transfer_stage,
    choose_delta,
    classify_case,
    fold_plan,
    load_plan,
    plan_from_dict,
    plan_to_dict,
    alternating_shift_array,
    save_plan,
    welfare_path_segment,
)
from .verifier import (
    StrategyBundle,
    VerificationReport,
    check_deviations,
    check_on_path,
    round_bound_check,
    verify_plan,
)

__version__ = "0.1.0"
