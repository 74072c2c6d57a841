from ._mvlab import (
    BsdeSolution,
    ContractionResult,
    ErgodicOptions,
    ErgodicSolution,
    UnknownPresetError,
    __version__,
    audit,
    contraction_rate,
    extract_ergodic,
    mollifier_pi1,
    mollifier_pi2,
    nominal_rate,
    preset_names,
    simulate,
    solve_bsde,
)

__all__ = [
    "BsdeSolution",
    "ContractionResult",
    "ErgodicOptions",
    "ErgodicSolution",
    "UnknownPresetError",
    "audit",
    "contraction_rate",
    "extract_ergodic",
    "mollifier_pi1",
    "mollifier_pi2",
    "nominal_rate",
    "preset_names",
    "simulate",
    "solve_bsde",
]
