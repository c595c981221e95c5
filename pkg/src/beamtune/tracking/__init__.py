from .core import (
    DELTA,
    S,
    X,
    XP,
    Y,
    YP,
    Bunch,
    BunchGenParams,
    CompiledSegment,
    apply_kicks,
    beam_profile,
    bunch_stats,
    compile_segment,
    cull_aperture,
    generate_bunch,
    make_rng,
    track_compiled,
    track_segment,
)
from .kernels import BACKEND, available_backends
from .maps import J4, TransferMap, drift_matrix, element_map, quad_matrix, sbend_matrix, symplectic_residual

__all__ = [
    "X",
    "XP",
    "Y",
    "YP",
    "S",
    "DELTA",
    "Bunch",
    "BunchGenParams",
    "CompiledSegment",
    "TransferMap",
    "J4",
    "BACKEND",
    "available_backends",
    "apply_kicks",
    "beam_profile",
    "bunch_stats",
    "compile_segment",
    "cull_aperture",
    "drift_matrix",
    "element_map",
    "generate_bunch",
    "make_rng",
    "quad_matrix",
    "sbend_matrix",
    "symplectic_residual",
    "track_compiled",
    "track_segment",
]
