"""Dynamic control allocation with anti-windup, designed by LMIs.

Modules: ``model`` (closed-loop assembly), ``sdp`` (LMI layer over conic
solvers), ``synthesis`` (design problems and gain recovery), ``sim``
(saturated closed-loop simulation), ``verify`` (independent certificate and
trajectory checks), ``config`` (JSON problem files), ``satellite`` (the
two-satellite benchmark) and ``cli``.
"""
from .model import (AllocatorWeights, ClosedLoop, ControllerModel, DisturbanceClass,
                    InfluenceModel, ModelError, PlantModel, assemble_closed_loop)
from .results import SynthesisResult
from .sim import DisturbanceSignal, SaturationSpec, Trajectory, simulate, static_baseline

_SYNTHESIS_NAMES = ("InfeasibleError", "SingularRecoveryError", "SynthesisError",
                    "SynthesisOptions", "synthesize")


def __getattr__(name):
    # loaded on demand so that model/sim/verify work without the synthesis layer
    if name in _SYNTHESIS_NAMES:
        from . import synthesis
        return getattr(synthesis, name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")

__version__ = "0.1.0"

__all__ = [
    "AllocatorWeights", "ClosedLoop", "ControllerModel", "DisturbanceClass", "InfluenceModel",
    "ModelError", "PlantModel", "assemble_closed_loop", "SynthesisResult", "DisturbanceSignal",
    "SaturationSpec", "Trajectory", "simulate", "static_baseline", "InfeasibleError",
    "SingularRecoveryError", "SynthesisError", "SynthesisOptions", "synthesize",
]
