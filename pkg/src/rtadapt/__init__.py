"""Regulation-triggered adaptive boundary control of a reaction-diffusion PDE."""

from .backstepping import BacksteppingDesign, DesignError, DesignParams, GainSchedule
from .identifier import Estimates, FullPlane, NormalEqs, Singleton, ThetaLine, Window, identify
from .passive import PassiveState, compare_runs, run_passive, step_passive
from .plant import (BlowUpError, ModalTrace, PlantParams, SolverConfig, SpatialGrid,
                    StateProfile, modal_project, spectral_oracle, step_fd)
from .reduced_model import ReducedModelDesign
from .supervisor import EventLog, TriggerConfig, run_adaptive, run_nominal

__all__ = [
    "BacksteppingDesign", "BlowUpError", "DesignError", "DesignParams", "Estimates", "EventLog",
    "FullPlane", "GainSchedule", "ModalTrace", "NormalEqs", "PassiveState", "PlantParams",
    "ReducedModelDesign", "Singleton", "SolverConfig", "SpatialGrid", "StateProfile",
    "ThetaLine", "TriggerConfig", "Window", "compare_runs", "identify", "modal_project",
    "run_adaptive", "run_nominal", "run_passive", "spectral_oracle", "step_fd", "step_passive",
]
