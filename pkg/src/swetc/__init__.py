"""Switching event-triggered sampled-data control: LMI synthesis, simulation
and certificate analysis for linear networked control systems."""

from .plant import (
    PerturbedPlant, SimplePlant, Gain, Periodic, ContinuousET, PeriodicET,
    SwitchingET, DelayModel, Disturbance, DimensionError, load_plant,
    load_config, closed_loop_hurwitz,
)
from .lmi import (
    MatrixVar, Affine, LMIConstraint, FeasibilityResult, assemble,
    solve_feasibility, check_witness, bmat,
)

__version__ = "0.1.0"
