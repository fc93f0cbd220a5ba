"""Unitary many-minds toy model and Born-rule verification toolkit."""
from .branch_state import (
    EMPTY,
    ERASED,
    READY,
    BranchLabel,
    BranchState,
    ExactAmplitude,
    LabelUnitary,
    NonUnitaryCollision,
    apply,
    aware,
    erase,
    fidelity,
    inner_product,
    measure_of,
    permute_minds,
    tensor,
)
from .frequency import SystemSpec
from .mmi_stochastic import MindTally, SeededRng
from .mmi_unitary import ConvergenceReport, ExperimentScenario, QubitGas, run_experiment

__version__ = "0.1.0"
