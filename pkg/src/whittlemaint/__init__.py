"""Index policies for maintaining a fleet of deteriorating machines with few repairmen."""

from .index import IndexTable, Variant, w_index, w_index_failures, w_index_perfect, w_index_pure
from .model import FleetSpec, MachineParams, MachineSpec, Mode, SpecError, TopState, build_machine, validate
from .policy import Policy, PolicyKind, decide, enumerate_thresholds

__all__ = [
    "FleetSpec", "IndexTable", "MachineParams", "MachineSpec", "Mode", "Policy", "PolicyKind",
    "SpecError", "TopState", "Variant", "build_machine", "decide", "enumerate_thresholds",
    "validate", "w_index", "w_index_failures", "w_index_perfect", "w_index_pure",
]
__version__ = "0.1.0"
