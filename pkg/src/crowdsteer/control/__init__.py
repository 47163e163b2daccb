"""Control primitives and their concatenation into full-transfer schedules."""
from .confinement import (
    ConfinementField,
    EtaBarrier,
    admissible_gain,
    boundary_gain,
    confinement_field,
    product_sine_barrier,
)
from .schedule import ControlSchedule, Phase, simulate, simulate_measure
from .storage import StorageField, StorageParams, check_reparametrization, storage_field
from .synthesis import entry_times, synthesize_full_transfer
from .transport import (
    CellTransportField,
    CellTransportPlan,
    ReleaseWindowField,
    build_plan,
    cell_transport_field,
    residual_mass,
    transfer_inside_omega,
)

__all__ = [
    "ConfinementField",
    "EtaBarrier",
    "admissible_gain",
    "boundary_gain",
    "confinement_field",
    "product_sine_barrier",
    "ControlSchedule",
    "Phase",
    "simulate",
    "simulate_measure",
    "StorageField",
    "StorageParams",
    "check_reparametrization",
    "storage_field",
    "entry_times",
    "synthesize_full_transfer",
    "CellTransportField",
    "CellTransportPlan",
    "ReleaseWindowField",
    "build_plan",
    "cell_transport_field",
    "residual_mass",
    "transfer_inside_omega",
]
