"""Multi-task prediction of commuting trip times and their disaggregation onto census flows."""

from .domain import N_SLOTS, TASK_NAMES, Mode, Purpose, TimeSlot, TripRecord, CensusRecord
from .runtime import derive_seed

__all__ = ["N_SLOTS", "TASK_NAMES", "Mode", "Purpose", "TimeSlot", "TripRecord", "CensusRecord", "derive_seed"]
__version__ = "0.1.0"
