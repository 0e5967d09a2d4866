from .bitlevel import BitLevelResult, bitlevel_slot_delivery, brute_force_man_slot, delivery_plan, format_packet
from .process import (
    SimConfig,
    SimResult,
    SimState,
    UserSession,
    batch_means,
    simulate,
    simulate_average_rate,
    simulate_replications,
    step,
    substream,
    summary_csv,
    sync_schedule,
    trace_csv,
)
