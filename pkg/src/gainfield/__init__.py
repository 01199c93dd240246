"""Distributed scaled-gradient beamforming on the MISO interference channel.

The package splits into a numerical core (linalg, utility, region,
engine), a channel/instance layer (channel), a clock-driven
message-passing simulator (schedule, simulator), reference algorithms
(baselines), and the campaign runner with its CLI (campaign, cli).
"""

from .baselines import (OracleResult, SolverError, beamformer_gains,
                        dp_best_response, max_vsinr, mrt_beamformers,
                        oracle_best_utility, polish_beamformers)
from .campaign import (AuditReport, CampaignSummary, ExperimentConfig,
                       SpeedupReport, final_point_audit, parse_algorithm,
                       resolve_seeds, run_campaign, speedup_comparison)
from .channel import (ChannelSet, CouplingProfile, generate_instance,
                      local_view, read_instance, write_instance)
from .engine import extract_beamformer, sgp_step
from .region import (RegionHandle, power_gain, scaled_projection,
                     stationarity_residual, support_function)
from .schedule import Schedule, Topology, build_schedule
from .simulator import (SimOptions, SimTrace, convergence_cycle, is_stable,
                        run_simulation, stability_cycle)
from .utility import UtilityParams, pf_utility_bits, rates, utility_gradient

__version__ = "0.1.0"

__all__ = [
    "AuditReport",
    "CampaignSummary",
    "ChannelSet",
    "CouplingProfile",
    "ExperimentConfig",
    "OracleResult",
    "RegionHandle",
    "Schedule",
    "SimOptions",
    "SimTrace",
    "SolverError",
    "SpeedupReport",
    "Topology",
    "UtilityParams",
    "beamformer_gains",
    "build_schedule",
    "convergence_cycle",
    "dp_best_response",
    "extract_beamformer",
    "final_point_audit",
    "generate_instance",
    "is_stable",
    "local_view",
    "max_vsinr",
    "mrt_beamformers",
    "oracle_best_utility",
    "parse_algorithm",
    "pf_utility_bits",
    "polish_beamformers",
    "power_gain",
    "rates",
    "read_instance",
    "resolve_seeds",
    "run_campaign",
    "run_simulation",
    "scaled_projection",
    "sgp_step",
    "speedup_comparison",
    "stability_cycle",
    "stationarity_residual",
    "support_function",
    "utility_gradient",
    "write_instance",
]
