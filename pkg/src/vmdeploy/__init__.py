"""Discrete-event simulation of VM image deployment in an IaaS datacenter:
transfer protocols, cache-aware scheduling and pre-fetch."""

from .kernel import Engine, EventKind, rng_stream, to_us
from .model import (GB, MB, PHASES, Catalog, ComputeNode, Flavor, ImageSpec, PhaseConstants,
                    VmInstance, VmRequest, boot_phase_durations, claim_resources)
from .network import GBIT, FlowNetwork, Topology, max_min_rates
from .scenario import Scenario, ScenarioError, builtin_names
from .scheduler import SchedulerConfig, normalize, schedule, select_host, total_weight
from .simulation import RunResult, Simulation, run_scenario
from .transfer import ProtocolKind, TransferManager, TransferProtocol

__version__ = "0.1.0"
