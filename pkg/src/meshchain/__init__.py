"""Deterministic simulation of permissioned blockchains running on wireless mesh networks."""
from .engine import Engine
from .experiment import ExperimentConfig, compare_placements, load_config, parse_config, run_experiment
from .hlf import HlfConfig, HlfNetwork
from .placement import PlacementPlan, basp, random_placement
from .poa import PoaConfig, PoaNetwork
from .topology import MeshTopology, load_topology, qmpsu_fixture, read_topology, synth_topology
from .workload import WorkloadSpec, fire_parallel, fire_sequential

__version__ = "0.1.0"

__all__ = [
    "Engine", "ExperimentConfig", "HlfConfig", "HlfNetwork", "MeshTopology", "PlacementPlan", "PoaConfig",
    "PoaNetwork", "WorkloadSpec", "basp", "compare_placements", "fire_parallel", "fire_sequential",
    "load_config", "load_topology", "parse_config", "qmpsu_fixture", "random_placement", "read_topology",
    "run_experiment", "synth_topology",
]
