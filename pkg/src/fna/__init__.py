"""Adapting a pretrained classification network to a new task by remapping its parameters
onto a searched architecture, at desk scale with a numpy autodiff engine."""

from .netgraph import ArchitectureSpec, LayerChoice, ParamStore, madds_of_arch, seed_spec
from .remap import RemapStrategy, remap_network
from .search import SearchConfig, run_search
from .supernet import SuperNet, derive_architecture, expand_seed

__version__ = "0.1.0"

__all__ = [
    "ArchitectureSpec",
    "LayerChoice",
    "ParamStore",
    "RemapStrategy",
    "SearchConfig",
    "SuperNet",
    "derive_architecture",
    "expand_seed",
    "madds_of_arch",
    "remap_network",
    "run_search",
    "seed_spec",
]
