"""Decentralised federated learning with clustered weight exchange and centroid alignment for late joiners."""
from .config import RunConfig, SimConfig
from .protocol import run_simulation

__version__ = "0.1.0"
__all__ = ["RunConfig", "SimConfig", "run_simulation", "__version__"]
