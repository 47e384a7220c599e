"""Meta-learning Hamiltonian neural networks from phase-space observations."""

__version__ = "0.1.0"

from ._backend import get_backend, set_backend

__all__ = ["get_backend", "set_backend", "__version__"]
