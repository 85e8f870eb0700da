"""Desk-scale active noise mitigation simulator.

Constrained adaptive control (FxLMS and its output-power-constrained
variant), a virtual acoustic plant, acoustic metrics, and a pub/sub
control plane, driven from scenario files via the ``anmsim`` CLI.
"""

__version__ = "0.1.0"

from .kernels import NUMBA_ENABLED  # noqa: F401
