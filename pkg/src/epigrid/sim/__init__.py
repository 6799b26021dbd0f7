"""Event-driven simulation of the individual-based model.

The hot loop has two interchangeable backends: a Cython extension
(``epigrid.sim._engine``) and a pure-Python mirror (``engine_py``).  They
draw the same uniforms and apply the same arithmetic, so a replicate is
bitwise identical under either; selection happens at import with an
optional ``EPIGRID_PURE_PY`` override.
"""
from .driver import (
    HAVE_COMPILED,
    SimResult,
    active_backend,
    infection_pressure,
    prepare_state,
    run_replicate,
)
from .state import SimState

__all__ = [
    "HAVE_COMPILED",
    "SimResult",
    "SimState",
    "active_backend",
    "infection_pressure",
    "prepare_state",
    "run_replicate",
]
