"""Forward performance criteria with random endowment.

Thin python surface over the C++ core: long-run (ergodic) solves, the
exponential-regime backward equation, the forward optimized certainty
equivalent with its dual certificate, and full scenario runs.
"""

from ._core import (
    __version__,
    bundled_scenario,
    exponential_primal,
    forward_oce,
    run_scenario,
    solve_ergodic,
    static_oce,
)

__all__ = [
    "__version__",
    "bundled_scenario",
    "exponential_primal",
    "forward_oce",
    "run_scenario",
    "solve_ergodic",
    "static_oce",
]
