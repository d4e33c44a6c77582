"""Linear and nonlinear numerics for the relaxed Euler-Maxwell system.

Modules:

- :mod:`.roots` characteristic cubic of the transverse fields
- :mod:`.propagator` closed-form Fourier-mode propagator
- :mod:`.oracle` high-accuracy integrator used as a reference
- :mod:`.lyapunov` frequency-space Lyapunov functional and fitted bounds
- :mod:`.decay` large-time decay measurements
- :mod:`.nonlinear` pseudo-spectral solver on a periodic box
- :mod:`.cli` configuration-driven experiments
"""

__version__ = "0.1.0"

from .propagator import SpectralState, propagate, propagate_arrays  # noqa: E402
from .roots import CharTriple, solve_characteristic  # noqa: E402

__all__ = ["CharTriple", "SpectralState", "propagate", "propagate_arrays",
           "solve_characteristic", "__version__"]
