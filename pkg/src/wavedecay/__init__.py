"""wavedecay: a numerical laboratory for energy decay of damped semilinear waves.

Four engines, one runner:

* ``feedback``  -- parametric damping laws g and the concave auxiliary map h0
* ``envelope``  -- decay-envelope calculus: h, q, the envelope ODE, the
  discrete recursion, and a catalog of closed-form decay laws
* ``wavesim``   -- finite-difference wave solver with energy accounting
* ``raytrace``  -- bicharacteristic/geodesic rays and control entry times
* ``cli``       -- config-driven experiment runner (``wavedecay <mode> ...``)
"""

__version__ = "0.1.0"

__all__ = ["feedback", "envelope", "wavesim", "raytrace", "cli"]
