"""Effective conductance against the bond probability.

Two estimates come from the same samples: twice the Dirichlet energy of the
corrector problem, and the spatial average of the flux.  They agree up to
boundary effects that shrink with the cube.
"""
import warnings

import numpy as np

from perchom.homogenization import effective_conductance
from perchom.percolation import PercolationLaw

print(f"{'p':>5} {'energy':>8} {'stderr':>8} {'flux':>8}")
for p in np.linspace(0.55, 1.0, 10):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        est = effective_conductance(PercolationLaw(float(p)), 3, 8)
    print(f"{p:5.2f} {est.abar:8.4f} {est.stderr:8.4f} {est.flux_abar:8.4f}")
