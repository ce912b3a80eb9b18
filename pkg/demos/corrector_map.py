"""Heat map of the localized corrector in direction e_1.

The corrector vanishes off the maximal cluster and on the boundary; on the
cluster it bends the affine function x_1 around the closed edges.
"""
import os
import sys

import numpy as np

from perchom.cluster import union_find_clusters
from perchom.homogenization import localized_corrector
from perchom.lattice import CubeDomain
from perchom.percolation import PercolationLaw, sample
from perchom.render import field_image, write_pgm

out_dir = sys.argv[1] if len(sys.argv) > 1 else "."
os.makedirs(out_dir, exist_ok=True)

a = sample(CubeDomain(2, 4), PercolationLaw(0.7), seed=0)
labels = union_find_clusters(a)
phi = localized_corrector(a, labels, [1.0, 0.0])
mask = labels.maximal_mask()
print(f"corrector range on the cluster [{phi[mask].min():.3f}, {phi[mask].max():.3f}]")
print(f"sublinear check: max|phi| / side = {np.abs(phi).max() / a.domain.side:.4f}")

path = os.path.join(out_dir, "corrector.pgm")
write_pgm(path, field_image(phi, mask))
print(f"wrote {path}")
