"""Draw a supercritical bond configuration and its maximal cluster.

Run with ``python3 demos/cluster_picture.py [out_dir]``.  Writes a PPM with
the maximal cluster highlighted and prints a few cluster statistics.
"""
import os
import sys

from perchom.cluster import build_partition, union_find_clusters
from perchom.lattice import CubeDomain
from perchom.percolation import PercolationLaw, sample
from perchom.render import labels_image, write_ppm

out_dir = sys.argv[1] if len(sys.argv) > 1 else "."
os.makedirs(out_dir, exist_ok=True)

a = sample(CubeDomain(2, 4), PercolationLaw(0.6), seed=3)
labels = union_find_clusters(a)
print(f"side {a.domain.side}, open edges {int((a.values > 0).sum())}")
print(f"maximal cluster: {labels.maximal_size} vertices, crossing {labels.is_crossing}")

# In the plane the partition is all or nothing: either every vertex sits in
# a unit cube or the top cube is bad.
part = build_partition(a, labels)
print(f"partition levels {sorted(set(part.levels.ravel().tolist()))}, flags {part.flags}")

path = os.path.join(out_dir, "cluster.ppm")
write_ppm(path, labels_image(labels))
print(f"wrote {path}")
