"""Residual per round of the homogenization-preconditioned scheme.

Each round runs CG on the heterogeneous problem, multigrid on the
homogenized one, then CG again.  The table shows the residual after each
round and the ratio to the previous one.
"""
import warnings

from perchom.cluster import union_find_clusters
from perchom.homogenization import effective_conductance
from perchom.lattice import CubeDomain
from perchom.percolation import PercolationLaw, sample
from perchom.scheme import IterationConfig, corrector_problem, run

law = PercolationLaw(0.6)
with warnings.catch_warnings():
    warnings.simplefilter("ignore", RuntimeWarning)
    abar = effective_conductance(law, 4, 4).abar
print(f"effective conductance from 4 samples: {abar:.4f}")

a = sample(CubeDomain(2, 4), law, seed=100)
labels = union_find_clusters(a)
f = corrector_problem(a, labels, [1.0, 0.0])
_, trace = run(IterationConfig(0.1, abar, f, rounds=8), a, labels, seed=100)

print(f"{'round':>5} {'residual':>12} {'ratio':>7} {'cg1':>5} {'mg':>4} {'cg2':>5}")
print(f"{0:>5} {trace.initial_res:12.4e}")
for k, r in enumerate(trace.rounds, 1):
    ratio = "" if r.ratio is None else f"{r.ratio:7.3f}"
    print(f"{k:>5} {r.res:12.4e} {ratio:>7} {r.cg1_iters:>5} {r.mg_cycles:>4} {r.cg2_iters:>5}")
