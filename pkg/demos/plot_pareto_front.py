"""
Manhattan against squared-Euclidean cost
========================================

Two random point clouds. Minimizing the Manhattan transport cost under a
budget t^2 on the squared-Euclidean cost traces out a trade-off front;
sharper regularization moves the front towards the unregularized one.
"""

from constrained_ot import ExperimentSpec, front_by_eta, pareto_csv, pareto_sweep

spec = ExperimentSpec(kind="pareto", n=20, eta=1000.0, seed=0, etas=(10.0, 100.0, 1000.0), n_t=5)
points = pareto_sweep(spec)

for eta, front in front_by_eta(points).items():
    row = "  ".join(f"({pt.t:.3f}, {pt.manhattan_cost:.4f})" for pt in front)
    print(f"eta={eta:6.0f}: {row}")

# the same data as the CSV written by `cot pareto`
print(pareto_csv(points).splitlines()[0])
