"""Two copies of the same model leave nothing to be robust against.

The weight search should stop at the first corner, both costs should agree
bit for bit on the shared ensemble, and the stacked gain should collapse to
the single-model LQ gain.
"""
from pathlib import Path

import numpy as np

from robustlq import ScenarioSet, assemble_blocks, generate_paths, load_scenario, solve_riccati, solve_robust

s = load_scenario(Path(__file__).parent / "scenarios" / "identical.toml").regrid(200)
ens = generate_paths(s.grid, 1, 5000, seed=1)
sol = solve_robust(s, ens)
print(f"branch {sol.branch}, lambda* = {sol.lam_star}")
print(f"y1(0) = {sol.costs[0].y0!r}")
print(f"y2(0) = {sol.costs[1].y0!r}")

single = solve_riccati(assemble_blocks(ScenarioSet((s.scenario(1),), s.x0, s.grid, s.F)))
n = s.n
diff = np.abs(sol.gain[:, :, :n] + sol.gain[:, :, n:] - single.K).max()
print(f"max |K1 + K2 - K_single| = {diff:.2e}")
