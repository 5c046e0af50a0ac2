"""Solution stability when the integrator converges, but not in variation.

The integrators A^n(t) = t + sin(2 pi n t)/(4 pi n) converge uniformly to
A(t) = t while every one of them keeps total variation distance about
1/pi ~ 0.318 from it: the perturbation never becomes small in the
bounded-variation norm. The solutions still converge, which is the point;
smallness conditions and the solution map only see the uniform scale.

With G = 1, F = 0, xi = 0 the exact solutions are Y^n(t) = A^n(T) - A^n(t),
so the measured error E sup|Y^n - Y|^2 + E int |Z^n - Z|^2 should track
sup|A^n - A|^2 = (4 pi n)^{-2}. The table shows exactly that, next to the
stubbornly flat BV column.
"""

import numpy as np

from delaybsde import (IncreasingProcessSpec, ProblemSpec, RegressionBasis,
                       oscillatory_A_family, run_stability)
from delaybsde.registry import build_G, build_terminal

base = ProblemSpec(
    T=1.0, delta=0.1,
    xi=build_terminal({"name": "constant", "params": {"value": 0.0}}),
    G=build_G({"name": "constant", "params": {"value": 1.0}}),
    A_spec=IncreasingProcessSpec("deterministic", {"shape": "identity"}),
    beta=4.0, L=1.0, L_tilde=1.0, c=1.5e-3, label="pure dA accumulation")

family = oscillatory_A_family(base, [1, 2, 4, 8, 16])
report = run_stability(family, n_paths=4000, n_steps=200, seed=31,
                       final_threshold=1e-3, basis=RegressionBasis(degree=2))
print(report)

print("\npredicted errors sup|A^n - A|^2:")
for n in [1, 2, 4, 8, 16]:
    print(f"  n={n:>3}  {(1.0 / (4 * np.pi * n)) ** 2:.3e}")
print("\nBV(A^n - A) stays near 1/pi = 0.3183 for every n: convergence"
      "\nholds without convergence in variation.")
