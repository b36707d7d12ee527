"""The implicit dictionary gradient agrees with finite differences.

The supervised loss depends on the dictionaries only through the sparse
code, which is the solution of an optimisation problem.  Its gradient is
obtained by differentiating the optimality conditions on the active rows;
here it is compared with central differences on a small random model.

    python demos/gradient_check.py
"""
import numpy as np

from salfuse import tddl

rng = np.random.default_rng(1)
M, n, d, p = 3, 6, 8, 6
dicts = [rng.standard_normal((n, d)) for _ in range(M)]
dicts = [Ds / np.linalg.norm(Ds, axis=0) for Ds in dicts]
model = tddl.FusionModel(dicts, [0.5 * rng.standard_normal((p, d)) for _ in range(M)],
                         np.zeros(p))
a = np.zeros((d, M))
a[[1, 5]] = rng.standard_normal((2, M))
x = [dicts[s] @ a[:, s] for s in range(M)]
y = rng.random(p)

chk = tddl.gradient_check(model, x, y, n_coords=30)
print(f"probed {chk.coords} entries")
print(f"dictionary gradient relative error {chk.dict_error:.2e}")
print(f"weight gradient relative error     {chk.weight_error:.2e}")
if chk.inconclusive:
    print("inconclusive:", chk.reason)
