"""Verify the taped autodiff against central differences on a small composite function.

The function mixes matmul, layer norm, softmax and a log-sum-exp cross entropy,
which covers most of the primitives the model relies on.
"""

import numpy as np

from shego.numerics import F, Tensor, finite_diff_check, precision

rng = np.random.default_rng(0)
with precision(np.float64):
    x = Tensor(rng.normal(size=(4, 6)))
    w = Tensor(rng.normal(size=(6, 5)), requires_grad=True)
    g = Tensor(np.ones(5) + 0.1 * rng.normal(size=5), requires_grad=True)
    b = Tensor(0.1 * rng.normal(size=5), requires_grad=True)
    labels = np.array([0, 3, 1, 4])

    def loss():
        h = F.layer_norm(F.matmul(x, w), g, b)
        return F.mean(F.cross_entropy(h, labels))

    report = finite_diff_check(loss, {"w": w, "g": g, "b": b}, epsilon=1e-5)

for name, r in report.items():
    print(f"{name}: {r.checked} coordinates, max relative error {r.max_rel_error:.2e}, "
          f"{'ok' if r.passed else 'MISMATCH'}")
