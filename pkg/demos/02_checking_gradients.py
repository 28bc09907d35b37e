"""
Checking the gradients
======================

The backward pass is written by hand, so we compare it against central
finite differences, then check the Monte-Carlo estimator against the exact
expectation over every graph on three nodes.
"""
import numpy as np

from agfn.gcn import gcn_backward, gcn_forward
from agfn.model import init_params, one_hot
from agfn.oracle import finite_difference
from agfn.validation import compare_to_oracle, run_gradcheck_suite

rng = np.random.default_rng(1)
x = rng.standard_normal((4, 3))
w = rng.standard_normal((3, 2))
a = np.array([[0, 1, 0, 1], [1, 0, 1, 0], [0, 1, 0, 1], [1, 0, 1, 0]], dtype=float)
g = rng.standard_normal((4, 2))

# %%
# A scalar probe ``sum(G * X_hat)`` has gradient ``G`` pushed back through the
# layer, which is exactly what ``gcn_backward`` returns.
grad_w, grad_x, _ = gcn_backward(x, w, a, g)
num_w = finite_difference(lambda v: np.sum(g * gcn_forward(x, v.reshape(w.shape), a)), w.ravel())
print("max |analytic - numeric| for W:", np.abs(grad_w.ravel() - num_w).max())

# %%
# The same check over a hundred random small networks, block by block.
report = run_gradcheck_suite(instances=100)
for name, err in report.max_error.items():
    print(f"{name:<24s} {err:.1e}")

# %%
# Sampled graphs make the weight gradient random. Its average over S draws
# should approach the enumerated expectation, with error falling like
# S ** -0.5.
x = rng.standard_normal((3, 6))
y = one_hot([0, 1, 2], 3)
params = init_params(6, 3, seed=0)
cmp = compare_to_oracle(x, y, params, sample_sizes=(100, 1000, 10000))
for s, err in zip(cmp.sample_sizes, cmp.global_errors):
    print(f"S={s:>6d}  relative error {err:.4f}")
print(f"fitted slope {cmp.slope:+.2f}")
