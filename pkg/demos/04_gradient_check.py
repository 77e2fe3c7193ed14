"""Hand-written backward passes checked against central differences.

For each ReLU placement, compares the analytical input gradient of an
IGCV3 block with a finite-difference estimate.
"""
import numpy as np

from igcv3 import blocks as blk
from igcv3 import linalg

rng = np.random.default_rng(0)
x = rng.normal(size=(2, 8, 5, 5))
for placement in ("AfterFirstAndMiddle", "AfterMiddle", "AfterLast", "none"):
    block = blk.build(blk.BlockSpec("IGCV3", 8, 8, expansion=2, g1=2, g2=2,
                                    relu_placement=placement), rng)
    y, cache = blk.forward(block, x, "train")
    up = rng.normal(size=y.shape)
    dx, _ = blk.backward(block, up, cache)
    num = linalg.finite_difference_jacobian(
        lambda v: np.sum(up * blk.forward(block, v.reshape(x.shape), "train")[0]), x)
    print(f"{placement:<20} relative error {linalg.rel_error(dx.ravel(), num.ravel()):.2e}")
