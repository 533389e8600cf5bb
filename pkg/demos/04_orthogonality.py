"""I and S become orthogonal as the width grows.

The normalized Frobenius norm of the product IS measures how much the two
parts of the Hessian overlap. The width sweep shows it shrinking, while the
operator norm of S decays and its Frobenius norm stays of order one.
"""

import numpy as np

from ntkhess import experiments as ex
from ntkhess.data import generate

data = generate({"source": "disk", "N": 8, "seed": 0})
setup = ex.make_setup(data, L=3, width=100)

print("width  |IS|_F/(|I|_F |S|_F)   |S|_op    |S|_F     additivity k=2")
for w in (50, 200, 800):
    res = ex.run_trials(ex.sweep_trial, setup.with_width(w), range(8), probes=8)
    m = {k: np.mean([r[k] for r in res]) for k in ("frob_IS_normalized", "op_S", "frob_S", "additivity2")}
    print(f"{w:5d}  {m['frob_IS_normalized']:.4f}                 {m['op_S']:.4f}    {m['frob_S']:.4f}    {m['additivity2']:.2e}")
