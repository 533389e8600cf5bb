"""Conditioning of the NTK and the shape of the loss surface.

Plain softplus has a nonzero mean under a Gaussian input, so deep layers
collapse inputs together and the NTK Gram becomes ill-conditioned (a narrow
valley). Standardizing the nonlinearity keeps the Gram well conditioned.
The loss is then sliced along the top two eigendirections of I.
"""

import numpy as np

from ntkhess import experiments as ex
from ntkhess.activations import make_nonlin
from ntkhess.data import generate
from ntkhess.kernels import compute_kernels
from ntkhess.spectral import sym_eig
from ntkhess.widenet import init_params, jacobian, loss_surface_slice

data = generate({"source": "disk", "N": 8, "seed": 0})
for nl in ("softplus", "normalized_softplus"):
    for L in (2, 4, 6):
        theta = compute_kernels(data.inputs, L, 0.1, make_nonlin(nl)).ntk
        print(f"{nl:20s} L={L}  cond(Theta) = {np.linalg.cond(theta):.3e}")

setup = ex.make_setup(data, L=4, width=100)
loss = setup.loss()
p = init_params(setup.arch(), 0)
J = jacobian(p, setup.X)
# top eigenvectors of I = J' J / N from the small Gram problem
e = sym_eig(J @ J.T)
v1 = J.T @ e.eigenvectors[:, 0] / np.sqrt(e.eigenvalues[0])
v2 = J.T @ e.eigenvectors[:, 1] / np.sqrt(e.eigenvalues[1])
a, b, vals = loss_surface_slice(p, setup.X, loss, v1, v2, grid=5, extent=2.0)
print("\nloss on the plane of the top two I directions (rows: a, cols: b)")
print(np.array2string(vals, precision=3))
