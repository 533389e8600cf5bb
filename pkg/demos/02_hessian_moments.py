"""Moments of the loss Hessian H = I + S at initialization.

For a small network the Hessian is assembled densely, so the exact traces
of I, S and H can be compared with the infinite-width predictions.
"""

import numpy as np

from ntkhess import experiments as ex
from ntkhess.data import generate
from ntkhess.theory import expected_S_moments_mse, predict_trI
from ntkhess.widenet import assemble, empirical_moments, init_params

data = generate({"source": "disk", "N": 8, "seed": 0})
setup = ex.make_setup(data, L=3, width=200)
g, loss = setup.grams, setup.loss()
ys = loss.labels.reshape(-1)

trI = predict_trI(loss, g.theta, ys, 4)
e1, e2 = expected_S_moments_mse(g.theta, g.lam, g.upsilon, g.sigma, g.phi, ys, 0.0, setup.N)
print("theory   Tr I^k:", np.array2string(trI, precision=5))
print(f"theory   E Tr S = {e1:.5f}, E Tr S^2 = {e2:.5f}")

# dense assembly on a narrower net, where P stays small enough
small = setup.with_width(20)
ms = [empirical_moments(assemble(init_params(small.arch(), s), small.X, loss)) for s in range(20)]
print("\nwidth 20, dense, 20 seeds")
print("empirical Tr I^k:", np.array2string(np.mean([m["trI"] for m in ms], axis=0), precision=5))
print("empirical Tr S^k:", np.array2string(np.mean([m["trS"] for m in ms], axis=0), precision=5))
print(f"normalized |IS|_F: {np.mean([m['frob_IS_normalized'] for m in ms]):.4f}")

# directional mode: wider net, Hutchinson estimates for Tr S^k
res = ex.run_trials(ex.moment_trial, setup, range(60), k_max=2, probes=8)
print("\nwidth 200, 60 seeds: mean +- se")
for key, th in (("trI", trI[:2]), ("trS", (e1, e2))):
    mean, se = ex.ensemble_stats(np.stack([r[key][0] for r in res]))
    for k in range(2):
        print(f"  {key}{k + 1}: {mean[k]:.5f} +- {se[k]:.5f}   theory {th[k]:.5f}")
# Tr S is a product of Gaussians (G and the residual), so it is skewed and
# small ensembles tend to undershoot its mean
