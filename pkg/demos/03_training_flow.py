"""Gradient flow: a finite network against its limiting dynamics.

Trains one network with small Euler steps and compares its outputs and the
trace of S with the closed-form infinite-width trajectory started from the
same initial outputs Y(0) and Laplacians G(0).
"""

import numpy as np

from ntkhess import experiments as ex
from ntkhess.data import generate
from ntkhess.losses import loss_grad
from ntkhess.theory import mse_flow
from ntkhess.widenet import g_trace, init_params, train_flow

data = generate({"source": "disk", "N": 8, "seed": 0})
setup = ex.make_setup(data, L=3, width=400)
g, loss = setup.grams, setup.loss()
ys = loss.labels.reshape(-1)

p = init_params(setup.arch(), seed=1)
traj = train_flow(p, setup.X, loss, t_max=4.0, record_times=np.linspace(0, 4, 9))
Y0, G0 = traj.Y[0], g_trace(p, setup.X).reshape(-1)

print("   t     loss    max|Y - Y_lim|   Tr S     Tr S (limit)")
for t, Y, c, q in zip(traj.times, traj.Y, traj.loss, traj.params):
    lim = mse_flow(g.theta, g.lam, Y0, G0, ys, t, setup.N)
    trS = g_trace(q, setup.X).reshape(-1) @ loss_grad(loss, Y)
    trS_lim = lim.G @ loss_grad(loss, lim.Y)
    print(f"{t:5.2f}  {c:.5f}  {np.abs(Y - lim.Y).max():.2e}       {trS:+.5f}  {trS_lim:+.5f}")
# Tr S decays with the residual, so S matters mostly early in training
