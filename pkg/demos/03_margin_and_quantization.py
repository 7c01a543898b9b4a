"""How the margin and the quantization weight shape the loss."""

import numpy as np

from tlhash import loss

spacer = "-" * 60

print("For a triplet (q, p, n) the likelihood argument is")
print("  x = theta_qp - theta_qn - alpha,   theta_ij = <u_i, u_j> / 2")
print("and every likelihood gradient is scaled by 1 - sigmoid(x).")

u_q = np.array([1.0, 1.0, -1.0, 1.0])
u_p = np.array([1.0, 1.0, -1.0, -1.0])
u_n = np.array([-1.0, 1.0, 1.0, -1.0])
gap = loss.theta_relaxed(u_q, u_p) - loss.theta_relaxed(u_q, u_n)
print("\ngap theta_qp - theta_qn =", gap)

print("\nalpha   log P(triplet)   gradient scale")
for alpha in (0.0, 1.0, 2.0, 4.0):
    lp = loss.triplet_log_prob(u_q, u_p, u_n, alpha)
    scale = loss.gradient_scale([[0, 1, 2]], np.stack([u_q, u_p, u_n]), alpha)[0]
    print(f"{alpha:5.1f}   {lp:14.4f}   {scale:14.4f}")
print("A larger margin keeps the scale away from zero for triplets that already hold.")

print(spacer)
print("The log-likelihood stays finite for extreme arguments:")
for g in (-1e6, -50.0, 0.0, 50.0, 1e6):
    print(f"  gap {g:>10g}: log P = {loss.triplet_log_prob([1.0, 0.0], [2 * g, 0.0], [0.0, 0.0], 0.0):.6g}")

print(spacer)
print("The quantization term lam * ||sgn(u) - u||^2 pulls relaxed codes to +/-1.")
U = np.array([[0.2, -0.4, 1.3], [2.0, -1.0, 0.05], [-0.7, 0.9, -1.1]])
t = [[0, 1, 2]]
for lam in (0.0, 1.0, 100.0):
    nll, qerr = loss.loss_terms(t, U, loss.LossConfig(alpha=1.5, lam=lam))
    step = U - 1e-3 * loss.grad_U(t, U, loss.LossConfig(alpha=1.5, lam=lam))
    print(f"lam={lam:6.1f}  nll={nll:.4f}  qerr={qerr:.4f}  qerr after one step={loss.quantization_error(step):.4f}")
