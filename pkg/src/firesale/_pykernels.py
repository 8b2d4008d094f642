"""Pure numpy round kernels; fallback for :mod:`firesale._ckernels`.

Every function writes into caller-provided output arrays so the cascade
driver does not allocate per round.
"""
import numpy as np


def evaluate_sales(rho, u, out):
    out[:] = rho(u)


def exposure(x, h, out):
    # column accumulation keeps the summation order of the compiled kernel
    acc = x[:, 0] * h[0]
    for m in range(1, x.shape[1]):
        acc += x[:, m] * h[m]
    out[:] = acc


def sold_totals(x, frac, out):
    # cumulative sum is strictly sequential over rows, like the compiled loop
    out[:] = np.cumsum(x * frac[:, None], axis=0)[-1]


def aux_fractions(x, ell, c, h, rho, frac_out):
    xh = np.empty(x.shape[0])
    exposure(x, h, xh)
    frac_out[:] = rho((ell + xh) / c)


def real_round(x, ell, c, h, rho, frac, realized, loss_out):
    xh = np.empty(x.shape[0])
    exposure(x, h, xh)
    corr = np.maximum(frac * xh - realized, 0.0)
    loss = ell + (xh - corr)
    newf = np.maximum(rho(loss / c), frac)
    realized += (newf - frac) * xh
    frac[:] = newf
    loss_out[:] = loss
