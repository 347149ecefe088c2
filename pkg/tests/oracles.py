"""Reference computations that share no code with the package."""
import math

import numpy as np
import sympy


def symbolic_posterior_mean(betas, t, x_t, x0, digits=40):
    """E[x_{t-1} | x_t, x_0] for the scalar forward chain, conditioned symbolically.

    Builds x_1..x_t as linear forms in independent standard normals, reads off
    the joint moments of (x_{t-1}, x_t) and applies Gaussian conditioning.
    """
    eps = sympy.symbols(f"e1:{t + 1}")
    xs = [sympy.Float(x0, digits)]
    for i in range(t):
        b = sympy.Float(float(betas[i]), digits)
        xs.append(sympy.sqrt(1 - b) * xs[-1] + sympy.sqrt(b) * eps[i])
    prev, cur = sympy.expand(xs[t - 1]), sympy.expand(xs[t])

    def mean(e):
        return e.subs({s: 0 for s in eps})

    def cov(a, b):
        return sum(a.coeff(s) * b.coeff(s) for s in eps)

    var_t = cov(cur, cur)
    if var_t == 0:
        return float(mean(prev))
    out = mean(prev) + cov(prev, cur) / var_t * (sympy.Float(x_t, digits) - mean(cur))
    return float(sympy.N(out, digits))


def chain_marginal(betas, t):
    """(sqrt(alpha_bar_t), 1 - alpha_bar_t) by iterating single-step kernels."""
    scale, var = 1.0, 0.0
    for b in betas[:t]:
        scale *= math.sqrt(1.0 - b)
        var = (1.0 - b) * var + b
    return scale, var


def projection_error_mm(mesh, eigenvectors, k):
    """Mean/max vertex error of the rank-k orthogonal projection, via least squares."""
    u = eigenvectors[:, :k]
    coef, *_ = np.linalg.lstsq(u, mesh, rcond=None)
    err = np.linalg.norm(u @ coef - mesh, axis=-1) * 1000.0
    return err


def cfg_oracle(u, d, s, s_d, s_s):
    out = np.empty_like(u)
    for idx in np.ndindex(u.shape):
        out[idx] = (1.0 - s_d - s_s) * u[idx] + s_d * d[idx] + s_s * s[idx]
    return out
