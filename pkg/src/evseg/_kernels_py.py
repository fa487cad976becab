"""Pure-numpy kernel backend.

Same contracts as the compiled extension ``evseg._kernels``; see
``evseg.kernels`` for the dispatch. All arrays are float64, pixels flattened
to the leading axis. The evidential fold over prototypes uses the closed form
for singleton+ignorance masses:

    w_ik = 1 - s_i * (1 - u_ik)        per-prototype "class k or ignorance"
    mu_k = prod_i w_ik - prod_i (1-s_i)
    mu_omega = prod_i (1-s_i)

which equals the generic Dempster fold restricted to this family.
"""

import numpy as np

# keeps 1-s strictly positive even if alpha saturates to 1.0 in float64
S_CEIL = 1.0 - 1e-12
# kappa >= 1 - 1e-12, i.e. surviving mass <= 1e-12, counts as total conflict
SURVIVING_FLOOR = 1e-12


def _squared_distances(feats, protos):
    # (N,F),(I,F) -> (N,I) without the (N,I,F) temporary
    d2 = (
        (feats * feats).sum(axis=1)[:, None]
        + (protos * protos).sum(axis=1)[None, :]
        - 2.0 * feats @ protos.T
    )
    np.maximum(d2, 0.0, out=d2)
    return d2


def enn_forward(feats, protos, u, alpha, gamma):
    """Per-pixel evidential masses from prototype distances.

    Returns ``(masses, s)``: masses is (N, K+1) with the ignorance mass
    last, s is the (N, I) per-prototype activation cached for backward.
    """
    d2 = _squared_distances(feats, protos)
    s = alpha[None, :] * np.exp(-gamma[None, :] * d2)
    np.minimum(s, S_CEIL, out=s)

    w = 1.0 - s[:, :, None] * (1.0 - u[None, :, :])  # (N,I,K)
    pk = w.prod(axis=1)  # (N,K)
    v = (1.0 - s).prod(axis=1)  # (N,)

    n, k = pk.shape
    masses = np.empty((n, k + 1))
    masses[:, :k] = pk - v[:, None]
    masses[:, k] = v
    masses /= masses.sum(axis=1)[:, None]
    return masses, s


def enn_backward(feats, protos, u, alpha, gamma, upstream):
    """Chain-rule gradients through the evidential fold.

    ``upstream`` is (N, K+1) w.r.t. the normalized masses. Returns
    ``(dfeats, dprotos, du, dalpha, dgamma)`` with parameter gradients
    summed over pixels in deterministic order.
    """
    d2 = _squared_distances(feats, protos)
    e = np.exp(-gamma[None, :] * d2)
    s = alpha[None, :] * e
    np.minimum(s, S_CEIL, out=s)

    w = 1.0 - s[:, :, None] * (1.0 - u[None, :, :])
    pk = w.prod(axis=1)
    v = 1.0 - s
    vprod = v.prod(axis=1)

    n, k = pk.shape
    mu = np.empty((n, k + 1))
    mu[:, :k] = pk - vprod[:, None]
    mu[:, k] = vprod
    total = mu.sum(axis=1)
    m = mu / total[:, None]

    # backward through mu -> mu/sum(mu)
    ghat = (upstream - (upstream * m).sum(axis=1)[:, None]) / total[:, None]

    dpk = ghat[:, :k]
    dvprod = ghat[:, k] - dpk.sum(axis=1)
    dw = dpk[:, None, :] * (pk[:, None, :] / w)  # w >= 1-s > 0
    dv = dvprod[:, None] * (vprod[:, None] / v)
    ds = np.einsum("nik,ik->ni", dw, u - 1.0) - dv

    du = np.einsum("nik,ni->ik", dw, s)
    dalpha = (ds * e).sum(axis=0)
    dgamma = -np.einsum("ni,ni,ni->i", ds, d2, s)
    dd2 = -ds * gamma[None, :] * s

    dfeats = 2.0 * (dd2.sum(axis=1)[:, None] * feats - dd2 @ protos)
    dprotos = -2.0 * (dd2.T @ feats - dd2.sum(axis=0)[:, None] * protos)
    return dfeats, dprotos, du, dalpha, dgamma


def fuse_forward(p, m):
    """Dempster-combine Bayesian p (N,K) with singleton+ignorance m (N,K+1).

    Returns ``(fused, kappa, n_conflict)``. kappa is accumulated directly as
    the mass on disjoint pairs, sum_k p_k * (sum_{l != k} m_l), so it is
    exactly zero whenever no opposing masses coexist. Pixels in total
    conflict fall back to ``fused = p`` with kappa pinned just below 1 and
    are tallied in ``n_conflict``.
    """
    k = p.shape[1]
    singles = m[:, :k]
    single_total = singles.sum(axis=1)
    kappa = (p * (single_total[:, None] - singles)).sum(axis=1)
    np.clip(kappa, 0.0, None, out=kappa)

    unnorm = p * (singles + m[:, k][:, None])
    surviving = unnorm.sum(axis=1)
    conflicted = surviving <= SURVIVING_FLOOR

    safe = np.where(conflicted, 1.0, surviving)
    fused = unnorm / safe[:, None]
    if conflicted.any():
        fused[conflicted] = p[conflicted]
        kappa[conflicted] = 1.0 - 1e-12
    return fused, kappa, int(conflicted.sum())


def fuse_backward(p, m, upstream):
    """Gradients of the fused (renormalized) output w.r.t. p and m.

    Total-conflict pixels used the ``fused = p`` fallback, so their gradient
    passes straight to p and m gets none.
    """
    k = p.shape[1]
    momega = m[:, k][:, None]
    unnorm = p * (m[:, :k] + momega)
    surviving = unnorm.sum(axis=1)
    conflicted = surviving <= SURVIVING_FLOOR

    safe = np.where(conflicted, 1.0, surviving)
    fused = unnorm / safe[:, None]
    ghat = (upstream - (upstream * fused).sum(axis=1)[:, None]) / safe[:, None]

    dp = ghat * (m[:, :k] + momega)
    dm = np.empty_like(m)
    dm[:, :k] = ghat * p
    dm[:, k] = (ghat * p).sum(axis=1)
    if conflicted.any():
        dp[conflicted] = upstream[conflicted]
        dm[conflicted] = 0.0
    return dp, dm
