"""Pure-NumPy forward-backward kernels (fallback for the compiled core).

All kernels operate on the (K, T) matrix of per-state observation
log-probabilities.  Each forward column is shifted by its max before
exponentiation, so arbitrarily small observation probabilities stay finite;
the shift is folded into the recorded log normalizers.
"""

import numpy as np

BACKEND = "python"


def forward(log_mu, pi, rho):
    """Scaled forward pass.

    Returns ``(alpha_hat, log_c, bad_t)`` where ``alpha_hat[:, t]`` is the
    filtered state posterior, ``log_c[t]`` the log of the per-step
    normalizer, and ``bad_t`` the first step whose normalizer vanished
    (-1 if none did).
    """
    K, T = log_mu.shape
    alpha = np.empty((K, T))
    log_c = np.empty(T)
    pred = pi
    for t in range(T):
        shift = log_mu[:, t].max()
        if shift == -np.inf:
            return alpha, log_c, t
        col = pred * np.exp(log_mu[:, t] - shift)
        c = col.sum()
        if c <= 0.0:
            return alpha, log_c, t
        alpha[:, t] = col / c
        log_c[t] = np.log(c) + shift
        if t + 1 < T:
            pred = alpha[:, t] @ rho
    return alpha, log_c, -1


def backward(log_mu, rho, log_c):
    """Scaled backward pass sharing the forward normalizers.

    With this scaling ``beta_hat[:, T-1] == 1`` and column sums of
    ``alpha_hat * beta_hat`` are exactly one.
    """
    K, T = log_mu.shape
    beta = np.empty((K, T))
    beta[:, T - 1] = 1.0
    for t in range(T - 2, -1, -1):
        w = np.exp(log_mu[:, t + 1] - log_c[t + 1]) * beta[:, t + 1]
        beta[:, t] = rho @ w
    return beta


def posteriors(log_mu, rho, alpha_hat, beta_hat, log_c):
    """State and transition posteriors from the scaled passes.

    ``xi[j, k, t-1]`` is the posterior of moving from state j at t-1 to
    state k at t; ``gamma[:, t]`` sums the incoming xi for t >= 1 and is the
    normalized ``alpha*beta`` product at t = 0.
    """
    K, T = log_mu.shape
    gamma = np.empty((K, T))
    col0 = alpha_hat[:, 0] * beta_hat[:, 0]
    gamma[:, 0] = col0 / col0.sum()
    xi = np.empty((K, K, max(T - 1, 0)))
    for t in range(1, T):
        w = np.exp(log_mu[:, t] - log_c[t]) * beta_hat[:, t]
        xi[:, :, t - 1] = alpha_hat[:, t - 1][:, None] * rho * w[None, :]
        gamma[:, t] = xi[:, :, t - 1].sum(axis=0)
    return gamma, xi
