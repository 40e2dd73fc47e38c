"""Friction tensors: lag-summed autocovariance of centered conjugate forces.

For linear rewards the conjugate forces are the features themselves, so

    zeta_ij = beta * sum_{t=0}^{T} E[dphi_i(s_t, a_t) dphi_j(s_0, a_0)]

with ``(s_0, a_0)`` drawn from the stationary distribution of the policy chain.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.ndimage import gaussian_filter

from .errors import ConfigError
from .maxent_solver import SoftSolution, StationaryDist, policy_chain
from .mdp_core import TabularMdp

TRACE_FLOOR = 1e-12
STATIONARITY_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class FrictionTensor:
    """Symmetrized friction tensor.

    ``zeta`` is exactly PSD (negative eigenvalues clamped); ``raw`` keeps the
    symmetrized lag sum before clamping and ``clamp`` the largest clamped
    magnitude.  ``tail`` is the size of the last lag term, a truncation diagnostic.
    """

    zeta: np.ndarray
    truncation_lag: int
    beta_prefactor: float = 1.0
    raw: np.ndarray | None = None
    clamp: float = 0.0
    tail: float = 0.0

    @property
    def trace(self) -> float:
        return float(np.trace(self.zeta))


def _make_tensor(lag_sum, T, beta, tail=0.0) -> FrictionTensor:
    lag_sum = np.atleast_2d(np.asarray(lag_sum, dtype=float))
    sym = beta * 0.5 * (lag_sum + lag_sum.T)
    w, U = np.linalg.eigh(sym)
    clamp = float(max(0.0, -w.min()))
    zeta = (U * np.clip(w, 0.0, None)) @ U.T if clamp > 0 else sym.copy()
    return FrictionTensor(zeta=zeta, truncation_lag=int(T), beta_prefactor=float(beta),
                          raw=sym, clamp=clamp, tail=float(tail))


def friction_exact(
    mdp: TabularMdp,
    solution: SoftSolution,
    rho: StationaryDist,
    T: int = 2000,
    beta: float = 1.0,
    chain=None,
) -> FrictionTensor:
    """Friction tensor of the solution's policy by propagating centered features through the chain."""
    if T < 0:
        raise ConfigError("max lag must be non-negative")
    n_pairs = mdp.n_states * mdp.n_actions
    if rho.rho.shape != (n_pairs,):
        raise ConfigError(f"stationary distribution has {rho.rho.size} entries, expected {n_pairs}")
    M = policy_chain(mdp, solution.policy) if chain is None else np.asarray(chain)
    p = rho.rho
    stationarity = 0.5 * np.abs(p @ M - p).sum()
    if stationarity > STATIONARITY_TOL:
        raise ConfigError(f"distribution is not stationary for the chain (TV residual {stationarity:.2e})")

    phi = mdp.features.reshape(n_pairs, -1)
    dphi = phi - p @ phi
    # a constant feature centers to exactly zero, not to rounding noise
    dphi[:, np.ptp(phi, axis=0) == 0] = 0.0
    weighted = p[:, None] * dphi
    M_sp = sparse.csr_matrix(M)
    U = dphi.copy()
    # acc[j, i] accumulates E[dphi_i(x_t) dphi_j(x_0)]
    acc = weighted.T @ U
    term = acc
    for _ in range(T):
        U = M_sp @ U
        term = weighted.T @ U
        acc = acc + term
    return _make_tensor(acc.T, T, beta, tail=np.max(np.abs(term)))


def autocovariance_fft(series, max_lag: int) -> np.ndarray:
    """Biased autocovariance ``c[t, i, j] = (1/N) sum_k dx_i[k+t] dx_j[k]`` for t = 0..max_lag."""
    x = np.asarray(series, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    if n == 0:
        raise ConfigError("empty series")
    if not 0 <= max_lag < n:
        raise ConfigError(f"need series length > max lag (got N={n}, T={max_lag})")
    dx = x - x.mean(axis=0)
    nfft = 1 << (2 * n - 1).bit_length()
    X = np.fft.rfft(dx, n=nfft, axis=0)
    cross = X[:, :, None] * np.conj(X[:, None, :])
    c = np.fft.irfft(cross, n=nfft, axis=0)[: max_lag + 1]
    return c / n


def friction_sampled(series, T: int, beta: float = 1.0) -> FrictionTensor:
    """Lag-summed autocovariance of a sampled series (scalar rewards or feature vectors).

    Uses FFT correlation (Wiener-Khinchin); the normalization is the biased
    ``1/N`` convention at every lag.
    """
    x = np.asarray(series, dtype=float)
    if x.size == 0:
        raise ConfigError("empty series")
    if T < 1:
        raise ConfigError("max lag must be at least 1")
    c = autocovariance_fft(x, T)
    return _make_tensor(c.sum(axis=0), T, beta, tail=np.max(np.abs(c[-1])))


def log_trace(zetas) -> np.ndarray:
    """``log Tr zeta`` for an array of tensors shaped ``grid + (L, L)``, floored at 1e-12."""
    z = np.asarray(zetas, dtype=float)
    tr = np.trace(z, axis1=-2, axis2=-1)
    return np.log(np.maximum(tr, TRACE_FLOOR))


def scalar_field(zetas, spacing, sigma: float = 0.1, log_first: bool = False):
    """Reduce a tensor field to ``log Tr zeta`` and a Gaussian-smoothed version.

    ``sigma`` is in task-parameter units; ``spacing`` gives the node spacing
    per grid axis, and boundaries are reflected.  By default the trace is
    smoothed and the log taken afterwards; a one-node-wide ridge then keeps
    its maximum on the ridge.  ``log_first=True`` smooths the log instead.
    Returns ``(raw, smoothed)``.
    """
    raw = log_trace(zetas)
    spacing = np.broadcast_to(np.asarray(spacing, dtype=float), (raw.ndim,))
    if sigma <= 0:
        return raw, raw.copy()
    width = sigma / spacing
    if log_first:
        return raw, gaussian_filter(raw, sigma=width, mode="reflect")
    tr = np.maximum(np.trace(np.asarray(zetas, dtype=float), axis1=-2, axis2=-1), TRACE_FLOOR)
    return raw, np.log(np.maximum(gaussian_filter(tr, sigma=width, mode="reflect"), TRACE_FLOOR))
