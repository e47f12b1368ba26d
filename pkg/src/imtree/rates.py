"""Mutual information of the Gaussian-input OFDM-IM channel: estimates, bounds, closed forms.

Conventions: ``rho`` is the ``C x N`` power matrix, ``xi = g * rho + noise_var``
the per-pattern output variances, and ``a = g * rho`` the received signal
powers.  Products over active subcarriers are accumulated as sums of logs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .channel import (
    ChannelState,
    SapCatalog,
    conditional_log_densities,
    mixture_log_densities,
    output_variances,
    sample_outputs,
    standard_complex_normal,
)
from .rng import run_partitioned, spawn_generators, split_counts

MIN_MC_SAMPLES = 100
SINGULAR_COND = 1e10


class SingularMatrixError(np.linalg.LinAlgError):
    def __init__(self, cond: float):
        super().__init__(f"pairwise overlap matrix is singular (condition number {cond:.3g})")
        self.cond = cond


@dataclass(frozen=True)
class MiEstimate:
    value: float
    std_error: float
    samples: int
    seed: int
    partitions: int = 1


def _check_p(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("p must be a probability vector")
    return p


def noise_entropy(state: ChannelState) -> float:
    return state.N * math.log(math.pi * math.e * state.noise_var)


def mi_monte_carlo(
    p,
    rho,
    catalog: SapCatalog,
    state: ChannelState,
    samples: int,
    seed: int,
    partitions: int = 1,
    threads: int | None = None,
) -> MiEstimate:
    """Plain Monte Carlo ``I = E[-log f_Y(Y)] - N log(pi e sigma^2)`` with ``Y ~ f_Y``."""
    if samples < MIN_MC_SAMPLES:
        raise ValueError(f"need at least {MIN_MC_SAMPLES} samples, got {samples}")
    p = _check_p(p)
    xi = output_variances(rho, catalog, state)

    def chunk(rng, count):
        if count == 0:
            return np.empty(0)
        _, y = sample_outputs(p, rho, catalog, state, rng, count)
        return -mixture_log_densities(y, p, xi)

    vals = np.concatenate(run_partitioned(chunk, samples, seed, partitions, threads))
    h = vals.mean()
    return MiEstimate(
        float(h - noise_entropy(state)),
        float(vals.std(ddof=1) / math.sqrt(samples)),
        samples,
        seed,
        partitions,
    )


class StratifiedMi:
    """Common-random-number MI evaluator for many probability vectors.

    Draws ``samples_per_sap`` outputs from every conditional density once and
    evaluates ``I(p) = sum_i p_i (C_i + E_i[log f_i(Y) - log f_p(Y)])`` on the
    same draws for any ``p``.  ``C_i = h(Y | U=i) - h(Z)`` is exact, so only the
    bounded log-ratio term is estimated; its variance is far below that of
    the plain entropy estimate.
    """

    def __init__(self, rho, catalog: SapCatalog, state: ChannelState, samples_per_sap: int,
                 seed: int, partitions: int = 1):
        if samples_per_sap < MIN_MC_SAMPLES:
            raise ValueError(f"need at least {MIN_MC_SAMPLES} samples per pattern")
        self.state = state
        self.xi = output_variances(rho, catalog, state)
        C, N = self.xi.shape
        self.samples = samples_per_sap
        gens = spawn_generators(seed, partitions)
        counts = split_counts(samples_per_sap, partitions)
        w = np.concatenate(
            [standard_complex_normal(g, (C, c, N)) for g, c in zip(gens, counts)], axis=1
        )
        y = np.sqrt(self.xi)[:, None, :] * w
        # logf[i, m, j] = log f_j(y drawn from pattern i)
        self.logf = np.stack([conditional_log_densities(y[i], self.xi) for i in range(C)])
        self.cap = np.sum(np.log(self.xi / state.noise_var), axis=1)
        self.seed = seed
        self.partitions = partitions

    def evaluate(self, P, batch: int = 32) -> tuple[np.ndarray, np.ndarray]:
        """MI values and standard errors for each row of ``P``."""
        P = np.atleast_2d(np.asarray(P, dtype=float))
        C = self.logf.shape[0]
        vals = np.empty(len(P))
        errs = np.empty(len(P))
        with np.errstate(divide="ignore"):
            logP = np.log(P)
        for start in range(0, len(P), batch):
            lp = logP[start : start + batch]
            pb = P[start : start + batch]
            means = np.zeros((len(lp), C))
            varis = np.zeros((len(lp), C))
            for i in range(C):
                if not np.any(pb[:, i] > 0):
                    continue
                # (M, B)
                v = self.logf[i][:, i, None] - logsumexp(self.logf[i][:, None, :] + lp[None, :, :], axis=2)
                means[:, i] = v.mean(axis=0)
                varis[:, i] = v.var(axis=0, ddof=1)
            vals[start : start + batch] = np.sum(pb * (self.cap[None, :] + means), axis=1)
            errs[start : start + batch] = np.sqrt(np.sum(pb**2 * varis, axis=1) / self.samples)
        return vals, errs

    def estimate(self, p) -> MiEstimate:
        v, e = self.evaluate(_check_p(p)[None, :])
        return MiEstimate(float(v[0]), float(e[0]), self.samples * self.logf.shape[0],
                          self.seed, self.partitions)


def single_pattern_capacity(i: int, rho, state: ChannelState) -> float:
    """``sum_l log(1 + g_l rho_li / sigma^2)``: rate with the pattern known to the receiver."""
    a = state.gains * np.asarray(rho, float)[i]
    return float(np.sum(np.log1p(a / state.noise_var)))


def _log_pair_overlap(rho, catalog: SapCatalog, state: ChannelState) -> np.ndarray:
    """``log a_ij = -sum_l log(xi_li + xi_lj)``."""
    xi = output_variances(rho, catalog, state)
    return -np.sum(np.log(xi[:, None, :] + xi[None, :, :]), axis=2)


def jensen_lower_bound(p, rho, catalog: SapCatalog, state: ChannelState) -> float:
    """``-log sum_ij p_i p_j / det(Xi_i + Xi_j) - N log(e sigma^2)``."""
    p = _check_p(p)
    keep = p > 0
    log_a = _log_pair_overlap(rho, catalog, state)[np.ix_(keep, keep)]
    lp = np.log(p[keep])
    total = logsumexp(log_a + lp[:, None] + lp[None, :])
    return float(-total - state.N * math.log(math.e * state.noise_var))


def jensen_matrices(rho, catalog: SapCatalog, state: ChannelState) -> tuple[np.ndarray, float]:
    """Overlap matrix ``A`` rescaled by its largest entry, and its log scale.

    The optimal probabilities do not depend on a positive rescaling of ``A``.
    """
    log_a = _log_pair_overlap(rho, catalog, state)
    scale = log_a.max()
    return np.exp(log_a - scale), float(scale)


def _closed_form_weights(A: np.ndarray) -> np.ndarray:
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > SINGULAR_COND:
        raise SingularMatrixError(float(cond))
    return np.linalg.solve(A, np.ones(len(A)))


def jensen_optimal_probs(rho, catalog: SapCatalog, state: ChannelState, refine: bool = True):
    """Probabilities maximizing the Jensen bound, ``p ~ (A^-1 1)^+``.

    When some row sums of ``A^-1`` are negative the clipped closed form is
    not the constrained minimizer of ``p'Ap``; with ``refine`` the closed
    form is re-applied on the shrinking support until every weight is
    positive and the KKT conditions hold, which is the exact minimizer.
    Raises :class:`SingularMatrixError` when ``A`` is numerically singular.
    """
    A, _ = jensen_matrices(rho, catalog, state)
    w = _closed_form_weights(A)
    p = np.clip(w, 0, None)
    if p.sum() <= 0:
        raise SingularMatrixError(float(np.linalg.cond(A)))
    p /= p.sum()
    if not refine or np.all(w > 0):
        return p
    support = w > 0
    for _ in range(len(A)):
        idx = np.flatnonzero(support)
        ws = _closed_form_weights(A[np.ix_(idx, idx)])
        if np.any(ws <= 0):
            support[idx[ws <= 0]] = False
            continue
        p = np.zeros(len(A))
        p[idx] = ws / ws.sum()
        grad = A @ p
        lam = p @ grad
        # KKT: (A p)_j >= p'Ap off the support; otherwise re-admit the worst offender
        off = np.flatnonzero(~support)
        bad = off[grad[off] < lam * (1 - 1e-12)]
        if bad.size == 0:
            return p
        support[bad[np.argmin(grad[bad])]] = True
    return p


def _log_pattern_products(rho, catalog: SapCatalog, state: ChannelState) -> np.ndarray:
    """``sum_{l in S_i} log(1 + g_l rho_li / sigma^2)`` per pattern."""
    a = state.gains[None, :] * np.asarray(rho, float)
    return np.sum(np.log1p(a / state.noise_var) * catalog.mask(), axis=1)


def high_snr_probs(rho, catalog: SapCatalog, state: ChannelState) -> np.ndarray:
    """``q_i`` proportional to ``prod_{l in S_i} (g_l rho_li + sigma^2)``.

    Every pattern has ``K`` factors, so dividing each by ``sigma^2`` leaves
    ``q`` unchanged; the normalized form is the better-scaled one.
    """
    s = _log_pattern_products(rho, catalog, state)
    return np.exp(s - logsumexp(s))


def upper_bound_mu(rho, catalog: SapCatalog, state: ChannelState) -> float:
    """``mu = log sum_i prod_{l in S_i} (g_l rho_li / sigma^2 + 1)``."""
    return float(logsumexp(_log_pattern_products(rho, catalog, state)))


def low_snr_probs(rho, catalog: SapCatalog, state: ChannelState) -> tuple[np.ndarray, int]:
    """One-hot on the pattern with the largest single-pattern capacity (lowest index on ties)."""
    s = _log_pattern_products(rho, catalog, state)
    i_star = int(np.argmax(s))
    r = np.zeros(len(s))
    r[i_star] = 1.0
    return r, i_star


def high_snr_objective(P, rho, catalog: SapCatalog, state: ChannelState) -> np.ndarray:
    """High-SNR asymptote ``mu - KL(p || q)`` for each row of ``P``."""
    P = np.atleast_2d(np.asarray(P, float))
    q = high_snr_probs(rho, catalog, state)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(P > 0, P * (np.log(P) - np.log(q)[None, :]), 0.0)
    return upper_bound_mu(rho, catalog, state) - terms.sum(axis=1)


def low_snr_objective(P, rho, catalog: SapCatalog, state: ChannelState) -> np.ndarray:
    """Low-SNR asymptote ``-log sum_i p_i / prod_{l in S_i}(1 + a_li / sigma^2)``."""
    P = np.atleast_2d(np.asarray(P, float))
    s = _log_pattern_products(rho, catalog, state)
    with np.errstate(divide="ignore"):
        return -logsumexp(np.log(P) - s[None, :], axis=1)


# ---------------------------------------------------------------------------
# Power allocation
# ---------------------------------------------------------------------------


def waterfill(gains, noise_var: float, budget: float) -> np.ndarray:
    """Waterfilling powers ``(level - noise_var / g_l)^+`` summing to ``budget``.

    Zero-gain subcarriers get no power.
    """
    g = np.asarray(gains, dtype=float)
    if budget <= 0:
        raise ValueError("budget must be positive")
    if not np.any(g > 0):
        raise ValueError("all gains are zero")
    out = np.zeros_like(g)
    idx = np.flatnonzero(g > 0)
    floors = noise_var / g[idx]
    order = np.argsort(floors, kind="stable")
    floors = floors[order]
    # largest active count whose water level stays above the next floor
    n = len(floors)
    level = None
    for k in range(n, 0, -1):
        lvl = (budget + floors[:k].sum()) / k
        if lvl > floors[k - 1]:
            level = lvl
            break
    powers = np.clip(level - floors, 0, None)
    # exact budget on the active set
    active = powers > 0
    powers[active] += (budget - powers.sum()) / active.sum()
    out[idx[order]] = powers
    return out


def allocate_powers_per_sap(catalog: SapCatalog, state: ChannelState) -> np.ndarray:
    """Waterfilling over each pattern's active subcarriers with the full budget."""
    rho = np.zeros((len(catalog), catalog.N))
    for i, s in enumerate(catalog.sets):
        idx = list(s)
        rho[i, idx] = waterfill(state.gains[idx], state.noise_var, state.power_budget)
    return rho
