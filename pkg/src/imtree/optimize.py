"""Joint probability/power optimization, relaxed and dyadic-constrained."""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .channel import (
    ChannelState,
    SapCatalog,
    SystemConfig,
    conditional_log_densities,
    output_variances,
    standard_complex_normal,
    uniform_powers,
)
from .mapping import METRICS, project_to_feasible
from .rates import (
    MiEstimate,
    SingularMatrixError,
    StratifiedMi,
    allocate_powers_per_sap,
    high_snr_objective,
    high_snr_probs,
    jensen_optimal_probs,
    low_snr_objective,
    mi_monte_carlo,
)
from .rng import spawn_generators, split_counts
from .trees import (
    MAX_FEASIBLE_VECTORS,
    CapacityError,
    DyadicProbabilityVector,
    feasible_set_size,
    iter_feasible_set,
    rank_matched_candidates,
)

log = logging.getLogger(__name__)

MAX_BCD_N = 4
MAX_ENUM_C = 15
# exhaustive enumeration below this many feasible vectors, rank-matched above
EXHAUSTIVE_LIMIT = 20_000
OBJECTIVES = ("auto", "high_snr", "low_snr", "mc")
REFINE_TOP = 16
REFINE_SAMPLES = 40_000


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-and-threshold)."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    theta = css[rho] / (rho + 1)
    return np.maximum(v - theta, 0.0)


# ---------------------------------------------------------------------------
# Block coordinate descent on the relaxed problem
# ---------------------------------------------------------------------------


class SampleAverageMi:
    """Deterministic sample-average MI surrogate with fixed base draws.

    Outputs from pattern ``i`` are ``sqrt(xi_i) * w`` for stored standard
    complex normals ``w``, so the surrogate is smooth in the powers.  Draws are
    importance-weighted against the equal-weight mixture ``r`` of the
    conditionals, and the exact conditional entropies serve as a control
    variate::

        I(p) = sum_j p_j C_j + E_r[sum_j p_j (f_j / r) log f_j - (f_p / r) log f_p]

    with ``C_j = sum_l log(xi_jl / sigma^2)``.  The first part is linear and
    the second is concave in ``p`` (``x log x`` is convex and ``f_p`` is
    linear in ``p``), so the surrogate is concave for every draw.
    """

    def __init__(self, catalog: SapCatalog, state: ChannelState, samples_per_sap: int, seed: int,
                 partitions: int = 1):
        self.catalog = catalog
        self.state = state
        C, N = len(catalog), state.N
        gens = spawn_generators(seed, partitions)
        counts = split_counts(samples_per_sap, partitions)
        self.w = np.concatenate(
            [standard_complex_normal(g, (C, c, N)) for g, c in zip(gens, counts)], axis=1
        )

    def _logf(self, rho) -> tuple[np.ndarray, np.ndarray]:
        xi = output_variances(rho, self.catalog, self.state)
        y = np.sqrt(xi)[:, None, :] * self.w
        C, M, N = y.shape
        cap = np.sum(np.log(xi / self.state.noise_var), axis=1)
        return conditional_log_densities(y.reshape(C * M, N), xi), cap  # (C*M, C), (C,)

    def value_and_grad(self, p, rho) -> tuple[float, np.ndarray]:
        p = np.asarray(p, float)
        logf, cap = self._logf(rho)
        C = logf.shape[1]
        log_r = logsumexp(logf, axis=1) - math.log(C)
        with np.errstate(divide="ignore"):
            log_fp = logsumexp(logf + np.log(p)[None, :], axis=1)
        ratio = np.exp(logf - log_r[:, None])  # f_j / r
        resid = np.mean(ratio * (logf - log_fp[:, None]), axis=0)
        grad = cap + resid - np.mean(ratio, axis=0)
        return float(p @ (cap + resid)), grad

    def value(self, p, rho) -> float:
        return self.value_and_grad(p, rho)[0]


def _maximize_p(obj: SampleAverageMi, p0, rho, tol=1e-10, max_iter=500) -> tuple[np.ndarray, float]:
    """Projected gradient ascent with backtracking on the concave surrogate."""
    p = np.asarray(p0, float)
    f, g = obj.value_and_grad(p, rho)
    step = 1.0
    for _ in range(max_iter):
        while True:
            cand = project_simplex(p + step * g)
            fc, gc = obj.value_and_grad(cand, rho)
            d = cand - p
            if fc >= f + g @ d - 0.5 / step * (d @ d) or step < 1e-12:
                break
            step *= 0.5
        moved = float(np.max(np.abs(cand - p)))
        p, f, g = cand, fc, gc
        if moved < tol:
            break
        step *= 2.0
    return p, f


def _maximize_rho(obj: SampleAverageMi, p, rho0, rel_step=0.25, min_rel_step=1e-3):
    """Pairwise power-shift coordinate search within each pattern's budget."""
    rho = np.array(rho0, dtype=float)
    budget = obj.state.power_budget
    best = obj.value(p, rho)
    step = rel_step * budget
    while step >= min_rel_step * budget:
        improved = False
        for i, s in enumerate(obj.catalog.sets):
            if p[i] <= 0:
                continue
            for a, b in itertools.permutations(s, 2):
                delta = min(step, rho[i, a])
                if delta <= 0:
                    continue
                trial = rho.copy()
                trial[i, a] -= delta
                trial[i, b] += delta
                val = obj.value(p, trial)
                if val > best:
                    rho, best, improved = trial, val, True
        if not improved:
            step *= 0.5
    return rho, best


@dataclass
class BcdResult:
    p: np.ndarray
    rho: np.ndarray
    mi: MiEstimate
    converged: bool
    cycles: int
    history: list[float] = field(default_factory=list)


def bcd_optimize(
    state: ChannelState,
    config: SystemConfig,
    mc_budget: int = 4000,
    seed: int = 0,
    p0=None,
    rho0=None,
    fix_powers: bool = False,
    tol: float = 1e-3,
    max_cycles: int = 20,
    eval_samples: int = 100_000,
    partitions: int = 1,
) -> BcdResult:
    """Alternate the probability step and the power step until a cycle gains < ``tol`` nats.

    The probability step solves the concave sample-average problem exactly
    (up to ``1e-10``); the power step is a pairwise coordinate search started
    from per-pattern waterfilling.  Both use the same base draws throughout.
    The returned estimate comes from independent plain Monte Carlo draws.
    """
    if config.N > MAX_BCD_N:
        raise ValueError(f"block coordinate descent is limited to N <= {MAX_BCD_N}")
    catalog = config.catalog()
    C = len(catalog)
    p = np.full(C, 1.0 / C) if p0 is None else np.asarray(p0, float)
    rho = allocate_powers_per_sap(catalog, state) if rho0 is None else np.asarray(rho0, float)
    obj = SampleAverageMi(catalog, state, mc_budget, seed, partitions)
    history = [obj.value(p, rho)]
    converged = False
    cycles = 0
    for cycles in range(1, max_cycles + 1):
        p, _ = _maximize_p(obj, p, rho)
        if not fix_powers:
            rho, _ = _maximize_rho(obj, p, rho)
        history.append(obj.value(p, rho))
        if history[-1] - history[-2] < tol:
            converged = True
            break
    if not converged:
        log.warning("BCD stopped after %d cycles without converging", cycles)
    mi = mi_monte_carlo(p, rho, catalog, state, eval_samples, seed + 1, partitions)
    return BcdResult(p, rho, mi, converged, cycles, history)


# ---------------------------------------------------------------------------
# Constrained problem
# ---------------------------------------------------------------------------


@dataclass
class ConstrainedSolution:
    p: DyadicProbabilityVector
    rho: np.ndarray
    mi: MiEstimate
    method: str
    objective: str = ""
    candidates: int = 0
    flag: str = ""
    relaxed: np.ndarray | None = None


def _resolve_objective(objective: str, state: ChannelState) -> str:
    if objective not in OBJECTIVES:
        raise ValueError(f"unknown objective {objective!r}; expected one of {OBJECTIVES}")
    if objective == "auto":
        return "high_snr" if state.snr_db >= 10 else "mc"
    return objective


def enumerate_candidates(
    C: int, preference=None, restrict_leaves: int | None = None, exhaustive: bool | None = None
) -> list[DyadicProbabilityVector]:
    """Candidate dyadic vectors for the enumerative solver.

    Exhaustive enumeration of the feasible set when it is small enough;
    otherwise one rank-matched vector per profile, shallowest leaves on the
    most preferred patterns.  ``restrict_leaves`` keeps only trees with that
    many leaves.
    """
    v = None if restrict_leaves is None else restrict_leaves - 1
    if exhaustive is None:
        exhaustive = feasible_set_size(C, v, stop_above=EXHAUSTIVE_LIMIT) <= EXHAUSTIVE_LIMIT
    if exhaustive:
        if feasible_set_size(C, v, stop_above=MAX_FEASIBLE_VECTORS) > MAX_FEASIBLE_VECTORS:
            raise CapacityError(f"feasible set for C={C} is too large to enumerate")
        return list(iter_feasible_set(C, v))
    if preference is None:
        raise ValueError("rank-matched enumeration needs a pattern preference")
    order = list(np.argsort(-np.asarray(preference, float), kind="stable"))
    cands = rank_matched_candidates(order, C)
    if restrict_leaves is not None:
        return [c for c in cands if len(c.active()) == restrict_leaves]
    return list(cands)


def select_by_monte_carlo(P, rho, catalog: SapCatalog, state: ChannelState, seed: int,
                          select_samples: int = 4000, refine_top: int = REFINE_TOP,
                          refine_samples: int = REFINE_SAMPLES, partitions: int = 1) -> int:
    """Index of the MI-maximizing row of ``P`` by two-stage Monte Carlo.

    Every row is screened on one set of common draws (``select_samples`` per
    pattern); the ``refine_top`` leaders are re-scored on a larger,
    independent set.  Rows within two standard errors of the refined leader
    count as tied and the earliest row wins, so exact ties (patterns with
    identical output statistics) resolve deterministically.
    """
    screen = StratifiedMi(rho, catalog, state, select_samples, [seed, 1], partitions)
    scores, _ = screen.evaluate(P)
    if len(P) == 1:
        return 0
    top = np.sort(np.argsort(-scores, kind="stable")[:refine_top])
    fine = StratifiedMi(rho, catalog, state, refine_samples, [seed, 2], partitions)
    vals, errs = fine.evaluate(P[top])
    lead = int(np.argmax(vals))
    tied = vals >= vals[lead] - 2 * np.hypot(errs, errs[lead])
    return int(top[np.flatnonzero(tied)[0]])


def solve_constrained_enumerative(
    state: ChannelState,
    config: SystemConfig,
    objective: str = "auto",
    samples: int = 100_000,
    seed: int = 0,
    rho=None,
    select_samples: int = 4000,
    restrict_leaves: int | None = None,
    exhaustive: bool | None = None,
    partitions: int = 1,
    refine_top: int = REFINE_TOP,
    refine_samples: int = REFINE_SAMPLES,
) -> ConstrainedSolution:
    """Best dyadic vector over the feasible set for fixed per-pattern powers.

    Powers default to per-pattern waterfilling.  Candidates are scored with
    the high-SNR asymptote, the low-SNR asymptote, or Monte Carlo (see
    :func:`select_by_monte_carlo`); the lowest candidate index wins ties.
    The winner is then re-estimated with ``samples`` plain Monte Carlo draws.
    """
    C = config.C
    if C > MAX_ENUM_C:
        raise CapacityError(f"enumerative solver is limited to C <= {MAX_ENUM_C}")
    catalog = config.catalog()
    rho = allocate_powers_per_sap(catalog, state) if rho is None else np.asarray(rho, float)
    mode = _resolve_objective(objective, state)
    if C == 1:
        p = DyadicProbabilityVector((0,))
        mi = mi_monte_carlo([1.0], rho, catalog, state, samples, seed, partitions)
        return ConstrainedSolution(p, rho, mi, "enumerative", mode, 1)
    pref = high_snr_probs(rho, catalog, state)
    cands = enumerate_candidates(C, pref, restrict_leaves, exhaustive)
    P = np.array([c.to_list() for c in cands])
    if mode == "high_snr":
        scores = high_snr_objective(P, rho, catalog, state)
    elif mode == "low_snr":
        scores = low_snr_objective(P, rho, catalog, state)
    if mode == "mc":
        best = select_by_monte_carlo(P, rho, catalog, state, seed, select_samples, refine_top,
                                     refine_samples, partitions)
    else:
        best = int(np.argmax(scores))
    p = cands[best]
    mi = mi_monte_carlo(p.to_list(), rho, catalog, state, samples, seed, partitions)
    return ConstrainedSolution(p, rho, mi, "enumerative", mode, len(cands))


def relaxed_probs(rho, catalog: SapCatalog, state: ChannelState, relaxed: str = "high_snr"):
    """Relaxed optimum used to seed the projection; returns ``(p, flag)``.

    A singular overlap matrix in the Jensen route falls back to the
    high-SNR probabilities and sets ``flag = "singular_fallback"``.
    """
    if relaxed == "high_snr":
        return high_snr_probs(rho, catalog, state), ""
    if relaxed == "jensen":
        try:
            return jensen_optimal_probs(rho, catalog, state), ""
        except SingularMatrixError as exc:
            log.info("%s; falling back to high-SNR probabilities", exc)
            return high_snr_probs(rho, catalog, state), "singular_fallback"
    raise ValueError(f"unknown relaxed solution {relaxed!r}")


def solve_constrained_projected(
    state: ChannelState,
    config: SystemConfig,
    metric: str = "euclidean",
    relaxed: str = "high_snr",
    samples: int = 100_000,
    seed: int = 0,
    rho=None,
    partitions: int = 1,
) -> ConstrainedSolution:
    """Per-pattern waterfilling, relaxed probabilities, then projection onto dyadic vectors."""
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}")
    catalog = config.catalog()
    rho = allocate_powers_per_sap(catalog, state) if rho is None else np.asarray(rho, float)
    if config.C == 1:
        p = DyadicProbabilityVector((0,))
        mi = mi_monte_carlo([1.0], rho, catalog, state, samples, seed, partitions)
        return ConstrainedSolution(p, rho, mi, f"projected_{metric}", relaxed, 1, "", np.ones(1))
    p_relaxed, flag = relaxed_probs(rho, catalog, state, relaxed)
    proj = project_to_feasible(p_relaxed, metric)
    mi = mi_monte_carlo(proj.best.to_list(), rho, catalog, state, samples, seed, partitions)
    return ConstrainedSolution(
        proj.best, rho, mi, f"projected_{metric}", relaxed, len(proj.candidates), flag, p_relaxed
    )


def benchmark_scheme(config: SystemConfig, state: ChannelState) -> tuple[np.ndarray, np.ndarray]:
    """Classic OFDM-IM: the first ``2**floor(log2 C)`` patterns, equal probability, equal power."""
    catalog = config.catalog()
    C = len(catalog)
    m = 1 << (C.bit_length() - 1)
    p = np.zeros(C)
    p[:m] = 1.0 / m
    return p, uniform_powers(catalog, state.power_budget)
