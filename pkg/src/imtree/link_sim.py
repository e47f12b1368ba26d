"""Block-error-rate simulation with finite constellations and ML detection.

A block is one group of N subcarriers carrying one activation pattern and K
constellation symbols.  Detection is exhaustive over every (pattern,
symbol tuple) candidate of the codebook's active patterns; a block error is
any mismatch in the pair.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .channel import ChannelState, SapCatalog, SystemConfig, exp_decay_gains, uniform_powers
from .optimize import solve_constrained_enumerative
from .rng import run_partitioned

log = logging.getLogger(__name__)

MODES = ("condition_one", "condition_two", "benchmark")
DEFAULT_BLOCK_CAP = 10_000_000
DEFAULT_TARGET_ERRORS = 1000
CHUNK = 20_000


@dataclass(frozen=True)
class Constellation:
    name: str
    points: np.ndarray  # index = Gray label read as an integer
    bits_per_symbol: int

    @classmethod
    def named(cls, name: str) -> "Constellation":
        if name == "bpsk":
            return cls(name, np.array([1.0 + 0j, -1.0 + 0j]), 1)
        if name == "qpsk":
            # label b1 b0 -> (1 - 2 b1) + j (1 - 2 b0); neighbours differ in one bit
            pts = [complex(1 - 2 * (k >> 1), 1 - 2 * (k & 1)) / math.sqrt(2) for k in range(4)]
            return cls(name, np.array(pts), 2)
        raise ValueError(f"unknown constellation {name!r}; expected bpsk or qpsk")

    def __len__(self) -> int:
        return self.points.size


@dataclass(frozen=True)
class BlerPoint:
    snr_db: float
    blocks: int
    block_errors: int
    bler: float
    seed: int
    ci_low: float = 0.0
    ci_high: float = 1.0
    partial: bool = False


def wilson_interval(errors: int, blocks: int, z: float = 1.959963984540054) -> tuple[float, float]:
    if blocks == 0:
        return 0.0, 1.0
    phat = errors / blocks
    denom = 1 + z * z / blocks
    centre = (phat + z * z / (2 * blocks)) / denom
    half = z * math.sqrt(phat * (1 - phat) / blocks + z * z / (4 * blocks * blocks)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


def transmit_block(sap: int, symbols, rho, catalog: SapCatalog, state: ChannelState,
                   rng: np.random.Generator | None = None) -> np.ndarray:
    """Received vector for one block; ``rng=None`` gives the noiseless observation."""
    active = catalog.sets[sap]
    symbols = np.asarray(symbols, dtype=complex)
    if symbols.shape != (len(active),):
        raise ValueError(f"need {len(active)} symbols, got shape {symbols.shape}")
    x = np.zeros(state.N, dtype=complex)
    x[list(active)] = np.sqrt(np.asarray(rho, float)[sap, list(active)]) * symbols
    y = state.coefficients * x
    if rng is not None:
        y = y + (rng.standard_normal(state.N) + 1j * rng.standard_normal(state.N)) * math.sqrt(
            state.noise_var / 2
        )
    return y


class CandidateSet:
    """All (pattern, symbol-index tuple) pairs for the given active patterns.

    Order is pattern order, then symbol tuples lexicographically; ML ties go
    to the earliest candidate.
    """

    def __init__(self, saps, rho, catalog: SapCatalog, state: ChannelState, constellation: Constellation):
        saps = list(saps)
        if not saps:
            raise ValueError("empty candidate set")
        K = len(catalog.sets[saps[0]])
        tuples = list(itertools.product(range(len(constellation)), repeat=K))
        self.sap = np.repeat(saps, len(tuples))
        self.symbols = np.array(tuples * len(saps), dtype=int).reshape(-1, K)
        self.K = K
        rho = np.asarray(rho, float)
        sig = np.zeros((self.sap.size, state.N), dtype=complex)
        for c, (s, sym) in enumerate(zip(self.sap, self.symbols)):
            cols = list(catalog.sets[s])
            sig[c, cols] = np.sqrt(rho[s, cols]) * constellation.points[sym]
        self.signals = sig * state.coefficients[None, :]
        self.energy = np.sum(np.abs(self.signals) ** 2, axis=1)

    def __len__(self) -> int:
        return self.sap.size

    def detect(self, y: np.ndarray) -> np.ndarray:
        """Indices of the ML candidates for a batch ``y`` of shape ``(M, N)``."""
        y = np.atleast_2d(y)
        metric = self.energy[None, :] - 2 * np.real(y @ np.conj(self.signals).T)
        return np.argmin(metric, axis=1)


def ml_detect(y, candidates: CandidateSet) -> tuple[int, tuple[int, ...]]:
    c = int(candidates.detect(np.asarray(y, complex)[None, :])[0])
    return int(candidates.sap[c]), tuple(int(s) for s in candidates.symbols[c])


def simulate_errors(p, rho, catalog: SapCatalog, state: ChannelState, constellation: Constellation,
                    rng: np.random.Generator, blocks: int) -> int:
    """Block errors in ``blocks`` transmissions with patterns drawn i.i.d. from ``p``."""
    p = np.asarray(p, float)
    active = np.flatnonzero(p > 0)
    cands = CandidateSet(active, rho, catalog, state, constellation)
    per_sap = len(constellation) ** cands.K
    errors = 0
    done = 0
    while done < blocks:
        m = min(CHUNK, blocks - done)
        a = rng.choice(active.size, size=m, p=p[active] / p[active].sum())
        sym = rng.integers(len(constellation), size=(m, cands.K))
        flat = np.ravel_multi_index(tuple(sym.T), (len(constellation),) * cands.K) if cands.K else 0
        sent = a * per_sap + flat
        noise = (rng.standard_normal((m, state.N)) + 1j * rng.standard_normal((m, state.N))) * math.sqrt(
            state.noise_var / 2
        )
        y = cands.signals[sent] + noise
        errors += int(np.count_nonzero(cands.detect(y) != sent))
        done += m
    return errors


def measure_bler(p, rho, catalog, state, constellation, target_errors=DEFAULT_TARGET_ERRORS,
                 seed=0, partitions=1, block_cap=DEFAULT_BLOCK_CAP, threads=None) -> BlerPoint:
    """Simulate in rounds until ``target_errors`` block errors or ``block_cap`` blocks.

    Each round runs ``partitions`` independent streams derived from
    ``(seed, round)``, so counts depend only on the seed and the partition
    count.  ``seed`` may be an int or a sequence of ints.  Round sizes
    double from ``CHUNK`` blocks.
    """
    blocks = errors = 0
    size = CHUNK
    rnd = 0
    while errors < target_errors and blocks < block_cap:
        size = min(size, block_cap - blocks)
        counts = run_partitioned(
            lambda g, c: simulate_errors(p, rho, catalog, state, constellation, g, c),
            size, seed=[*np.atleast_1d(seed).tolist(), rnd], partitions=partitions, threads=threads,
        )
        errors += sum(counts)
        blocks += size
        rnd += 1
        size *= 2
    lo, hi = wilson_interval(errors, blocks)
    partial = errors < target_errors
    if partial:
        log.warning("reached the block cap with %d of %d errors at %.1f dB", errors, target_errors, state.snr_db)
    return BlerPoint(state.snr_db, blocks, errors, errors / blocks, seed, lo, hi, partial)


def select_probabilities(mode: str, config: SystemConfig, state: ChannelState, rho,
                         seed: int = 0, select_samples: int = 4000, partitions: int = 1) -> np.ndarray:
    """Pattern distribution for a BLER mode at one SNR (powers fixed to ``rho``)."""
    if mode == "benchmark":
        C = config.C
        m = 1 << (C.bit_length() - 1)
        p = np.zeros(C)
        p[:m] = 1.0 / m
        return p
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    restrict = config.C if mode == "condition_two" else None
    sol = solve_constrained_enumerative(
        state, config, objective="mc", samples=100, seed=seed, rho=rho,
        select_samples=select_samples, restrict_leaves=restrict, partitions=partitions,
    )
    return np.array(sol.p.to_list())


def draw_phases(N: int, seed: int) -> np.ndarray:
    """Channel phases uniform on [0, 2 pi), one draw per experiment."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0x9E3779B9])))
    return rng.uniform(0, 2 * math.pi, N)


def run_bler(config: SystemConfig, eta: float, snr_grid, mode: str, constellation: Constellation,
             target_errors: int = DEFAULT_TARGET_ERRORS, seed: int = 0, partitions: int = 1,
             block_cap: int = DEFAULT_BLOCK_CAP, gains=None, select_samples: int = 4000,
             threads=None) -> list[tuple[BlerPoint, np.ndarray]]:
    """BLER versus SNR with uniform power; returns ``(point, p)`` per grid value.

    Gains default to ``eta**(l-1)``.  Phases are drawn once from ``seed`` and
    held across the grid.  ``condition_one`` optimizes ``p`` over the whole
    feasible set, ``condition_two`` over trees with exactly ``C`` leaves, using
    the enumerative solver with the Monte Carlo objective at each SNR.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    gains = exp_decay_gains(config.N, eta) if gains is None else np.asarray(gains, float)
    phases = draw_phases(config.N, seed)
    catalog = config.catalog()
    out = []
    for k, snr in enumerate(snr_grid):
        state = ChannelState.from_snr_db(gains, snr, phases=phases)
        rho = uniform_powers(catalog, state.power_budget)
        p = select_probabilities(mode, config, state, rho, seed, select_samples, partitions)
        pt = measure_bler(p, rho, catalog, state, constellation, target_errors, [seed, k],
                          partitions, block_cap, threads)
        out.append((BlerPoint(float(snr), pt.blocks, pt.block_errors, pt.bler, seed, pt.ci_low,
                              pt.ci_high, pt.partial), p))
    return out


def bpsk_awgn_bler(gain: float, power: float, noise_var: float) -> float:
    """Closed-form BPSK error probability ``Q(sqrt(2 g rho / sigma^2))``."""
    return float(norm.sf(math.sqrt(2 * gain * power / noise_var)))
