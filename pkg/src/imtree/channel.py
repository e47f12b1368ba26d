"""Frequency-domain OFDM-IM channel for one group of N subcarriers.

Conditioned on pattern ``i``, subcarrier ``l`` outputs
``sqrt(g_l) exp(j theta_l) X_l + Z_l`` when ``l`` is active and ``Z_l``
otherwise, with ``Z_l ~ CN(0, noise_var)``.  With Gaussian inputs
``X_l ~ CN(0, rho[i, l])`` each output is zero-mean complex Gaussian with
variance ``xi[i, l] = g_l rho[i, l] + noise_var`` on active subcarriers.
All densities are in nats.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp


@dataclass(frozen=True)
class SystemConfig:
    N: int
    K: int
    allow_full: bool = False

    def __post_init__(self):
        if self.N < 1 or self.K < 1:
            raise ValueError("N and K must be positive")
        if self.K > self.N or (self.K == self.N and not self.allow_full):
            raise ValueError(
                f"need K < N (got N={self.N}, K={self.K}); pass allow_full=True for plain OFDM"
            )

    @property
    def C(self) -> int:
        return math.comb(self.N, self.K)

    def catalog(self) -> "SapCatalog":
        return SapCatalog.for_config(self)


@dataclass(frozen=True)
class SapCatalog:
    """Activation patterns as 0-based subcarrier index tuples, in lexicographic order."""

    N: int
    sets: tuple[tuple[int, ...], ...]

    @classmethod
    def for_config(cls, config: SystemConfig) -> "SapCatalog":
        return cls(config.N, tuple(itertools.combinations(range(config.N), config.K)))

    def __len__(self) -> int:
        return len(self.sets)

    def mask(self) -> np.ndarray:
        """Boolean ``C x N`` activity matrix."""
        m = np.zeros((len(self.sets), self.N), dtype=bool)
        for i, s in enumerate(self.sets):
            m[i, list(s)] = True
        return m

    def label(self, i: int) -> str:
        return "{" + ",".join(str(l + 1) for l in self.sets[i]) + "}"


@dataclass(frozen=True)
class ChannelState:
    gains: np.ndarray
    noise_var: float
    power_budget: float
    phases: np.ndarray = field(default=None)

    def __post_init__(self):
        gains = np.asarray(self.gains, dtype=float)
        if gains.ndim != 1 or np.any(gains < 0):
            raise ValueError("gains must be a nonnegative vector")
        phases = np.zeros_like(gains) if self.phases is None else np.asarray(self.phases, float)
        if phases.shape != gains.shape:
            raise ValueError("phases and gains lengths differ")
        if not self.noise_var > 0 or not self.power_budget > 0:
            raise ValueError("noise_var and power_budget must be positive")
        gains.setflags(write=False)
        phases.setflags(write=False)
        object.__setattr__(self, "gains", gains)
        object.__setattr__(self, "phases", phases)

    @property
    def N(self) -> int:
        return self.gains.size

    @property
    def snr(self) -> float:
        """Average transmit SNR per subcarrier, ``P / (N sigma^2)``."""
        return self.power_budget / (self.N * self.noise_var)

    @property
    def snr_db(self) -> float:
        return 10 * math.log10(self.snr)

    @property
    def coefficients(self) -> np.ndarray:
        return np.sqrt(self.gains) * np.exp(1j * self.phases)

    @classmethod
    def from_snr_db(cls, gains, snr_db: float, noise_var: float = 1.0, phases=None):
        gains = np.asarray(gains, dtype=float)
        power = gains.size * noise_var * 10 ** (snr_db / 10)
        return cls(gains, noise_var, power, phases)

    def with_snr_db(self, snr_db: float) -> "ChannelState":
        return ChannelState.from_snr_db(self.gains, snr_db, self.noise_var, self.phases)

    def to_json(self) -> str:
        return json.dumps(
            {
                "gains": self.gains.tolist(),
                "phases": self.phases.tolist(),
                "noise_var": self.noise_var,
                "power_budget": self.power_budget,
            }
        )


def load_channel_state(path: str | Path) -> ChannelState:
    """Read a channel state from JSON or CSV.

    JSON keys: ``gains`` (linear), optional ``phases`` (radians), and either
    ``noise_var`` + ``power_budget`` or ``snr_db`` (with optional
    ``noise_var``, default 1).  CSV: columns ``gain`` and optional ``phase``,
    one row per subcarrier, with ``# snr_db=...`` or
    ``# noise_var=...,power_budget=...`` comment lines.
    """
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".json":
        data = json.loads(text)
        meta = data
        gains = data["gains"]
        phases = data.get("phases")
    else:
        meta = {}
        rows = []
        for line in text.splitlines():
            if line.startswith("#"):
                for item in line[1:].split(","):
                    if "=" in item:
                        k, v = item.split("=", 1)
                        meta[k.strip()] = float(v)
            elif line.strip():
                rows.append(line)
        reader = csv.DictReader(io.StringIO("\n".join(rows)))
        recs = list(reader)
        gains = [float(r["gain"]) for r in recs]
        phases = [float(r["phase"]) for r in recs] if recs and "phase" in recs[0] else None
    noise_var = float(meta.get("noise_var", 1.0))
    if "snr_db" in meta:
        return ChannelState.from_snr_db(gains, float(meta["snr_db"]), noise_var, phases)
    return ChannelState(np.asarray(gains, float), noise_var, float(meta["power_budget"]), phases)


def exp_decay_gains(N: int, eta: float) -> np.ndarray:
    """Gains ``eta**(l-1)`` for ``l = 1..N``."""
    if not 0 < eta <= 1:
        raise ValueError(f"eta must lie in (0, 1], got {eta}")
    return eta ** np.arange(N, dtype=float)


def validate_powers(rho: np.ndarray, catalog: SapCatalog, budget: float) -> np.ndarray:
    rho = np.asarray(rho, dtype=float)
    if rho.shape != (len(catalog), catalog.N):
        raise ValueError(f"power matrix must be {len(catalog)}x{catalog.N}")
    if np.any(rho < 0):
        raise ValueError("negative power")
    if np.any(rho[~catalog.mask()] != 0):
        raise ValueError("power on an inactive subcarrier")
    if np.any(rho.sum(axis=1) > budget + 1e-9):
        raise ValueError("per-pattern power budget exceeded")
    return rho


def uniform_powers(catalog: SapCatalog, budget: float) -> np.ndarray:
    mask = catalog.mask()
    return mask * (budget / mask.sum(axis=1, keepdims=True))


def output_variances(rho: np.ndarray, catalog: SapCatalog, state: ChannelState) -> np.ndarray:
    """``C x N`` matrix of per-subcarrier output variances ``xi``."""
    rho = np.asarray(rho, dtype=float)
    xi = state.gains[None, :] * rho + state.noise_var
    if np.any(xi <= 0):
        raise ValueError("zero output variance")
    return xi


def conditional_log_densities(y: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """``log f(y | U = i)`` for a batch ``y`` of shape ``(M, N)``; returns ``(M, C)``."""
    y2 = np.abs(np.atleast_2d(y)) ** 2
    return -(y2 @ (1.0 / xi).T) - np.sum(np.log(np.pi * xi), axis=1)[None, :]


def conditional_log_density(y, i: int, rho, catalog: SapCatalog, state: ChannelState) -> float:
    xi = output_variances(rho, catalog, state)
    return float(conditional_log_densities(np.asarray(y, complex)[None, :], xi[i : i + 1])[0, 0])


def mixture_log_densities(y: np.ndarray, p: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """``log sum_i p_i f(y | U = i)`` for a batch of outputs; zero-probability terms skipped."""
    p = np.asarray(p, dtype=float)
    keep = p > 0
    if not np.any(keep):
        raise ValueError("all pattern probabilities are zero")
    cond = conditional_log_densities(y, xi[keep])
    return logsumexp(cond + np.log(p[keep])[None, :], axis=1)


def mixture_log_density(y, p, rho, catalog: SapCatalog, state: ChannelState) -> float:
    xi = output_variances(rho, catalog, state)
    return float(mixture_log_densities(np.asarray(y, complex)[None, :], p, xi)[0])


def standard_complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * math.sqrt(0.5)


def sample_outputs(
    p, rho, catalog: SapCatalog, state: ChannelState, rng: np.random.Generator, size: int
) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``size`` pairs ``(U, Y)``; returns index array ``(size,)`` and outputs ``(size, N)``."""
    p = np.asarray(p, dtype=float)
    u = rng.choice(p.size, size=size, p=p / p.sum())
    x = standard_complex_normal(rng, (size, state.N)) * np.sqrt(np.asarray(rho)[u])
    z = standard_complex_normal(rng, (size, state.N)) * math.sqrt(state.noise_var)
    y = state.coefficients[None, :] * x + z
    return u, y


def sample_output(p, rho, catalog, state, rng) -> tuple[int, np.ndarray]:
    u, y = sample_outputs(p, rho, catalog, state, rng, 1)
    return int(u[0]), y[0]
