"""Sequential constructions of the MFM: restaurant process, species
predictive rule, stick breaking, and the prior on cluster sizes."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .partitions import PoissonShifted, PriorConfig, build_vn_table, log_rising

__all__ = [
    "RngStream",
    "rng_stream",
    "RestaurantState",
    "StickDraw",
    "seating_weights",
    "species_predictive_weights",
    "sample_prior_partition",
    "stick_sample",
    "stick_sample_many",
    "size_pmf_given_t",
    "UnsupportedConfiguration",
]


class UnsupportedConfiguration(ValueError):
    pass


@dataclass(frozen=True)
class RngStream:
    """A (seed, stream) pair naming a reproducible PCG64 draw sequence."""

    seed: int
    stream: int = 0

    def generator(self):
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream,))
        return np.random.Generator(np.random.PCG64(ss))


def rng_stream(seed, stream=0):
    return RngStream(seed, stream).generator()


@dataclass(frozen=True)
class RestaurantState:
    """Block sizes (in creation order) after ``n_seated`` customers."""

    n_seated: int
    block_sizes: tuple

    def __post_init__(self):
        if sum(self.block_sizes) != self.n_seated or any(s < 1 for s in self.block_sizes):
            raise ValueError("block sizes must be positive and sum to n_seated")

    @property
    def t(self):
        return len(self.block_sizes)


@dataclass(frozen=True)
class StickDraw:
    k_tilde: int
    weights: np.ndarray


def _seating_log_weights(n_seated, sizes, prior, table):
    """Log weights for the next customer: one per block, then a new block."""
    if n_seated == 0:
        return np.array([0.0])
    sizes = np.asarray(sizes, dtype=float)
    t = len(sizes)
    n = n_seated + 1
    if prior.kind == "MFM":
        lv = table.log_value(n, t)
        if lv == -np.inf:
            raise ValueError(f"V_{n}({t}) = 0: the state is unreachable under this prior")
        new = math.log(prior.gamma) + table.log_value(n, t + 1) - lv
        return np.append(np.log(sizes + prior.gamma), new)
    return np.append(np.log(sizes), math.log(prior.alpha))


def seating_weights(state, prior, table=None):
    """Unnormalized placement weights for customer ``state.n_seated + 1``.

    Entry i is the weight of joining block i; the last entry is the weight
    of opening a new block.  ``table`` must cover ``n = n_seated + 1``.
    """
    return np.exp(_seating_log_weights(state.n_seated, state.block_sizes, prior, table))


def species_predictive_weights(distinct_counts, prior, table=None):
    """Weights on each previously seen value, then on a fresh draw from H."""
    counts = tuple(int(c) for c in distinct_counts)
    return np.exp(_seating_log_weights(sum(counts), counts, prior, table))


def _log_v_rows(n, prior, table):
    if table is not None and table.n == n and table.tmax >= n - 1:
        return table.descend()
    return build_vn_table(n, n, prior).descend()


def sample_prior_partition(n, prior, table=None, rng=None, size=None):
    """Draw partitions of [n] from the prior by running the restaurant process.

    Returns an integer label array of shape ``(n,)`` (or ``(size, n)``) with
    blocks numbered in creation order.
    """
    rng = np.random.default_rng() if rng is None else rng
    m = 1 if size is None else int(size)
    labels = np.zeros((m, n), dtype=np.int64)
    if n == 0:
        return labels[0] if size is None else labels
    counts = np.zeros((m, n), dtype=float)
    counts[:, 0] = 1.0
    t = np.ones(m, dtype=np.int64)
    rows = _log_v_rows(n, prior, table) if prior.kind == "MFM" else None
    cols = np.arange(n)
    for step in range(1, n):
        nn = step + 1
        occupied = cols[None, :] < t[:, None]
        if prior.kind == "MFM":
            w = np.where(occupied, counts + prior.gamma, 0.0)
            lv = rows[nn]
            new = prior.gamma * np.exp(lv[t + 1] - lv[t])
        else:
            w = counts.copy()
            new = np.full(m, prior.alpha)
        w[np.arange(m), t] = new
        cum = np.cumsum(w, axis=1)
        u = rng.random(m) * cum[:, -1]
        choice = (cum <= u[:, None]).sum(axis=1)
        choice = np.minimum(choice, t)
        labels[:, step] = choice
        counts[np.arange(m), choice] += 1.0
        t = t + (choice == t)
    return labels[0] if size is None else labels


def _check_stick_prior(lam):
    if isinstance(lam, PriorConfig):
        prior = lam
        if prior.kind != "MFM" or not isinstance(prior.pk, PoissonShifted) or prior.gamma != 1.0:
            raise UnsupportedConfiguration(
                "stick breaking is only available for K - 1 ~ Poisson(lam) with gamma = 1"
            )
        lam = prior.pk.lam
    if not lam > 0:
        raise ValueError("lam must be positive")
    return float(lam)


def stick_sample(lam, rng):
    """Break Exponential(lam) pieces off a unit stick until it runs out.

    ``lam`` may be a rate or an MFM ``PriorConfig`` with K - 1 ~ Poisson(lam)
    and gamma = 1; any other prior raises ``UnsupportedConfiguration``.
    """
    lam = _check_stick_prior(lam)
    pieces = []
    total = 0.0
    while True:
        e = rng.exponential(1.0 / lam)
        if total + e >= 1.0:
            pieces.append(1.0 - total)
            break
        pieces.append(e)
        total += e
    w = np.array(pieces)
    return StickDraw(len(w), w)


def stick_sample_many(lam, size, rng):
    """Vectorized ``stick_sample``.

    Returns ``(k_tilde, weights)`` where ``weights`` has shape
    ``(size, k_tilde.max())`` and is zero-padded past each draw's length.
    """
    lam = _check_stick_prior(lam)
    total = np.zeros(size)
    k = np.zeros(size, dtype=np.int64)
    active = np.ones(size, dtype=bool)
    cols = []
    while active.any():
        e = rng.exponential(1.0 / lam, size=size)
        piece = np.zeros(size)
        ends = active & (total + e >= 1.0)
        cont = active & ~ends
        piece[cont] = e[cont]
        piece[ends] = 1.0 - total[ends]
        total[cont] += e[cont]
        k[active] += 1
        active = cont
        cols.append(piece)
    return k, np.column_stack(cols)


def _compositions(n, t):
    for cuts in itertools.combinations(range(1, n), t - 1):
        bounds = (0,) + cuts + (n,)
        yield tuple(bounds[i + 1] - bounds[i] for i in range(t))


def size_pmf_given_t(n, t, prior, table=None, max_n=30):
    """Exact p(S = s | T = t) over ordered compositions s of n into t parts.

    Returns ``(compositions, probabilities)``; compositions is an int array
    of shape ``(C(n-1, t-1), t)``.
    """
    if n > max_n:
        raise ValueError(f"n={n} is above the enumeration guard {max_n}")
    if not 1 <= t <= n:
        raise ValueError(f"need 1 <= t <= n, got t={t}, n={n}")
    comps = np.array(list(_compositions(n, t)), dtype=np.int64).reshape(-1, t)
    s = comps.astype(float)
    if prior.kind == "MFM":
        logw = np.sum(log_rising(prior.gamma, s) - gammaln(s + 1), axis=1)
    else:
        logw = -np.sum(np.log(s), axis=1)
    w = np.exp(logw - logw.max())
    return comps, w / w.sum()
