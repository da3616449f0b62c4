"""Partition distribution of the mixture of finite mixtures.

Everything here works in log space.  Rising factorials are computed as
``gammaln(x + m) - gammaln(x)`` and falling factorials as
``gammaln(k + 1) - gammaln(k - t + 1)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, hyp1f1, logsumexp
from scipy.stats import poisson

__all__ = [
    "Geometric",
    "PoissonShifted",
    "UniformRange",
    "TablePk",
    "PriorConfig",
    "VnTable",
    "PartitionShape",
    "build_vn_table",
    "eppf_log",
    "gen_stirling_log",
    "gen_stirling_log_row",
    "t_given_k_pmf",
    "k_given_t_pmf",
    "k_posterior_from_t",
    "vn_recursion_residual",
    "poisson_log_v0",
    "log_rising",
    "log_falling",
    "log_sub",
    "MFMWeights",
    "DPMWeights",
    "make_weights",
]

NEG_INF = -np.inf


def log_rising(x, m):
    """log of x (x+1) ... (x+m-1)."""
    return gammaln(np.add(x, m)) - gammaln(x)


def log_falling(k, t):
    """log of k (k-1) ... (k-t+1); -inf where k < t."""
    k = np.asarray(k, dtype=float)
    t = np.asarray(t, dtype=float)
    with np.errstate(invalid="ignore"):
        out = gammaln(k + 1) - gammaln(np.maximum(k - t + 1, 1.0))
    return np.where(k >= t, out, NEG_INF)


def log_sub(la, lb):
    """Signed log-space subtraction.

    Returns ``(sign, log|e^la - e^lb|)`` using the larger argument as the
    pivot so that no information about the sign is lost.
    """
    if la == lb:
        return 0, NEG_INF
    if la > lb:
        return 1, la + math.log1p(-math.exp(lb - la))
    return -1, lb + math.log1p(-math.exp(la - lb))


# ---------------------------------------------------------------------------
# priors on the number of components


@dataclass(frozen=True)
class Geometric:
    """p(k) = (1 - r)^(k-1) r on k >= 1."""

    r: float

    def __post_init__(self):
        if not 0 < self.r < 1:
            raise ValueError(f"Geometric requires 0 < r < 1, got {self.r}")

    support_max = None

    def logpmf(self, k):
        k = np.asarray(k, dtype=float)
        out = (k - 1) * math.log1p(-self.r) + math.log(self.r)
        return np.where(k >= 1, out, NEG_INF)

    def log_tail(self, k):
        """log P(K >= k)."""
        k = np.asarray(k, dtype=float)
        return np.where(k <= 1, 0.0, (k - 1) * math.log1p(-self.r))


@dataclass(frozen=True)
class PoissonShifted:
    """K - 1 ~ Poisson(lam)."""

    lam: float

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"PoissonShifted requires lam > 0, got {self.lam}")

    support_max = None

    def logpmf(self, k):
        k = np.asarray(k, dtype=float)
        return np.where(k >= 1, poisson.logpmf(k - 1, self.lam), NEG_INF)

    def log_tail(self, k):
        k = np.asarray(k, dtype=float)
        return np.where(k <= 1, 0.0, poisson.logsf(k - 2, self.lam))


@dataclass(frozen=True)
class UniformRange:
    """Uniform on {kmin, ..., kmax}."""

    kmin: int
    kmax: int

    def __post_init__(self):
        if not 1 <= self.kmin <= self.kmax:
            raise ValueError(f"UniformRange requires 1 <= kmin <= kmax, got {self.kmin}, {self.kmax}")

    @property
    def support_max(self):
        return self.kmax

    def logpmf(self, k):
        k = np.asarray(k, dtype=float)
        inside = (k >= self.kmin) & (k <= self.kmax)
        return np.where(inside, -math.log(self.kmax - self.kmin + 1), NEG_INF)

    def log_tail(self, k):
        k = np.asarray(k, dtype=float)
        count = self.kmax - np.maximum(k, self.kmin) + 1
        with np.errstate(divide="ignore"):
            return np.where(count > 0, np.log(np.maximum(count, 1)) - math.log(self.kmax - self.kmin + 1), NEG_INF)


@dataclass(frozen=True)
class TablePk:
    """Explicit pmf; ``pmf[i]`` is p(K = i + 1)."""

    pmf: tuple

    def __post_init__(self):
        p = np.asarray(self.pmf, dtype=float)
        if p.ndim != 1 or len(p) == 0 or np.any(p < 0):
            raise ValueError("TablePk needs a nonempty vector of nonnegative probabilities")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError(f"TablePk entries sum to {p.sum()!r}, not 1")
        object.__setattr__(self, "pmf", tuple(float(v) for v in p))

    @property
    def support_max(self):
        return len(self.pmf)

    def logpmf(self, k):
        k = np.asarray(k)
        p = np.concatenate([[0.0], self.pmf, [0.0]])
        idx = np.clip(k, 0, len(self.pmf) + 1).astype(int)
        with np.errstate(divide="ignore"):
            return np.log(p[idx])

    def log_tail(self, k):
        tails = np.concatenate([[1.0], 1.0 - np.concatenate([[0.0], np.cumsum(self.pmf)])[:-1], [0.0]])
        # tails[k] = P(K >= k) for k = 1..len, 0 after
        tails = np.maximum(tails, 0.0)
        k = np.asarray(k)
        idx = np.clip(k, 0, len(self.pmf) + 1).astype(int)
        with np.errstate(divide="ignore"):
            return np.log(tails[idx])


@dataclass(frozen=True)
class PriorConfig:
    """Partition prior: an MFM (gamma, pk) or a DPM (alpha).

    For the DPM, ``alpha_prior="exponential"`` puts an Exponential(1)
    hyperprior on alpha and ``alpha`` is then only the initial value.
    """

    kind: str
    gamma: float = 1.0
    pk: object = None
    alpha: float = 1.0
    alpha_prior: str | None = None

    def __post_init__(self):
        if self.kind not in ("MFM", "DPM"):
            raise ValueError(f"kind must be 'MFM' or 'DPM', got {self.kind!r}")
        if self.kind == "MFM":
            if not self.gamma > 0:
                raise ValueError("gamma must be positive")
            if self.pk is None:
                raise ValueError("an MFM needs a prior on the number of components")
        else:
            if not self.alpha > 0:
                raise ValueError("alpha must be positive")
            if self.alpha_prior not in (None, "exponential"):
                raise ValueError(f"unsupported alpha hyperprior {self.alpha_prior!r}")

    @classmethod
    def mfm(cls, pk, gamma=1.0):
        return cls("MFM", gamma=gamma, pk=pk)

    @classmethod
    def dpm(cls, alpha=1.0, alpha_prior=None):
        return cls("DPM", alpha=alpha, alpha_prior=alpha_prior)


@dataclass(frozen=True)
class PartitionShape:
    """Block sizes of a partition, stored in decreasing order."""

    sizes: tuple

    def __post_init__(self):
        sizes = tuple(sorted((int(s) for s in self.sizes), reverse=True))
        if any(s < 1 for s in sizes):
            raise ValueError("block sizes must be positive")
        object.__setattr__(self, "sizes", sizes)

    @property
    def n(self):
        return sum(self.sizes)

    @property
    def t(self):
        return len(self.sizes)

    @classmethod
    def from_labels(cls, labels):
        _, counts = np.unique(np.asarray(labels), return_counts=True)
        return cls(tuple(counts))


# ---------------------------------------------------------------------------
# V_n(t)


@dataclass(frozen=True)
class VnTable:
    """log V_{n'}(t) for n' in {n, n+1} and 0 <= t <= min(tmax + 1, n').

    ``log_v[0]`` is the row for ``n`` and ``log_v[1]`` the row for ``n + 1``;
    entries outside the valid range are NaN.
    """

    n: int
    tmax: int
    gamma: float
    pk: object
    log_v: np.ndarray = field(repr=False)
    tail_tol: float = 1e-12
    terms: int = 0

    def __call__(self, n, t):
        return self.log_value(n, t)

    def log_value(self, n, t):
        row = n - self.n
        if row not in (0, 1) or t < 0 or t >= self.log_v.shape[1] or np.isnan(self.log_v[row, t]):
            raise ValueError(f"V table (n={self.n}, tmax={self.tmax}) has no entry for V_{n}({t})")
        return float(self.log_v[row, t])

    def covers(self, n, t):
        row = n - self.n
        return row in (0, 1) and 0 <= t < self.log_v.shape[1] and not np.isnan(self.log_v[row, t])

    def descend(self):
        """Rows V_m(t) for m = 1..n, obtained by running the recursion downward.

        ``V_m(t) = gamma V_{m+1}(t+1) + (m + gamma t) V_{m+1}(t)`` only adds
        nonnegative terms, so the descent is stable.  Row ``m`` is valid for
        ``t <= m`` provided the table was built with ``tmax >= n - 1``.
        Returns a dict mapping m to an array over t = 0..m.
        """
        if self.tmax < self.n - 1:
            raise ValueError("descending the recursion needs tmax >= n - 1")
        g = self.gamma
        rows = {self.n: self.log_v[0, : self.n + 1].copy()}
        cur = rows[self.n]
        for m in range(self.n - 1, 0, -1):
            t = np.arange(m + 1)
            nxt = np.logaddexp(math.log(g) + cur[1 : m + 2], np.log(m + g * t) + cur[: m + 1])
            rows[m] = nxt
            cur = nxt
        return rows


def _log_terms(k, ts, n, gamma, logpk):
    """log of k_(t) / (gamma k)^(n) p_K(k), shape (len(ts), len(k))."""
    lf = log_falling(k[None, :], ts[:, None])
    lr = gammaln(gamma * k + n) - gammaln(gamma * k)
    return lf - lr[None, :] + logpk[None, :]


def _log_tail_bound(kstart, ts, n, gamma, pk):
    """Bound on the log of the series remainder from k = kstart onward.

    Uses k_(t)/(gamma k)^(n) <= k^(t-n) / gamma^n <= kstart^(t-n) / gamma^n
    for t <= n, times the remaining prior mass P(K >= kstart).
    """
    return (ts - n) * math.log(kstart) - n * math.log(gamma) + float(pk.log_tail(kstart))


def build_vn_table(n, tmax, prior, tail_tol=1e-12, max_terms=10_000_000):
    """Tabulate log V_n(t) and log V_{n+1}(t).

    Parameters
    ----------
    n : int
        Number of items.
    tmax : int
        Largest cluster count needed; rows are stored up to ``tmax + 1``.
    prior : PriorConfig
        Must be an MFM prior.
    tail_tol : float
        Each series is truncated once the bound on its remainder is below
        ``tail_tol`` times the partial sum.
    max_terms : int
        Give up (and raise) if the series has not converged by then.
    """
    if prior.kind != "MFM":
        raise ValueError("V_n(t) is only defined for MFM priors")
    if n < 1 or tmax < 1:
        raise ValueError("need n >= 1 and tmax >= 1")
    if tmax > n:
        raise ValueError(f"tmax={tmax} exceeds n={n}")
    gamma, pk = prior.gamma, prior.pk
    width = tmax + 2
    out = np.full((2, width), np.nan)
    used = 0
    for row, nn in enumerate((n, n + 1)):
        ts = np.arange(min(width, nn + 1), dtype=float)
        acc = np.full(len(ts), NEG_INF)
        k0, chunk = 1, 256
        kcap = pk.support_max
        while True:
            k1 = k0 + chunk
            if kcap is not None:
                k1 = min(k1, kcap + 1)
            k = np.arange(k0, k1, dtype=float)
            if len(k):
                terms = _log_terms(k, ts, nn, gamma, pk.logpmf(k))
                acc = np.logaddexp(acc, logsumexp(terms, axis=1))
            k0 = k1
            if kcap is not None and k0 > kcap:
                break
            bound = _log_tail_bound(k0, ts, nn, gamma, pk)
            with np.errstate(invalid="ignore"):
                done = bound < math.log(tail_tol) + acc
            if np.all(done):
                break
            if k0 > max_terms:
                raise ValueError(
                    f"V_{nn}(t) series failed to converge within {max_terms} terms; "
                    "the prior on K has too heavy a tail"
                )
            chunk *= 2
        used = max(used, k0 - 1)
        out[row, : len(ts)] = acc
    return VnTable(n=n, tmax=tmax, gamma=gamma, pk=pk, log_v=out, tail_tol=tail_tol, terms=used)


def poisson_log_v0(n, lam):
    """Closed form of log V_n(0) when K - 1 ~ Poisson(lam) and gamma = 1."""
    log_tail = float(poisson.logsf(n - 1, lam))
    if not log_tail > -600.0:
        # P(X >= n) = pmf(n) 1F1(1; n + 1; lam), which stays representable
        log_tail = float(poisson.logpmf(n, lam)) + math.log(hyp1f1(1.0, n + 1.0, lam))
    return -n * math.log(lam) + log_tail


def vn_recursion_residual(table, prior=None):
    """Largest residual of V_{n+1}(t+1) = V_n(t)/g - (n/g + t) V_{n+1}(t).

    Checked for every t where all three entries are tabulated.  The
    residual is |lhs - rhs| relative to the larger of the two subtracted
    terms: the subtraction cancels by a factor that grows with n (about
    1e9 at n = 1000), so measuring against the left side would report that
    conditioning rather than the accuracy of the entries.
    """
    g = table.gamma if prior is None else prior.gamma
    n = table.n
    worst = 0.0
    for t in range(0, min(table.tmax, n) + 1):
        if not (table.covers(n + 1, t + 1) and table.covers(n, t) and table.covers(n + 1, t)):
            continue
        lhs = table.log_value(n + 1, t + 1)
        a = table.log_value(n, t) - math.log(g)
        b = math.log(n / g + t) + table.log_value(n + 1, t)
        if a == NEG_INF and b == NEG_INF:
            sign, rhs = 0, NEG_INF
        else:
            sign, rhs = log_sub(a, b)
        scale = max(a, b)
        if scale == NEG_INF:
            res = 0.0 if lhs == NEG_INF else 1.0
        else:
            res = abs(sign * math.exp(rhs - scale) - math.exp(lhs - scale))
        worst = max(worst, res)
    return worst


# ---------------------------------------------------------------------------
# EPPF and relatives


def eppf_log(shape, prior, table=None):
    """log p(C) for a partition with the given block sizes."""
    sizes = np.sort(np.asarray(shape.sizes if isinstance(shape, PartitionShape) else shape, dtype=float))
    n, t = int(sizes.sum()), len(sizes)
    if prior.kind == "MFM":
        if table is None:
            raise ValueError("an MFM EPPF needs a V table")
        return table.log_value(n, t) + float(np.sum(log_rising(prior.gamma, sizes)))
    a = prior.alpha
    return t * math.log(a) - float(log_rising(a, n)) + float(np.sum(gammaln(sizes)))


def gen_stirling_log_row(n, gamma):
    """log S_gamma(n, t) for t = 0..n (t = 0 is -inf for n >= 1)."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    lg = math.log(gamma)
    row = np.array([0.0])
    for m in range(n):
        t = np.arange(m + 2, dtype=float)
        prev = np.concatenate([row, [NEG_INF]])
        shifted = np.concatenate([[NEG_INF], row])
        with np.errstate(divide="ignore"):
            row = np.logaddexp(lg + shifted, np.log(m + gamma * t) + prev)
    return row


def gen_stirling_log(n, t, gamma):
    """log of the sum over partitions of [n] into t blocks of prod gamma^(|c|)."""
    if not 1 <= t <= n:
        raise ValueError(f"need 1 <= t <= n, got t={t}, n={n}")
    return float(gen_stirling_log_row(n, gamma)[t])


def t_given_k_pmf(n, k, gamma):
    """p(t | k); array indexed by t = 0..min(n, k)."""
    if k < 1 or n < 1:
        raise ValueError("need n >= 1 and k >= 1")
    top = min(n, k)
    t = np.arange(top + 1)
    logp = log_falling(k, t) - float(log_rising(gamma * k, n)) + gen_stirling_log_row(n, gamma)[: top + 1]
    p = np.exp(logp)
    p[0] = 0.0
    return p


def _default_kmax(t, n, prior, log_vnt, tol=1e-10, cap=10_000):
    pk = prior.pk
    if pk.support_max is not None:
        return int(pk.support_max)
    ks = np.arange(max(t, 1) + 1, cap + 1, dtype=float)
    bound = (t - n) * np.log(ks) - n * math.log(prior.gamma) + pk.log_tail(ks) - log_vnt
    ok = np.flatnonzero(bound < math.log(tol))
    return int(ks[ok[0]] - 1) if len(ok) else cap


def k_given_t_pmf(t, n, prior, table, kmax=None):
    """p(k | t); array indexed by k = 0..kmax."""
    if not 1 <= t <= n:
        raise ValueError(f"need 1 <= t <= n, got t={t}, n={n}")
    log_vnt = table.log_value(n, t)
    if log_vnt == NEG_INF:
        raise ValueError(f"V_{n}({t}) = 0, so p(k | t={t}) is undefined")
    if kmax is None:
        kmax = _default_kmax(t, n, prior, log_vnt)
    k = np.arange(1, kmax + 1, dtype=float)
    logp = log_falling(k, t) - log_rising(prior.gamma * k, n) + prior.pk.logpmf(k) - log_vnt
    return np.concatenate([[0.0], np.exp(logp)])


def k_posterior_from_t(t_pmf, n, prior, table, kmax=None):
    """Turn a pmf over the number of clusters into one over components.

    ``t_pmf`` is indexed by t (entry 0 ignored).  Returns an array indexed
    by k = 0..kmax.
    """
    t_pmf = np.asarray(t_pmf, dtype=float)
    if abs(t_pmf.sum() - 1.0) > 1e-6:
        raise ValueError(f"t pmf sums to {t_pmf.sum()}, not 1")
    support = [t for t in range(1, len(t_pmf)) if t_pmf[t] > 0]
    if support and support[-1] > n:
        raise ValueError("t pmf has mass above n")
    if kmax is None:
        kmax = max(_default_kmax(t, n, prior, table.log_value(n, t)) for t in support)
    out = np.zeros(kmax + 1)
    for t in support:
        out += t_pmf[t] * k_given_t_pmf(t, n, prior, table, kmax=kmax)
    return out


# ---------------------------------------------------------------------------
# sequential weights shared by the restaurant process and the samplers


class MFMWeights:
    """Seating weights for an MFM with n items.

    Holds its own V table and replaces it (never mutates it) when a larger
    cluster count is requested.
    """

    kind = "MFM"

    def __init__(self, prior, n, tmax=None, table=None):
        self.prior = prior
        self.gamma = prior.gamma
        self.log_gamma = math.log(prior.gamma)
        self.n = n
        if table is None:
            table = build_vn_table(n, tmax or min(n, 100), prior)
        self.table = table
        self._cache_new = {}

    def _grow(self, t):
        tmax = min(self.n, max(2 * self.table.tmax, t))
        self.table = build_vn_table(self.n, tmax, self.prior, tail_tol=self.table.tail_tol)
        self._cache_new = {}

    def log_v(self, t, n=None):
        n = self.n if n is None else n
        if not self.table.covers(n, t):
            self._grow(t)
        return self.table.log_value(n, t)

    def log_existing(self, sizes):
        return np.log(np.asarray(sizes, dtype=float) + self.gamma)

    def log_existing1(self, size):
        return math.log(size + self.gamma)

    def log_new(self, t):
        """log of gamma V_n(t+1)/V_n(t), the new-cluster weight with t clusters."""
        v = self._cache_new.get(t)
        if v is None:
            hi = self.log_v(t + 1)
            v = self.log_gamma + hi - self.log_v(t) if hi > NEG_INF else NEG_INF
            self._cache_new[t] = v
        return v

    def log_split_ratio(self, t, ni, nj):
        """log p(split) - log p(merged) when a cluster of ni + nj items is split.

        ``t`` is the cluster count of the merged partition.
        """
        hi = self.log_v(t + 1)
        if hi == NEG_INF:
            return NEG_INF
        g = self.gamma
        return (hi - self.log_v(t) + math.lgamma(ni + g) + math.lgamma(nj + g)
                - math.lgamma(ni + nj + g) - math.lgamma(g))

    def log_prior(self, sizes):
        return eppf_log(PartitionShape(tuple(sizes)), self.prior, _TableView(self))


class _TableView:
    def __init__(self, weights):
        self.w = weights

    def log_value(self, n, t):
        return self.w.log_v(t, n)


class DPMWeights:
    """Chinese restaurant process weights with concentration alpha."""

    kind = "DPM"

    def __init__(self, alpha, n=None):
        self.alpha = float(alpha)
        self.log_alpha = math.log(alpha)
        self.n = n
        self.prior = PriorConfig.dpm(alpha)

    def log_existing(self, sizes):
        return np.log(np.asarray(sizes, dtype=float))

    def log_existing1(self, size):
        return math.log(size)

    def log_new(self, t):
        return self.log_alpha

    def log_split_ratio(self, t, ni, nj):
        return self.log_alpha + math.lgamma(ni) + math.lgamma(nj) - math.lgamma(ni + nj)

    def log_prior(self, sizes):
        return eppf_log(PartitionShape(tuple(sizes)), self.prior)


def make_weights(prior, n, alpha=None, table=None):
    if prior.kind == "MFM":
        return MFMWeights(prior, n, table=table)
    return DPMWeights(prior.alpha if alpha is None else alpha, n)
