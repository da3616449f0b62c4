"""Posterior summaries: cluster-count and component-count pmfs, co-clustering,
grid density estimates, Hellinger distance, and exact enumeration."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .partitions import PartitionShape, eppf_log, k_posterior_from_t, make_weights

__all__ = [
    "DensityGrid",
    "t_pmf_from_trace",
    "cocluster_matrix",
    "make_grid",
    "predictive_density",
    "hellinger",
    "set_partitions",
    "exact_posterior_enum",
    "tk_gap",
    "effective_sample_size",
    "CoverageWarning",
]

BELL_GUARD = 10


class CoverageWarning(UserWarning):
    pass


def t_pmf_from_trace(trace):
    """Empirical pmf of the number of clusters, indexed by t = 0..n."""
    t = trace.t_history
    if len(t) == 0:
        raise ValueError("trace has no recorded iterations")
    return np.bincount(t, minlength=trace.n + 1) / len(t)


def cocluster_matrix(trace):
    """Fraction of recorded snapshots in which items i and j share a cluster."""
    if not trace.full_states:
        raise ValueError("trace has no full-state snapshots")
    n = trace.n
    acc = np.zeros((n, n))
    for snap in trace.full_states:
        z = np.asarray(snap.z)
        acc += z[:, None] == z[None, :]
    return acc / len(trace.full_states)


@dataclass
class DensityGrid:
    """Density values on a regular grid of cell centres.

    ``axes`` holds one array of centres per dimension; ``values`` has shape
    ``tuple(len(a) for a in axes)``.
    """

    axes: tuple
    values: np.ndarray
    coverage_warning: bool = False

    @property
    def d(self):
        return len(self.axes)

    @property
    def cell_volume(self):
        return float(np.prod([a[1] - a[0] for a in self.axes]))

    @property
    def points(self):
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.column_stack([m.ravel() for m in mesh])

    def mass(self):
        return float(self.values.sum() * self.cell_volume)

    def same_grid(self, other):
        return self.d == other.d and all(
            len(a) == len(b) and np.array_equal(a, b) for a, b in zip(self.axes, other.axes)
        )

    def with_values(self, values):
        return DensityGrid(self.axes, np.asarray(values, dtype=float).reshape(self.values.shape))


def make_grid(x, cells=512, pad_sd=3.0, lo=None, hi=None):
    """Empty grid over the data range padded by ``pad_sd`` sample SDs per axis."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    d = x.shape[1]
    if d > 2:
        raise ValueError("density grids are limited to d <= 2")
    sd = x.std(axis=0, ddof=1) if len(x) > 1 else np.ones(d)
    lo = x.min(axis=0) - pad_sd * sd if lo is None else np.broadcast_to(np.asarray(lo, float), (d,))
    hi = x.max(axis=0) + pad_sd * sd if hi is None else np.broadcast_to(np.asarray(hi, float), (d,))
    axes = []
    for i in range(d):
        edges = np.linspace(lo[i], hi[i], cells + 1)
        axes.append(0.5 * (edges[:-1] + edges[1:]))
    return DensityGrid(tuple(axes), np.zeros((cells,) * d))


def _snapshot_params(snap, x, model, rng):
    """Cluster parameters for a snapshot, drawn from their conditionals if absent."""
    if snap.params is not None:
        return list(snap.params), [int(s) for s in np.bincount(snap.z)]
    z = np.asarray(snap.z)
    sizes = np.bincount(z)
    params = []
    for c in range(len(sizes)):
        xc = x[z == c]
        theta = model.unstack(model.prior_draw(rng, snap.hyper, 1))[0]
        params.append(model.gibbs_param_update(theta, xc, snap.hyper, rng))
    return params, [int(s) for s in sizes]


def _log_m_points(model, pts, hyper, rng, mc_draws):
    """log m(y) for each grid point, exact when conjugate, else Monte Carlo."""
    if model.conjugate:
        return model.log_marginal(model.suff(pts))
    batch = model.prior_draw(rng, hyper, mc_draws)
    cols = np.column_stack([model.log_pdf(th, pts) for th in model.unstack(batch)])
    return logsumexp(cols, axis=1) - math.log(mc_draws)


def predictive_density(trace, grid, x, model, prior, mode="existing_cluster", mc_draws=200, rng=None,
                       weights=None):
    """Average over snapshots of the predictive density of a new point.

    ``existing_cluster`` uses only the occupied clusters, each weighted by
    its seating weight normalized over occupied clusters.  ``full_predictive``
    adds the new-cluster term, using exact seating probabilities for item
    n + 1 and m(y) (closed form when conjugate, else ``mc_draws`` prior
    draws per snapshot).  Snapshots without stored parameters get cluster
    parameters drawn from their conditionals.
    """
    if mode not in ("existing_cluster", "full_predictive"):
        raise ValueError(f"unknown mode {mode!r}")
    if not trace.full_states:
        raise ValueError("trace has no full-state snapshots")
    rng = np.random.default_rng() if rng is None else rng
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = len(x)
    pts = grid.points
    if weights is None and prior.kind == "MFM":
        weights = make_weights(prior, n)
    total = np.zeros(len(pts))
    for snap in trace.full_states:
        params, sizes = _snapshot_params(snap, x, model, rng)
        sizes = np.asarray(sizes, dtype=float)
        t = len(sizes)
        if prior.kind == "MFM":
            g = prior.gamma
            log_join = np.log(sizes + g)
            log_fresh = math.log(g)
            if mode == "full_predictive":
                base = weights.log_v(t, n + 1) - weights.log_v(t, n)
                log_join = log_join + base
                log_fresh += weights.log_v(t + 1, n + 1) - weights.log_v(t, n)
            else:
                log_join = log_join - math.log(n + g * t)
        else:
            alpha = snap.hyper.get("alpha", prior.alpha)
            denom = n + alpha if mode == "full_predictive" else n
            log_join = np.log(sizes) - math.log(denom)
            log_fresh = math.log(alpha) - math.log(denom)
        terms = [log_join[c] + model.log_pdf(params[c], pts) for c in range(t)]
        if mode == "full_predictive":
            terms.append(log_fresh + _log_m_points(model, pts, snap.hyper, rng, mc_draws))
        total += np.exp(logsumexp(np.column_stack(terms), axis=1))
    out = grid.with_values(total / len(trace.full_states))
    if out.mass() < 0.95:
        out.coverage_warning = True
        warnings.warn(f"grid holds only {out.mass():.3f} of the density mass", CoverageWarning, stacklevel=2)
    return out


def hellinger(p, q):
    """Hellinger distance between two densities on the same grid."""
    if not p.same_grid(q):
        raise ValueError("densities are on different grids")
    # 0.5 * sum (sqrt p - sqrt q)^2 equals 1 - sum sqrt(p q) for normalized
    # densities but is exactly zero when p == q
    diff = np.sqrt(np.clip(p.values, 0, None)) - np.sqrt(np.clip(q.values, 0, None))
    h2 = 0.5 * float(np.sum(diff * diff)) * p.cell_volume
    return math.sqrt(min(1.0, max(0.0, h2)))


def set_partitions(n):
    """Yield every set partition of range(n) as a restricted growth string,
    in lexicographic order."""
    if n == 0:
        yield ()
        return
    a = [0] * n
    while True:
        yield tuple(a)
        top = [0] * n  # top[i] = 1 + max(a[:i])
        for i in range(1, n):
            top[i] = max(top[i - 1], a[i - 1] + 1)
        i = n - 1
        while i > 0 and a[i] == top[i]:
            i -= 1
        if i == 0:
            return
        a[i] += 1
        a[i + 1:] = [0] * (n - i - 1)


def exact_posterior_enum(x, model, prior, table=None, log_marginal=None, guard=BELL_GUARD):
    """Exact p(C | x) over all set partitions of the n items.

    Returns ``(labels, probs)`` where ``labels`` is a ``(B_n, n)`` array of
    restricted growth strings.  ``log_marginal(idx)`` may be given to supply
    log m(x_c) for a tuple of item indices (e.g. by quadrature); otherwise
    the model's closed form is used.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = len(x)
    if n > guard:
        raise ValueError(f"n={n} exceeds the enumeration guard {guard}")
    if log_marginal is None:
        if not model.conjugate:
            raise ValueError("a non-conjugate model needs an explicit log_marginal")
        phi = model.suff(x)

        def log_marginal(idx):
            return float(model.log_marginal(phi[list(idx)].sum(axis=0)))

    if prior.kind == "MFM" and table is None:
        table = make_weights(prior, n).table if n else None
    cache = {}
    labels = np.array(list(set_partitions(n)), dtype=np.int64).reshape(-1, n)
    logp = np.empty(len(labels))
    for r, lab in enumerate(labels):
        blocks = {}
        for i, c in enumerate(lab):
            blocks.setdefault(c, []).append(i)
        lm = 0.0
        for members in blocks.values():
            key = tuple(members)
            if key not in cache:
                cache[key] = log_marginal(key)
            lm += cache[key]
        sizes = tuple(len(b) for b in blocks.values())
        logp[r] = eppf_log(PartitionShape(sizes), prior, table) + lm
    return labels, np.exp(logp - logsumexp(logp))


def tk_gap(t_pmf, n, prior, table):
    """max_k |p(T = k | x) - p(K = k | x)|."""
    kp = k_posterior_from_t(t_pmf, n, prior, table)
    t_pmf = np.asarray(t_pmf, dtype=float)
    m = max(len(kp), len(t_pmf))
    a = np.zeros(m)
    b = np.zeros(m)
    a[: len(t_pmf)] = t_pmf
    b[: len(kp)] = kp
    return float(np.max(np.abs(a - b)))


def effective_sample_size(series):
    """Effective sample size using the initial positive sequence estimator."""
    y = np.asarray(series, dtype=float)
    m = len(y)
    if m < 4:
        return float(m)
    y = y - y.mean()
    var = float(np.dot(y, y)) / m
    if var == 0:
        return float(m)
    f = np.fft.rfft(y, 2 * m)
    rho = np.fft.irfft(f * np.conj(f))[:m] / m / var
    tau = -1.0
    for k in range(0, m - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair <= 0:
            break
        tau += 2.0 * pair
    return m / max(tau, 1e-12)
