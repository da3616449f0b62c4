"""MCMC over partitions for MFM and DPM mixtures.

Samplers see the partition prior only through a weights object
(:class:`~mfm.partitions.MFMWeights` or :class:`~mfm.partitions.DPMWeights`):
``log_existing(size)`` for joining a cluster, ``log_new(t)`` for opening one,
and ``log_split_ratio`` for split-merge proposals.  Swapping one for the
other is the only difference between the MFM and DPM versions.

State is mutated in place; every move also returns the state for chaining.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .partitions import NEG_INF, DPMWeights, make_weights

__all__ = [
    "ChainState",
    "SamplerSchedule",
    "Snapshot",
    "Trace",
    "ConfigurationError",
    "init_state",
    "gibbs_sweep_conjugate",
    "gibbs_sweep_aux",
    "split_merge_conjugate",
    "split_merge_nonconjugate",
    "update_alpha_mh",
    "log_alpha_target",
    "check_support",
    "run_chain",
]


class ConfigurationError(ValueError):
    pass


@dataclass
class SamplerSchedule:
    """Moves per iteration and run length.

    ``split_scans`` restricted scans build the split launch state,
    ``sm_moves`` split-merge proposals and ``gibbs_scans`` incremental scans
    run per iteration, and ``merge_scans`` parameter updates build the merge
    launch state (non-conjugate only).
    """

    split_scans: int = 5
    sm_moves: int = 1
    gibbs_scans: int = 1
    merge_scans: int = 5
    burnin: int = 0
    iters: int = 1000
    thin_full: int = 100
    aux_m: int = 1
    alpha_step: float = 0.5
    rebuild_every: int = 10_000

    def __post_init__(self):
        for name in ("split_scans", "sm_moves", "gibbs_scans", "merge_scans", "burnin", "iters"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be nonnegative")
        if self.thin_full < 1:
            raise ConfigurationError("thin_full must be at least 1")
        if self.aux_m < 1:
            raise ConfigurationError("aux_m must be at least 1")


@dataclass
class ChainState:
    """Partition (compact labels 0..t-1), per-cluster summaries, hyperparameters.

    Conjugate chains keep ``stats`` (one sufficient-statistic row per
    cluster) and ``logm`` (cached log marginals); non-conjugate chains keep
    ``params``.
    """

    z: np.ndarray
    sizes: list
    stats: np.ndarray | None = None
    logm: np.ndarray | None = None
    params: list | None = None
    hyper: dict = field(default_factory=dict)
    iteration: int = 0
    item_stats: np.ndarray | None = field(default=None, repr=False)
    updates: int = 0

    @property
    def t(self):
        return len(self.sizes)

    @property
    def n(self):
        return len(self.z)

    def copy(self):
        return ChainState(
            z=self.z.copy(),
            sizes=list(self.sizes),
            stats=None if self.stats is None else self.stats.copy(),
            logm=None if self.logm is None else self.logm.copy(),
            params=None if self.params is None else list(self.params),
            hyper=dict(self.hyper),
            iteration=self.iteration,
            item_stats=self.item_stats,
            updates=self.updates,
        )

    def rebuild_stats(self, model):
        """Recompute cluster statistics from the item statistics."""
        stats = np.zeros((self.t, self.item_stats.shape[1]))
        np.add.at(stats, self.z, self.item_stats)
        self.stats = stats
        self.logm = model.log_marginal(stats)
        self.updates = 0

    def check(self, model=None):
        """Raise AssertionError if the state is internally inconsistent."""
        t = self.t
        counts = np.bincount(self.z, minlength=t)
        assert len(counts) == t, "labels are not compact"
        assert list(counts) == list(self.sizes), "sizes disagree with labels"
        assert all(s > 0 for s in self.sizes), "empty cluster retained"
        if self.stats is not None:
            ref = np.zeros_like(self.stats)
            np.add.at(ref, self.z, self.item_stats)
            assert np.allclose(ref, self.stats, rtol=1e-6, atol=1e-6), "stats drifted"
            if model is not None:
                assert np.allclose(model.log_marginal(self.stats), self.logm, rtol=1e-6, atol=1e-6)
        if self.params is not None:
            assert len(self.params) == t


def _draw(logw, rng):
    """Index drawn with probability proportional to exp(logw)."""
    w = np.exp(logw - logw.max())
    c = np.cumsum(w)
    return min(int(np.searchsorted(c, rng.random() * c[-1], side="right")), len(c) - 1)


def _drop_cluster(state, c):
    """Remove empty cluster c by moving the last cluster into its slot."""
    last = state.t - 1
    if c != last:
        state.z[state.z == last] = c
        state.sizes[c] = state.sizes[last]
        if state.stats is not None:
            state.stats[c] = state.stats[last]
            state.logm[c] = state.logm[last]
        if state.params is not None:
            state.params[c] = state.params[last]
    state.sizes.pop()
    if state.stats is not None:
        state.stats = state.stats[:last]
        state.logm = state.logm[:last]
    if state.params is not None:
        state.params.pop()


def init_state(x, model, hyper=None, rng=None, conjugate=None):
    """All items in one cluster."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    conjugate = model.conjugate if conjugate is None else conjugate
    hyper = model.hyper_init() if hyper is None else dict(hyper)
    state = ChainState(z=np.zeros(n, dtype=np.int64), sizes=[n], hyper=hyper)
    if conjugate:
        state.item_stats = model.suff(x)
        state.rebuild_stats(model)
    else:
        rng = np.random.default_rng() if rng is None else rng
        theta = model.unstack(model.prior_draw(rng, hyper, 1))[0]
        state.params = [model.gibbs_param_update(theta, x, hyper, rng)]
    return state


# ---------------------------------------------------------------------------
# incremental moves


def gibbs_sweep_conjugate(state, model, weights, rng, x=None, rebuild_every=10_000):
    """One collapsed Gibbs scan over all items (conjugate models).

    Item j is removed and reseated in cluster c with weight
    ``w(|c|) m(x_{c+j}) / m(x_c)`` or in a new cluster with weight
    ``w_new(t) m(x_j)``.
    """
    if not model.conjugate:
        raise ConfigurationError(f"{type(model).__name__} is not conjugate")
    if state.item_stats is None:
        state.item_stats = model.suff(np.asarray(x, dtype=float))
        state.rebuild_stats(model)
    phi = state.item_stats
    logm1 = model.log_marginal(phi)
    z, sizes = state.z, state.sizes
    for j in range(len(z)):
        c = z[j]
        sizes[c] -= 1
        if sizes[c] == 0:
            _drop_cluster(state, c)
        else:
            state.stats[c] -= phi[j]
            state.logm[c] = model.log_marginal(state.stats[c])
        t = len(sizes)
        lm_with = model.log_marginal(state.stats + phi[j])
        logw = np.empty(t + 1)
        logw[:t] = weights.log_existing(sizes) + lm_with - state.logm
        logw[t] = weights.log_new(t) + logm1[j]
        k = _draw(logw, rng)
        if k == t:
            state.stats = np.vstack([state.stats, phi[j]])
            state.logm = np.append(state.logm, logm1[j])
            sizes.append(1)
        else:
            state.stats[k] += phi[j]
            state.logm[k] = lm_with[k]
            sizes[k] += 1
        z[j] = k
        state.updates += 2
    if state.updates >= rebuild_every:
        state.rebuild_stats(model)
    return state


def _loglik_columns(model, params, x):
    return np.column_stack([model.log_pdf(th, x) for th in params]) if params else np.empty((len(x), 0))


def gibbs_sweep_aux(state, x, model, weights, rng, m_aux=1):
    """One scan of the auxiliary-parameter sampler for non-conjugate models,
    followed by a Gibbs update of every cluster's parameters.

    For each item, ``m_aux`` candidate parameters stand in for new clusters,
    each with weight ``w_new(t) / m_aux`` times its likelihood; when the item
    was a singleton its own parameter is the first candidate.
    """
    if m_aux < 1:
        raise ValueError("m_aux must be at least 1")
    x = np.asarray(x, dtype=float)
    n = len(x)
    hyper = state.hyper
    z, sizes, params = state.z, state.sizes, state.params
    ll = _loglik_columns(model, params, x)
    batch = model.prior_draw(rng, hyper, n * m_aux)
    fresh = model.unstack(batch)
    fresh_ll = model.log_pdf_each(batch, np.repeat(x, m_aux, axis=0)).reshape(n, m_aux)
    log_m = math.log(m_aux)
    for j in range(n):
        c = z[j]
        sizes[c] -= 1
        cand = fresh[j * m_aux : (j + 1) * m_aux]
        cand_ll = fresh_ll[j].copy()
        if sizes[c] == 0:
            cand[0] = params[c]
            cand_ll[0] = ll[j, c]
            ll[:, c] = ll[:, len(sizes) - 1]
            _drop_cluster(state, c)
            ll = ll[:, : len(sizes)]
        t = len(sizes)
        logw = np.empty(t + m_aux)
        logw[:t] = weights.log_existing(sizes) + ll[j, :t]
        logw[t:] = weights.log_new(t) - log_m + cand_ll
        k = _draw(logw, rng)
        if k >= t:
            theta = cand[k - t]
            params.append(theta)
            sizes.append(1)
            ll = np.column_stack([ll, model.log_pdf(theta, x)])
            k = t
        else:
            sizes[k] += 1
        z[j] = k
    _update_params(state, x, model, rng)
    return state


def _update_params(state, x, model, rng):
    order = np.argsort(state.z, kind="stable")
    bounds = np.cumsum([0] + list(np.bincount(state.z, minlength=state.t)))
    for c in range(state.t):
        xc = x[order[bounds[c] : bounds[c + 1]]]
        state.params[c] = model.gibbs_param_update(state.params[c], xc, state.hyper, rng)


# ---------------------------------------------------------------------------
# split-merge


def _pick_anchors(n, rng):
    i, j = rng.choice(n, size=2, replace=False)
    return int(i), int(j)


def _restricted_conj(model, weights, phi, S, side, st, rng, target=None):
    """One restricted Gibbs pass over S between two clusters (conjugate).

    ``side[k]`` is 0 or 1 for S[k]; ``st`` is the (2, D) pair of statistics,
    both updated in place.  With ``target`` given, the pass is forced to
    that assignment and only its probability is computed.  Returns the log
    probability of the assignments made.
    """
    logq = 0.0
    sz = [0, 0]
    for s in side:
        sz[s] += 1
    sz[0] += 1  # anchors
    sz[1] += 1
    lm = model.log_marginal(st)
    for idx, k in enumerate(S):
        s = side[idx]
        st[s] -= phi[k]
        sz[s] -= 1
        lm[s] = model.log_marginal(st[s])
        lm_with = model.log_marginal(st + phi[k])
        a = weights.log_existing1(sz[0]) + lm_with[0] - lm[0]
        b = weights.log_existing1(sz[1]) + lm_with[1] - lm[1]
        mx = max(a, b)
        lse = mx + math.log(math.exp(a - mx) + math.exp(b - mx))
        if target is None:
            new = 0 if rng.random() < math.exp(a - lse) else 1
        else:
            new = target[idx]
        logq += (a if new == 0 else b) - lse
        side[idx] = new
        st[new] += phi[k]
        sz[new] += 1
        lm[new] = lm_with[new]
    return logq


def split_merge_conjugate(state, model, weights, rng, schedule, _record=None):
    """One split-merge proposal for conjugate models (restricted Gibbs
    launch state with ``schedule.split_scans`` intermediate scans)."""
    phi = state.item_stats
    z = state.z
    n = len(z)
    if n < 2:
        return state
    i, j = _pick_anchors(n, rng)
    ci, cj = z[i], z[j]
    members = np.flatnonzero((z == ci) | (z == cj))
    S = members[(members != i) & (members != j)]
    side = (rng.random(len(S)) >= 0.5).astype(np.int64)
    st = np.vstack([phi[i], phi[j]])
    np.add.at(st, side, phi[S])
    for _ in range(schedule.split_scans):
        _restricted_conj(model, weights, phi, S, side, st, rng)
    t = state.t
    launch = side.copy()
    if ci == cj:
        logq = _restricted_conj(model, weights, phi, S, side, st, rng)
        ni, nj = 1 + int(np.sum(side == 0)), 1 + int(np.sum(side == 1))
        lm_split = model.log_marginal(st)
        log_a = (weights.log_split_ratio(t, ni, nj) + lm_split[0] + lm_split[1]
                 - state.logm[ci] - logq)
        if _record is not None:
            _record.update(kind="split", i=i, j=j, S=S, launch=launch, side=side.copy(), log_a=log_a, log_q=logq)
        if log_a >= 0 or rng.random() < math.exp(log_a):
            new = t
            moved = S[side == 1]
            z[moved] = new
            z[j] = new
            state.sizes[ci] = ni
            state.sizes.append(nj)
            state.stats[ci] = st[0]
            state.stats = np.vstack([state.stats, st[1]])
            state.logm[ci] = lm_split[0]
            state.logm = np.append(state.logm, lm_split[1])
    else:
        target = (z[S] == cj).astype(np.int64)
        logq = _restricted_conj(model, weights, phi, S, side, st, rng, target=target)
        ni, nj = state.sizes[ci], state.sizes[cj]
        merged = state.stats[ci] + state.stats[cj]
        lm_merged = float(model.log_marginal(merged))
        log_a = (-weights.log_split_ratio(t - 1, ni, nj) + lm_merged
                 - state.logm[ci] - state.logm[cj] + logq)
        if _record is not None:
            _record.update(kind="merge", i=i, j=j, S=S, launch=launch, side=side.copy(), log_a=log_a, log_q=logq)
        if log_a >= 0 or rng.random() < math.exp(log_a):
            z[z == cj] = ci
            state.sizes[ci] = ni + nj
            state.sizes[cj] = 0
            state.stats[ci] = merged
            state.logm[ci] = lm_merged
            _drop_cluster(state, cj)
    return state


def _restricted_nc(model, weights, x, S, side, th, rng, target=None):
    """Restricted assignment pass over S with parameters th = [th0, th1] held
    fixed.  Returns the log probability of the assignments made."""
    logq = 0.0
    sz = [1, 1]
    for s in side:
        sz[s] += 1
    if len(S):
        xs = x[S]
        l0 = model.log_pdf(th[0], xs)
        l1 = model.log_pdf(th[1], xs)
    for idx in range(len(S)):
        s = side[idx]
        sz[s] -= 1
        a = weights.log_existing1(sz[0]) + l0[idx]
        b = weights.log_existing1(sz[1]) + l1[idx]
        mx = max(a, b)
        lse = mx + math.log(math.exp(a - mx) + math.exp(b - mx))
        if target is None:
            new = 0 if rng.random() < math.exp(a - lse) else 1
        else:
            new = target[idx]
        logq += (a if new == 0 else b) - lse
        side[idx] = new
        sz[new] += 1
    return logq


def _sides_data(x, i, j, S, side):
    return (np.concatenate([x[[i]], x[S[side == 0]]]), np.concatenate([x[[j]], x[S[side == 1]]]))


def split_merge_nonconjugate(state, x, model, weights, rng, schedule, _record=None):
    """One non-conjugate split-merge proposal.

    The split launch state comes from a random split of the two anchors'
    clusters, fresh prior parameters, and ``schedule.split_scans`` restricted
    scans (assignments, then both parameters).  The merge launch parameter
    comes from a prior draw followed by ``schedule.merge_scans`` parameter
    updates.  Proposal densities include the final parameter transitions.
    """
    x = np.asarray(x, dtype=float)
    z = state.z
    n = len(z)
    if n < 2:
        return state
    hyper = state.hyper
    i, j = _pick_anchors(n, rng)
    ci, cj = z[i], z[j]
    members = np.flatnonzero((z == ci) | (z == cj))
    S = members[(members != i) & (members != j)]
    side = (rng.random(len(S)) >= 0.5).astype(np.int64)
    th = model.unstack(model.prior_draw(rng, hyper, 2))
    for _ in range(schedule.split_scans):
        _restricted_nc(model, weights, x, S, side, th, rng)
        d0, d1 = _sides_data(x, i, j, S, side)
        th = [model.gibbs_param_update(th[0], d0, hyper, rng), model.gibbs_param_update(th[1], d1, hyper, rng)]
    xm = x[np.concatenate([[i, j], S])]
    thm = model.unstack(model.prior_draw(rng, hyper, 1))[0]
    for _ in range(schedule.merge_scans):
        thm = model.gibbs_param_update(thm, xm, hyper, rng)
    t = state.t
    launch, th_launch = side.copy(), list(th)
    if ci == cj:
        logq = _restricted_nc(model, weights, x, S, side, th, rng)
        d0, d1 = _sides_data(x, i, j, S, side)
        new0 = model.gibbs_param_update(th[0], d0, hyper, rng)
        new1 = model.gibbs_param_update(th[1], d1, hyper, rng)
        logq += model.log_param_transition(th[0], new0, d0, hyper) + model.log_param_transition(th[1], new1, d1, hyper)
        old = state.params[ci]
        log_rev = model.log_param_transition(thm, old, xm, hyper)
        log_target = (weights.log_split_ratio(t, len(d0), len(d1))
                      + model.log_prior(new0, hyper) + model.log_prior(new1, hyper) - model.log_prior(old, hyper)
                      + float(np.sum(model.log_pdf(new0, d0)) + np.sum(model.log_pdf(new1, d1))
                              - np.sum(model.log_pdf(old, xm))))
        log_a = log_target + log_rev - logq
        if _record is not None:
            _record.update(kind="split", i=i, j=j, S=S, launch=launch, side=side.copy(), th=th_launch, thm=thm,
                           new=(new0, new1), log_a=log_a, log_target=log_target, log_fwd=logq, log_rev=log_rev)
        if log_a >= 0 or rng.random() < math.exp(log_a):
            new = t
            z[S[side == 1]] = new
            z[j] = new
            state.sizes[ci] = len(d0)
            state.sizes.append(len(d1))
            state.params[ci] = new0
            state.params.append(new1)
    else:
        target = (z[S] == cj).astype(np.int64)
        log_rev = _restricted_nc(model, weights, x, S, side, th, rng, target=target)
        d0, d1 = _sides_data(x, i, j, S, side)
        old0, old1 = state.params[ci], state.params[cj]
        log_rev += (model.log_param_transition(th[0], old0, d0, hyper)
                    + model.log_param_transition(th[1], old1, d1, hyper))
        newm = model.gibbs_param_update(thm, xm, hyper, rng)
        logq = model.log_param_transition(thm, newm, xm, hyper)
        log_target = -(weights.log_split_ratio(t - 1, len(d0), len(d1))
                       + model.log_prior(old0, hyper) + model.log_prior(old1, hyper) - model.log_prior(newm, hyper)
                       + float(np.sum(model.log_pdf(old0, d0)) + np.sum(model.log_pdf(old1, d1))
                               - np.sum(model.log_pdf(newm, xm))))
        log_a = log_target + log_rev - logq
        if _record is not None:
            _record.update(kind="merge", i=i, j=j, S=S, launch=launch, side=side.copy(), th=th_launch, thm=thm,
                           new=newm, log_a=log_a, log_target=log_target, log_fwd=logq, log_rev=log_rev)
        if log_a >= 0 or rng.random() < math.exp(log_a):
            z[z == cj] = ci
            state.sizes[ci] += state.sizes[cj]
            state.sizes[cj] = 0
            state.params[ci] = newm
            _drop_cluster(state, cj)
    return state


# ---------------------------------------------------------------------------
# hyperparameters


def log_alpha_target(alpha, t, n):
    """log p(alpha | t) up to a constant under an Exponential(1) prior."""
    return t * math.log(alpha) + math.lgamma(alpha) - math.lgamma(alpha + n) - alpha


def update_alpha_mh(state, rng, step=0.5):
    """Random-walk Metropolis-Hastings on log alpha."""
    alpha = state.hyper["alpha"]
    n, t = state.n, state.t
    prop = alpha * math.exp(step * rng.standard_normal())
    log_a = log_alpha_target(prop, t, n) - log_alpha_target(alpha, t, n) + math.log(prop / alpha)
    if log_a >= 0 or rng.random() < math.exp(log_a):
        state.hyper["alpha"] = prop
    return state


def check_support(weights, n):
    """Verify {t : V_n(t) > 0} is a block of consecutive integers containing 1."""
    if weights.kind != "MFM":
        return
    pos = [t for t in range(1, n + 1) if weights.log_v(t) > NEG_INF]
    if not pos or pos[0] != 1 or pos != list(range(1, pos[-1] + 1)):
        raise ConfigurationError("the support of V_n(t) is not a consecutive block starting at 1")


# ---------------------------------------------------------------------------
# chain runner


@dataclass
class Snapshot:
    iteration: int
    z: np.ndarray
    params: list | None
    hyper: dict


@dataclass
class Trace:
    """Recorded chain output (post burn-in)."""

    n: int
    size_history: list = field(default_factory=list)
    full_states: list = field(default_factory=list)
    hyper_history: dict = field(default_factory=dict)
    initial_state: Snapshot | None = None
    seconds_per_iteration: float = 0.0
    seed: object = None
    prior_kind: str = "MFM"
    final_state: ChainState | None = field(default=None, repr=False)

    @property
    def t_history(self):
        return np.array([len(s) for s in self.size_history], dtype=np.int64)


def _snapshot(state):
    params = None if state.params is None else list(state.params)
    return Snapshot(state.iteration, state.z.copy(), params, dict(state.hyper))


def run_chain(x, model, prior, schedule, rng, conjugate=None, seed=None, hyper=None, progress=None):
    """Run a chain from a single cluster and record a :class:`Trace`.

    Each iteration does ``sm_moves`` split-merge proposals, ``gibbs_scans``
    incremental scans, then hyperparameter updates (the component model's
    hyperparameters and, for a DPM with a hyperprior, alpha).
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = len(x)
    conjugate = model.conjugate if conjugate is None else conjugate
    if conjugate and not model.conjugate:
        raise ConfigurationError(f"{type(model).__name__} has no closed-form marginal")
    if x.shape[1] != model.dim:
        raise ConfigurationError(f"data has {x.shape[1]} columns but the model expects {model.dim}")
    weights = make_weights(prior, n)
    check_support(weights, n)
    hyper = dict(model.hyper_init() if hyper is None else hyper)
    learn_alpha = prior.kind == "DPM" and prior.alpha_prior == "exponential"
    if prior.kind == "DPM":
        hyper.setdefault("alpha", prior.alpha)
    state = init_state(x, model, hyper, rng, conjugate=conjugate)
    trace = Trace(n=n, seed=seed, prior_kind=prior.kind)
    trace.initial_state = _snapshot(state)
    trace.hyper_history = {k: [] for k in state.hyper}
    total = schedule.burnin + schedule.iters
    start = time.perf_counter()
    for it in range(total):
        if prior.kind == "DPM" and weights.alpha != state.hyper["alpha"]:
            weights = DPMWeights(state.hyper["alpha"], n)
        for _ in range(schedule.sm_moves):
            if conjugate:
                split_merge_conjugate(state, model, weights, rng, schedule)
            else:
                split_merge_nonconjugate(state, x, model, weights, rng, schedule)
        for _ in range(schedule.gibbs_scans):
            if conjugate:
                gibbs_sweep_conjugate(state, model, weights, rng, rebuild_every=schedule.rebuild_every)
            else:
                gibbs_sweep_aux(state, x, model, weights, rng, m_aux=schedule.aux_m)
        if not conjugate:
            state.hyper = model.update_hyper(state.params, state.hyper, rng)
        if learn_alpha:
            update_alpha_mh(state, rng, schedule.alpha_step)
        state.iteration = it + 1
        if it >= schedule.burnin:
            trace.size_history.append(tuple(sorted(state.sizes, reverse=True)))
            for k, v in state.hyper.items():
                trace.hyper_history.setdefault(k, []).append(v)
            if (it + 1 - schedule.burnin) % schedule.thin_full == 0:
                trace.full_states.append(_snapshot(state))
        if progress is not None:
            progress(it, state)
    if total:
        trace.seconds_per_iteration = (time.perf_counter() - start) / total
    trace.final_state = state
    return trace
