import math
import warnings

import numpy as np
import pytest
from scipy import stats

from mfm.harness import galaxy
from mfm.models import ComponentModel, DiagonalGaussianModel, RichardsonGreenModel
from mfm.partitions import Geometric, PriorConfig, UniformRange, build_vn_table, eppf_log, k_posterior_from_t
from mfm.processes import rng_stream
from mfm.samplers import SamplerSchedule, Snapshot, Trace, run_chain
from mfm.summaries import (
    CoverageWarning,
    DensityGrid,
    cocluster_matrix,
    effective_sample_size,
    exact_posterior_enum,
    hellinger,
    make_grid,
    predictive_density,
    set_partitions,
    t_pmf_from_trace,
    tk_gap,
)

from conftest import canonical, partitions_by_insertion

GEO = PriorConfig.mfm(Geometric(0.1), 1.0)


def trace_of(labelings, n=None, params=None):
    labelings = [np.asarray(z) for z in labelings]
    n = len(labelings[0]) if n is None else n
    snaps = [Snapshot(i + 1, z, None if params is None else params[i], {}) for i, z in enumerate(labelings)]
    sizes = [tuple(sorted(np.bincount(z), reverse=True)) for z in labelings]
    return Trace(n=n, size_history=sizes, full_states=snaps)


def grid_1d(lo, hi, cells):
    edges = np.linspace(lo, hi, cells + 1)
    return DensityGrid((0.5 * (edges[:-1] + edges[1:]),), np.zeros(cells))


# --- t pmf and co-clustering ------------------------------------------------------


def test_constant_t_trace_is_point_mass():
    tr = trace_of([[0, 1, 1, 0]] * 5)
    pmf = t_pmf_from_trace(tr)
    assert pmf[2] == 1.0 and pmf.sum() == 1.0 and len(pmf) == 5


def test_t_pmf_frequencies():
    tr = trace_of([[0, 0, 0], [0, 1, 1], [0, 1, 2], [0, 0, 1]])
    assert np.array_equal(t_pmf_from_trace(tr), [0, 0.25, 0.5, 0.25])


def test_t_pmf_empty_trace():
    with pytest.raises(ValueError):
        t_pmf_from_trace(Trace(n=3))


def test_cocluster_single_cluster():
    assert np.array_equal(cocluster_matrix(trace_of([[0, 0, 0, 0]])), np.ones((4, 4)))


def test_cocluster_two_snapshots():
    m = cocluster_matrix(trace_of([[0, 0, 1], [0, 1, 1]]))
    assert m[0, 1] == 0.5 and m[1, 2] == 0.5 and m[0, 2] == 0.0
    assert np.array_equal(m, m.T) and np.all(np.diag(m) == 1)


def test_cocluster_relabel_invariant():
    rng = np.random.default_rng(0)
    zs = [rng.integers(0, 4, size=12) for _ in range(30)]
    relabeled = []
    for z in zs:
        perm = rng.permutation(4)
        relabeled.append(perm[z])
    a = cocluster_matrix(trace_of([canonical(z) for z in zs]))
    b = cocluster_matrix(trace_of([canonical(z) for z in relabeled]))
    c = cocluster_matrix(trace_of(relabeled))
    assert a.tobytes() == b.tobytes() == c.tobytes()


def test_cocluster_needs_snapshots():
    with pytest.raises(ValueError):
        cocluster_matrix(Trace(n=3))


# --- Hellinger ----------------------------------------------------------------------


def test_hellinger_gaussians_analytic():
    g = grid_1d(-8, 9, 10_000)
    x = g.axes[0]
    p = g.with_values(stats.norm.pdf(x, 0, 1))
    q = g.with_values(stats.norm.pdf(x, 1, 1))
    assert hellinger(p, q) == pytest.approx(math.sqrt(1 - math.exp(-1 / 8)), abs=1e-4)
    assert hellinger(p, q) == pytest.approx(0.3428, abs=1e-4)


def test_hellinger_identical_and_disjoint():
    g = grid_1d(0, 4, 400)
    x = g.axes[0]
    p = g.with_values(np.where(x < 2, 0.5, 0.0))
    q = g.with_values(np.where(x >= 2, 0.5, 0.0))
    assert hellinger(p, p) == 0.0
    assert hellinger(p, q) == 1.0


def test_hellinger_grid_mismatch():
    with pytest.raises(ValueError):
        hellinger(grid_1d(0, 1, 10), grid_1d(0, 1, 11))


# --- exact enumeration --------------------------------------------------------------


def test_enum_single_item():
    labels, p = exact_posterior_enum(np.array([0.7]), DiagonalGaussianModel(1), GEO)
    assert labels.tolist() == [[0]] and p.tolist() == [1.0]


class FlatModel(ComponentModel):
    conjugate = True
    dim = 1

    def suff(self, x):
        return np.ones((len(x), 1))

    def empty_stats(self):
        return np.zeros(1)

    def log_marginal(self, stats):
        return np.zeros(np.shape(stats)[:-1]) if np.ndim(stats) > 1 else 0.0


@pytest.mark.parametrize("prior", [GEO, PriorConfig.dpm(1.4)], ids=["MFM", "DPM"])
def test_enum_flat_likelihood_recovers_eppf(prior):
    n = 6
    labels, p = exact_posterior_enum(np.zeros(n), FlatModel(), prior)
    table = build_vn_table(n, n, prior) if prior.kind == "MFM" else None
    ref = np.exp([eppf_log(np.bincount(lab), prior, table) for lab in labels])
    assert np.allclose(p, ref, rtol=1e-12, atol=0)


def test_enum_far_pair_golden():
    # mu | lambda ~ N(0, 1/lambda) ties the mean scale to the precision, so one
    # broad cluster explains +-100 better than two singletons
    labels, p = exact_posterior_enum(np.array([-100.0, 100.0]), DiagonalGaussianModel(1), GEO)
    assert labels.tolist() == [[0, 0], [0, 1]]
    m = DiagonalGaussianModel(1)
    phi = m.suff(np.array([[-100.0], [100.0]]))
    table = build_vn_table(2, 2, GEO)
    lj = eppf_log((2,), GEO, table) + m.log_marginal(phi.sum(axis=0))
    ls = eppf_log((1, 1), GEO, table) + m.log_marginal(phi[0]) + m.log_marginal(phi[1])
    assert p[1] == pytest.approx(1 / (1 + math.exp(lj - ls)), rel=1e-12)
    assert p[1] == pytest.approx(0.008141581364131893, rel=1e-9)


def test_enum_far_pair_splits_when_mean_prior_is_loose():
    labels, p = exact_posterior_enum(np.array([-100.0, 100.0]), DiagonalGaussianModel(1, 1.0, 1.0, 1e-4), GEO)
    assert p[1] > 0.99


def test_enum_normalized_and_order_independent():
    x = np.array([-1.3, -0.2, 0.4, 1.9, 2.2, 3.0, 5.1])
    model = DiagonalGaussianModel(1, 2.0, 1.0, 0.5)
    labels, p = exact_posterior_enum(x, model, GEO)
    assert abs(p.sum() - 1) < 1e-10
    assert len(labels) == 877
    table = build_vn_table(len(x), len(x), GEO)
    phi = model.suff(x[:, None])
    ref = {}
    for blocks in partitions_by_insertion(len(x)):
        z = np.empty(len(x), dtype=int)
        for c, b in enumerate(blocks):
            z[b] = c
        lp = eppf_log([len(b) for b in blocks], GEO, table) + sum(
            float(model.log_marginal(phi[b].sum(axis=0))) for b in blocks)
        ref[canonical(z)] = lp
    keys = [tuple(r) for r in labels]
    lr = np.array([ref[k] for k in keys])
    pr = np.exp(lr - lr.max())
    pr /= pr.sum()
    assert np.allclose(p, pr, rtol=1e-10, atol=1e-14)


def test_enum_guard_and_capability():
    with pytest.raises(ValueError):
        exact_posterior_enum(np.zeros(11), DiagonalGaussianModel(1), GEO)
    with pytest.raises(ValueError):
        exact_posterior_enum(np.zeros(3), RichardsonGreenModel(0.0, 1.0), GEO)


def test_set_partitions_are_restricted_growth_strings():
    for n in range(1, 7):
        seen = list(set_partitions(n))
        assert len(set(seen)) == len(seen)
        assert seen == sorted(seen)
        assert all(canonical(s) == s for s in seen)


# --- density estimation ---------------------------------------------------------


def test_single_cluster_existing_mode_is_component_density():
    model = RichardsonGreenModel(0.0, 5.0)
    theta = (0.4, 2.5)
    tr = trace_of([[0, 0, 0, 0, 0]], params=[[theta]])
    g = grid_1d(-4, 4, 801)
    x = np.array([0.1, 0.5, 0.3, 0.6, 0.2])
    dens = predictive_density(tr, g, x, model, GEO, mode="existing_cluster")
    ref = stats.norm.pdf(g.axes[0], 0.4, 1 / math.sqrt(2.5))
    assert np.allclose(dens.values, ref, rtol=1e-12, atol=1e-300)


@pytest.mark.parametrize("prior", [GEO, PriorConfig.dpm(0.8)], ids=["MFM", "DPM"])
@pytest.mark.parametrize("mode", ["existing_cluster", "full_predictive"])
def test_density_integrates_to_one(prior, mode):
    rng = np.random.default_rng(1)
    x = np.concatenate([rng.normal(-2, 0.5, 20), rng.normal(2, 0.5, 20)])
    model = DiagonalGaussianModel(1)
    tr = run_chain(x, model, prior, SamplerSchedule(iters=60, thin_full=20), rng_stream(2))
    g = make_grid(x, cells=2048, pad_sd=6)
    with warnings.catch_warnings():
        warnings.simplefilter("error", CoverageWarning)
        dens = predictive_density(tr, g, x, model, prior, mode=mode, rng=rng_stream(3))
    assert not dens.coverage_warning
    assert abs(dens.mass() - 1) < 0.02
    assert np.all(dens.values >= 0)


def test_full_predictive_weights_sum_to_one():
    # with every component equal to m(y), both modes collapse to m(y)
    n = 7
    table = build_vn_table(n, n, GEO)
    for sizes in [(7,), (3, 4), (1, 2, 4), (1, 1, 1, 1, 1, 1, 1)]:
        t = len(sizes)
        w = sum((s + 1) * math.exp(table.log_value(n + 1, t) - table.log_value(n, t)) for s in sizes)
        w += math.exp(table.log_value(n + 1, t + 1) - table.log_value(n, t))
        assert w == pytest.approx(1.0, abs=1e-12)


def test_coverage_warning_on_narrow_box():
    x = np.linspace(-3, 3, 20)
    model = DiagonalGaussianModel(1)
    tr = run_chain(x, model, GEO, SamplerSchedule(iters=20, thin_full=10), rng_stream(0))
    g = make_grid(x, cells=64, lo=-0.5, hi=0.5)
    with pytest.warns(CoverageWarning):
        dens = predictive_density(tr, g, x, model, GEO, rng=rng_stream(1))
    assert dens.coverage_warning


def test_density_rejects_unknown_mode():
    tr = trace_of([[0, 0]])
    with pytest.raises(ValueError):
        predictive_density(tr, grid_1d(0, 1, 4), np.zeros(2), DiagonalGaussianModel(1), GEO, mode="median")


def test_make_grid_two_dimensions():
    x = np.random.default_rng(0).normal(size=(30, 2))
    g = make_grid(x, cells=16)
    assert g.values.shape == (16, 16) and g.points.shape == (256, 2)
    with pytest.raises(ValueError):
        make_grid(np.zeros((5, 3)))


@pytest.mark.slow
def test_galaxy_full_and_existing_modes_agree():
    x = galaxy()[:, 0] / 1000.0
    model = RichardsonGreenModel.from_data(x)
    prior = PriorConfig.mfm(UniformRange(1, 30), 1.0)
    tr = run_chain(x, model, prior, SamplerSchedule(burnin=500, iters=4000, thin_full=40), rng_stream(0))
    g = make_grid(x, cells=512)
    a = predictive_density(tr, g, x, model, prior, mode="existing_cluster", rng=rng_stream(1))
    b = predictive_density(tr, g, x, model, prior, mode="full_predictive", mc_draws=1000, rng=rng_stream(1))
    peak = max(a.values.max(), b.values.max())
    assert np.max(np.abs(a.values - b.values)) < 0.02 * peak


# --- cluster-count conversion and diagnostics ----------------------------------------


def test_tk_gap_matches_direct_conversion():
    n = 30
    table = build_vn_table(n, n, GEO)
    t_pmf = np.zeros(n + 1)
    t_pmf[2:5] = [0.2, 0.5, 0.3]
    kp = k_posterior_from_t(t_pmf, n, GEO, table)
    m = max(len(kp), len(t_pmf))
    ref = np.max(np.abs(np.pad(t_pmf, (0, m - len(t_pmf))) - np.pad(kp, (0, m - len(kp)))))
    assert tk_gap(t_pmf, n, GEO, table) == pytest.approx(ref, abs=1e-15)
    assert tk_gap(t_pmf, n, GEO, table) > 0


def test_ess_iid_and_ar1():
    rng = np.random.default_rng(0)
    iid = rng.standard_normal(20_000)
    assert 0.85 * 20_000 < effective_sample_size(iid) < 1.15 * 20_000
    phi = 0.9
    e = rng.standard_normal(200_000)
    y = np.empty_like(e)
    y[0] = e[0]
    for i in range(1, len(e)):
        y[i] = phi * y[i - 1] + e[i]
    expected = len(y) * (1 - phi) / (1 + phi)
    assert abs(effective_sample_size(y) / expected - 1) < 0.15
    assert effective_sample_size([1.0, 2.0]) == 2.0
