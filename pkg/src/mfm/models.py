"""Component families.

A model supplies what the samplers need and nothing else.  Conjugate
models work with additive sufficient-statistic vectors: the statistics of a
cluster are the sum of ``suff(x_j)`` over its members, so adding or removing
a point is a vector add, and ``log_marginal`` broadcasts over a stack of
clusters.  Non-conjugate models expose prior draws, likelihoods, single-site
parameter updates, and the density of those updates (needed by the
split-merge acceptance ratio).
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import gammaln, multigammaln

__all__ = [
    "ComponentModel",
    "DiagonalGaussianModel",
    "RichardsonGreenModel",
    "MvnIndepWishartModel",
    "NumericalError",
    "synth_three_component",
    "synth3_logpdf",
    "synth_expression",
    "SYNTH3_WEIGHTS",
    "SYNTH3_MEANS",
    "SYNTH3_COVS",
]

LOG_2PI = math.log(2 * math.pi)


class NumericalError(ArithmeticError):
    pass


class ComponentModel:
    """Capability contract shared by all component families."""

    conjugate = False
    dim = 1

    # conjugate side
    def suff(self, x):
        raise NotImplementedError

    def empty_stats(self):
        raise NotImplementedError

    def stats_add(self, stats, x):
        return stats + self.suff(np.atleast_2d(x))[0]

    def stats_remove(self, stats, x):
        return stats - self.suff(np.atleast_2d(x))[0]

    def log_marginal(self, stats):
        raise NotImplementedError(f"{type(self).__name__} has no closed-form marginal")

    # parameter side
    def hyper_init(self):
        return {}

    def update_hyper(self, params, hyper, rng):
        return hyper

    def prior_draw(self, rng, hyper, size):
        raise NotImplementedError

    def unstack(self, batch):
        return list(zip(*batch))

    def log_prior(self, theta, hyper):
        raise NotImplementedError

    def log_pdf(self, theta, x):
        raise NotImplementedError

    def log_pdf_each(self, batch, x):
        """log f_{theta_i}(x_i) for a batch of parameters paired with rows of x."""
        return np.array([self.log_pdf(th, xi[None, :])[0] for th, xi in zip(self.unstack(batch), x)])

    def gibbs_param_update(self, theta, xc, hyper, rng):
        raise NotImplementedError

    def log_param_transition(self, theta_from, theta_to, xc, hyper):
        raise NotImplementedError


# ---------------------------------------------------------------------------


class DiagonalGaussianModel(ComponentModel):
    """Independent Normal-Gamma priors on each dimension.

    lambda_i ~ Gamma(a, b) (rate b), mu_i | lambda_i ~ N(0, 1/(c lambda_i)).
    ``a``, ``b``, ``c`` may be scalars or per-dimension arrays.

    Conjugate, but it also implements the parameter interface (with exact
    posterior draws as the "Gibbs" update) so the non-conjugate samplers can
    be checked against exact enumeration.
    """

    conjugate = True

    def __init__(self, d=1, a=1.0, b=1.0, c=1.0):
        self.dim = d
        self.a = np.broadcast_to(np.asarray(a, dtype=float), (d,)).copy()
        self.b = np.broadcast_to(np.asarray(b, dtype=float), (d,)).copy()
        self.c = np.broadcast_to(np.asarray(c, dtype=float), (d,)).copy()
        if np.any(self.a <= 0) or np.any(self.b <= 0) or np.any(self.c <= 0):
            raise ValueError("a, b, c must be positive")
        self._const = gammaln(self.a) - self.a * np.log(self.b) - 0.5 * np.log(self.c)

    def suff(self, x):
        x = np.asarray(x, dtype=float).reshape(len(x), self.dim)
        return np.hstack([np.ones((len(x), 1)), x, x * x])

    def empty_stats(self):
        return np.zeros(1 + 2 * self.dim)

    def _posterior(self, stats):
        d = self.dim
        cnt = stats[..., :1]
        s1 = stats[..., 1 : 1 + d]
        s2 = stats[..., 1 + d :]
        cn = self.c + cnt
        an = self.a + 0.5 * cnt
        bn = self.b + 0.5 * (s2 - s1 * s1 / cn)
        return cnt, s1 / cn, cn, an, bn

    def log_marginal(self, stats):
        stats = np.asarray(stats, dtype=float)
        if stats.ndim == 1 and self.dim == 1:
            return self._log_marginal_scalar(stats[0], stats[1], stats[2])
        cnt, _, cn, an, bn = self._posterior(stats)
        per_dim = gammaln(an) - an * np.log(bn) - 0.5 * np.log(cn) - 0.5 * cnt * LOG_2PI - self._const
        return per_dim.sum(axis=-1)

    def _log_marginal_scalar(self, cnt, s1, s2):
        # same formula as the vectorised path, without array overhead
        a, b, c = float(self.a[0]), float(self.b[0]), float(self.c[0])
        cn = c + cnt
        an = a + 0.5 * cnt
        bn = b + 0.5 * (s2 - s1 * s1 / cn)
        return (math.lgamma(an) - an * math.log(bn) - 0.5 * math.log(cn) - 0.5 * cnt * LOG_2PI
                - float(self._const[0]))

    def prior_draw(self, rng, hyper, size):
        lam = rng.gamma(self.a, 1.0 / self.b, size=(size, self.dim))
        mu = rng.standard_normal((size, self.dim)) / np.sqrt(self.c * lam)
        return mu, lam

    def log_prior(self, theta, hyper):
        mu, lam = theta
        return float(np.sum(_gamma_logpdf(lam, self.a, self.b)
                            + _normal_logpdf(mu, 0.0, 1.0 / (self.c * lam))))

    def log_pdf(self, theta, x):
        mu, lam = theta
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        return np.sum(_normal_logpdf(x, mu, 1.0 / lam), axis=1)

    def log_pdf_each(self, batch, x):
        mu, lam = batch
        return np.sum(_normal_logpdf(x, mu, 1.0 / lam), axis=1)

    def gibbs_param_update(self, theta, xc, hyper, rng):
        stats = self.suff(xc).sum(axis=0) if len(xc) else self.empty_stats()
        _, mn, cn, an, bn = self._posterior(stats)
        lam = rng.gamma(an, 1.0 / bn)
        mu = mn + rng.standard_normal(self.dim) / np.sqrt(cn * lam)
        return mu, lam

    def log_param_transition(self, theta_from, theta_to, xc, hyper):
        stats = self.suff(xc).sum(axis=0) if len(xc) else self.empty_stats()
        _, mn, cn, an, bn = self._posterior(stats)
        mu, lam = theta_to
        return float(np.sum(_gamma_logpdf(lam, an, bn) + _normal_logpdf(mu, mn, 1.0 / (cn * lam))))


def _normal_logpdf(x, mean, var):
    return -0.5 * (LOG_2PI + np.log(var) + (x - mean) ** 2 / var)


def _gamma_logpdf(x, shape, rate):
    return shape * np.log(rate) - gammaln(shape) + (shape - 1) * np.log(x) - rate * x


# ---------------------------------------------------------------------------


class RichardsonGreenModel(ComponentModel):
    """Univariate normal components with independent priors.

    mu ~ N(mu0, sigma0^2), lambda ~ Gamma(a, b), and a hyperprior
    b ~ Gamma(a0, b0).  The current value of b lives in the chain state
    (``hyper["b"]``), not in the model.  Passing ``fixed_b`` drops the
    hyperprior and holds b at that value.
    """

    dim = 1

    def __init__(self, mu0, sigma0, a=2.0, a0=0.2, b0=None, fixed_b=None):
        if not sigma0 > 0:
            raise ValueError("sigma0 must be positive")
        self.mu0 = float(mu0)
        self.sigma0 = float(sigma0)
        self.a = float(a)
        self.a0 = float(a0)
        self.b0 = 10.0 / sigma0**2 if b0 is None else float(b0)
        self.prec0 = 1.0 / self.sigma0**2
        if fixed_b is not None and not fixed_b > 0:
            raise ValueError("fixed_b must be positive")
        self.fixed_b = fixed_b

    @classmethod
    def from_data(cls, x, **kw):
        x = np.asarray(x, dtype=float).ravel()
        hi, lo = float(x.max()), float(x.min())
        return cls(mu0=(hi + lo) / 2, sigma0=hi - lo, **kw)

    def hyper_init(self):
        return {"b": self.a0 / self.b0 if self.fixed_b is None else float(self.fixed_b)}

    def update_hyper(self, params, hyper, rng):
        if self.fixed_b is not None:
            return hyper
        b = update_hyper_b(self, [lam for _, lam in params], rng)
        return {**hyper, "b": b}

    def prior_draw(self, rng, hyper, size):
        mu = self.mu0 + self.sigma0 * rng.standard_normal(size)
        lam = rng.gamma(self.a, 1.0 / hyper["b"], size=size)
        return mu, lam

    def unstack(self, batch):
        mu, lam = batch
        return list(zip(mu.tolist(), lam.tolist()))

    def log_prior(self, theta, hyper):
        mu, lam = theta
        b = hyper["b"]
        return (-0.5 * (LOG_2PI + 2 * math.log(self.sigma0) + (mu - self.mu0) ** 2 * self.prec0)
                + self.a * math.log(b) - math.lgamma(self.a) + (self.a - 1) * math.log(lam) - b * lam)

    def log_pdf(self, theta, x):
        mu, lam = theta
        x = np.asarray(x, dtype=float).reshape(-1)
        return 0.5 * (math.log(lam) - LOG_2PI) - 0.5 * lam * (x - mu) ** 2

    def log_pdf_each(self, batch, x):
        mu, lam = batch
        x = np.asarray(x, dtype=float).reshape(-1)
        return 0.5 * (np.log(lam) - LOG_2PI) - 0.5 * lam * (x - mu) ** 2

    def _mu_conditional(self, lam, xc):
        prec = self.prec0 + len(xc) * lam
        mean = (self.mu0 * self.prec0 + lam * float(np.sum(xc))) / prec
        return mean, prec

    def gibbs_param_update(self, theta, xc, hyper, rng):
        """Draw mu | lambda, then lambda | mu."""
        xc = np.asarray(xc, dtype=float).reshape(-1)
        mean, prec = self._mu_conditional(theta[1], xc)
        mu = mean + rng.standard_normal() / math.sqrt(prec)
        ss = float(np.sum((xc - mu) ** 2))
        lam = rng.gamma(self.a + 0.5 * len(xc), 1.0 / (hyper["b"] + 0.5 * ss))
        return mu, lam

    def log_param_transition(self, theta_from, theta_to, xc, hyper):
        xc = np.asarray(xc, dtype=float).reshape(-1)
        mu, lam = theta_to
        mean, prec = self._mu_conditional(theta_from[1], xc)
        shape = self.a + 0.5 * len(xc)
        rate = hyper["b"] + 0.5 * float(np.sum((xc - mu) ** 2))
        return (0.5 * (math.log(prec) - LOG_2PI) - 0.5 * prec * (mu - mean) ** 2
                + shape * math.log(rate) - math.lgamma(shape) + (shape - 1) * math.log(lam) - rate * lam)


def update_hyper_b(model, lams, rng):
    """Gibbs draw of the rate hyperparameter: Gamma(a0 + a t, b0 + sum lambda_c)."""
    t = len(lams)
    return rng.gamma(model.a0 + model.a * t, 1.0 / (model.b0 + float(np.sum(lams))))


# ---------------------------------------------------------------------------


def _bartlett(rng, chol_scale, df, size):
    """Wishart(scale = L L^T, df) draws via the Bartlett decomposition."""
    d = chol_scale.shape[0]
    A = np.zeros((size, d, d))
    for i in range(d):
        A[:, i, i] = np.sqrt(rng.chisquare(df - i, size=size))
        if i:
            A[:, i, :i] = rng.standard_normal((size, i))
    LA = chol_scale @ A
    return LA @ np.swapaxes(LA, -1, -2)


def _wishart_logpdf(lam, scale_inv, df):
    d = lam.shape[0]
    _, logdet_lam = np.linalg.slogdet(lam)
    _, logdet_sinv = np.linalg.slogdet(scale_inv)
    return (0.5 * (df - d - 1) * logdet_lam - 0.5 * np.trace(scale_inv @ lam)
            - 0.5 * df * d * math.log(2) + 0.5 * df * logdet_sinv - multigammaln(0.5 * df, d))


def _mvn_logpdf_prec(x, mean, prec_chol):
    """log N(x | mean, P^-1) where P = prec_chol prec_chol^T."""
    d = len(mean)
    z = (x - mean) @ prec_chol
    return (np.sum(np.log(np.diag(prec_chol))) - 0.5 * d * LOG_2PI - 0.5 * np.sum(z * z, axis=-1))


def _mvn_logpdf_prec_eigh(x, mean, lam):
    """Same as the Cholesky form for a stack of precisions, via eigh.

    Wishart draws with few degrees of freedom can be singular to rounding;
    a nonpositive eigenvalue gives log density -inf, the limit of a
    vanishing precision direction.
    """
    w, U = np.linalg.eigh(lam)
    z = np.einsum("...i,...ij->...j", x - mean, U)
    ok = np.all(w > 0, axis=-1)
    w = np.where(ok[..., None], w, 1.0)
    out = 0.5 * np.sum(np.log(w), axis=-1) - 0.5 * w.shape[-1] * LOG_2PI - 0.5 * np.sum(w * z * z, axis=-1)
    return np.where(ok, out, -np.inf)


class MvnIndepWishartModel(ComponentModel):
    """Multivariate normal components, mu ~ N(mu_hat, C_hat) and
    Lambda ~ Wishart(V, nu) independently.  Parameters are (mu, Lambda)
    with Lambda the precision matrix."""

    def __init__(self, mu_hat, C_hat, nu=None, V=None):
        self.mu_hat = np.asarray(mu_hat, dtype=float)
        self.C_hat = np.asarray(C_hat, dtype=float)
        d = self.dim = len(self.mu_hat)
        if not np.allclose(self.C_hat, self.C_hat.T):
            raise ValueError("C_hat must be symmetric")
        self.C_chol = np.linalg.cholesky(self.C_hat)
        self.C_inv = np.linalg.inv(self.C_hat)
        self.nu = float(d if nu is None else nu)
        self.V = self.C_inv / self.nu if V is None else np.asarray(V, dtype=float)
        self.V_inv = np.linalg.inv(self.V)
        self.V_chol = np.linalg.cholesky(self.V)
        self.C_inv_mu = self.C_inv @ self.mu_hat
        self.C_inv_chol = np.linalg.cholesky(self.C_inv)

    @classmethod
    def from_data(cls, x):
        x = np.asarray(x, dtype=float)
        return cls(x.mean(axis=0), np.cov(x, rowvar=False))

    def prior_draw(self, rng, hyper, size):
        mu = self.mu_hat + rng.standard_normal((size, self.dim)) @ self.C_chol.T
        return mu, _bartlett(rng, self.V_chol, self.nu, size)

    def unstack(self, batch):
        mu, lam = batch
        return list(zip(mu, lam))

    def log_prior(self, theta, hyper):
        mu, lam = theta
        return float(_mvn_logpdf_prec(mu, self.mu_hat, self.C_inv_chol)
                     + _wishart_logpdf(lam, self.V_inv, self.nu))

    def log_pdf(self, theta, x):
        mu, lam = theta
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        try:
            return _mvn_logpdf_prec(x, mu, np.linalg.cholesky(lam))
        except np.linalg.LinAlgError:
            return _mvn_logpdf_prec_eigh(x, mu, lam)

    def log_pdf_each(self, batch, x):
        mu, lam = batch
        try:
            L = np.linalg.cholesky(lam)
        except np.linalg.LinAlgError:
            return _mvn_logpdf_prec_eigh(x, mu, lam)
        z = np.einsum("mi,mij->mj", x - mu, L)
        logdet = np.sum(np.log(np.diagonal(L, axis1=1, axis2=2)), axis=1)
        return logdet - 0.5 * self.dim * LOG_2PI - 0.5 * np.sum(z * z, axis=1)

    def _mu_conditional(self, lam, xc):
        P = self.C_inv + len(xc) * lam
        Pc = np.linalg.cholesky(P)
        rhs = self.C_inv_mu + lam @ xc.sum(axis=0)
        mean = np.linalg.solve(P, rhs)
        return mean, Pc

    def _lam_conditional(self, mu, xc):
        diff = xc - mu
        scale_inv = self.V_inv + diff.T @ diff
        scale_inv = 0.5 * (scale_inv + scale_inv.T)
        return scale_inv, self.nu + len(xc)

    def gibbs_param_update(self, theta, xc, hyper, rng):
        """Draw mu | Lambda, then Lambda | mu."""
        xc = np.asarray(xc, dtype=float).reshape(-1, self.dim)
        mean, Pc = self._mu_conditional(theta[1], xc)
        mu = mean + np.linalg.solve(Pc.T, rng.standard_normal(self.dim))
        scale_inv, df = self._lam_conditional(mu, xc)
        try:
            chol = np.linalg.cholesky(np.linalg.inv(scale_inv))
        except np.linalg.LinAlgError:
            diff = xc - mu
            rebuilt = self.V_inv + np.einsum("ni,nj->ij", diff, diff)
            try:
                chol = np.linalg.cholesky(np.linalg.inv(0.5 * (rebuilt + rebuilt.T)))
            except np.linalg.LinAlgError as err:
                raise NumericalError("Wishart conditional scale is not positive definite") from err
        lam = _bartlett(rng, chol, df, 1)[0]
        return mu, lam

    def log_param_transition(self, theta_from, theta_to, xc, hyper):
        xc = np.asarray(xc, dtype=float).reshape(-1, self.dim)
        mu, lam = theta_to
        mean, Pc = self._mu_conditional(theta_from[1], xc)
        scale_inv, df = self._lam_conditional(mu, xc)
        return float(_mvn_logpdf_prec(mu, mean, Pc) + _wishart_logpdf(lam, scale_inv, df))


# ---------------------------------------------------------------------------
# three-component bivariate benchmark

SYNTH3_WEIGHTS = np.array([0.45, 0.3, 0.25])
SYNTH3_MEANS = np.array([[4.0, 4.0], [7.0, 4.0], [6.0, 2.0]])
_rho = math.pi / 4
_R = np.array([[math.cos(_rho), -math.sin(_rho)], [math.sin(_rho), math.cos(_rho)]])
SYNTH3_COVS = np.array([np.eye(2), _R @ np.diag([2.5, 0.2]) @ _R.T, np.diag([3.0, 0.1])])


def synth_three_component(n, rng):
    """Draw n points from the three-component mixture; returns (x, labels)."""
    if n < 1:
        raise ValueError("n must be at least 1")
    labels = rng.choice(3, size=n, p=SYNTH3_WEIGHTS)
    z = rng.standard_normal((n, 2))
    chols = np.linalg.cholesky(SYNTH3_COVS)
    x = SYNTH3_MEANS[labels] + np.einsum("nij,nj->ni", chols[labels], z)
    return x, labels


def synth3_logpdf(x):
    """True log density of the three-component mixture at the rows of x."""
    x = np.asarray(x, dtype=float).reshape(-1, 2)
    comps = []
    for w, m, C in zip(SYNTH3_WEIGHTS, SYNTH3_MEANS, SYNTH3_COVS):
        P = np.linalg.inv(C)
        comps.append(math.log(w) + _mvn_logpdf_prec(x, m, np.linalg.cholesky(P)))
    return np.logaddexp.reduce(np.array(comps), axis=0)


def synth_expression(rng, sizes=(24, 20, 28), d=1081, informative=0.3, shift_sd=1.0, noise_sd=1.0):
    """Positive expression-like matrix with one group per entry of ``sizes``.

    Each gene has a baseline log2 level; a fraction ``informative`` of genes
    get a group-specific log2 shift.  Returns (2**log_levels, labels).
    """
    sizes = tuple(int(s) for s in sizes)
    if not sizes or min(sizes) < 1 or d < 1:
        raise ValueError("need at least one nonempty group and d >= 1")
    labels = np.repeat(np.arange(len(sizes)), sizes)
    base = rng.normal(7.0, 1.5, size=d)
    shifts = rng.normal(0.0, shift_sd, size=(len(sizes), d)) * (rng.random(d) < informative)
    sd = noise_sd * rng.uniform(0.5, 1.5, size=d)
    logx = base + shifts[labels] + sd * rng.standard_normal((len(labels), d))
    return 2.0 ** logx, labels
