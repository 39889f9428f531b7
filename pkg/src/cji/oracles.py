"""Analytic score and velocity oracles with exact Jacobian-vector products.

Gaussian and Gaussian-mixture data distributions (diagonal covariances) admit
closed-form marginals under both the diffusion kernel and the straight-line
interpolant, so the noise estimate eps(x, t), the velocity b(x, t), their
Jacobians, and the posterior p(x0 | y) under a linear observation are all
exact.  These stand in for pretrained networks when verifying samplers.

Conventions: eps = -sigma_t * score (standard noise prediction), and all
oracle methods broadcast over leading batch axes of x.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .schedules import DEFAULT_T_FLOOR, DiffusionSchedule, FlowSchedule


@dataclass(frozen=True)
class GaussianModel:
    """Diagonal Gaussian data distribution."""

    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        var = np.asarray(self.var, dtype=float)
        if mean.shape != var.shape or mean.ndim != 1:
            raise ConfigError("mean and var must be 1-d arrays of equal length")
        if np.any(var <= 0):
            raise ConfigError("variances must be strictly positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "var", var)

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass(frozen=True)
class MixtureModel:
    """Finite mixture of diagonal Gaussians; weights must sum to 1."""

    weights: np.ndarray
    components: tuple

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=float)
        comps = tuple(self.components)
        if weights.ndim != 1 or weights.size != len(comps):
            raise ConfigError("one weight per component required")
        if np.any(weights <= 0):
            raise ConfigError("weights must be positive")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise ConfigError("weights must sum to 1 within 1e-12")
        dims = {c.dim for c in comps}
        if len(dims) != 1:
            raise ConfigError("components must share a dimension")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "components", comps)

    @property
    def dim(self) -> int:
        return self.components[0].dim

    def sample(self, rng, n: int) -> np.ndarray:
        ks = rng.choice(len(self.components), size=n, p=self.weights)
        out = np.empty((n, self.dim))
        for i, k in enumerate(ks):
            c = self.components[k]
            out[i] = c.mean + np.sqrt(c.var) * rng.standard_normal(self.dim)
        return out


def as_mixture(model) -> MixtureModel:
    if isinstance(model, MixtureModel):
        return model
    return MixtureModel(weights=np.array([1.0]), components=(model,))


def _marginal_coeffs(model: MixtureModel, scale: float, noise_sq: float):
    """Per-component marginal means/variances when x_t = scale*x + noise."""
    means = np.stack([scale * c.mean for c in model.components])
    variances = np.stack([scale * scale * c.var + noise_sq for c in model.components])
    return means, variances


def _mixture_score_parts(x, log_w, means, variances):
    """Responsibilities and per-component scores of a diagonal mixture.

    x: (..., d); means/variances: (K, d).  Returns (resp (..., K),
    comp_scores (..., K, d)).
    """
    diff = x[..., None, :] - means  # (..., K, d)
    log_comp = -0.5 * np.sum(diff * diff / variances + np.log(2.0 * np.pi * variances), axis=-1)
    logits = log_w + log_comp
    logits = logits - logits.max(axis=-1, keepdims=True)
    resp = np.exp(logits)
    resp /= resp.sum(axis=-1, keepdims=True)
    comp_scores = -diff / variances
    return resp, comp_scores


def _mixture_score(x, log_w, means, variances):
    resp, comp_scores = _mixture_score_parts(x, log_w, means, variances)
    return np.sum(resp[..., None] * comp_scores, axis=-2)


def _mixture_hessian_vec(x, v, log_w, means, variances):
    """(Hessian of log density) @ v for the diagonal mixture."""
    resp, comp_scores = _mixture_score_parts(x, log_w, means, variances)
    score = np.sum(resp[..., None] * comp_scores, axis=-2)
    gv = np.sum(comp_scores * v[..., None, :], axis=-1)  # (..., K)
    term = np.sum(resp[..., None] * (comp_scores * gv[..., None] - v[..., None, :] / variances), axis=-2)
    return term - score * np.sum(score * v, axis=-1, keepdims=True)


def _mixture_logpdf(x, log_w, means, variances):
    diff = x[..., None, :] - means
    log_comp = -0.5 * np.sum(diff * diff / variances + np.log(2.0 * np.pi * variances), axis=-1)
    logits = log_w + log_comp
    peak = logits.max(axis=-1)
    return peak + np.log(np.sum(np.exp(logits - peak[..., None]), axis=-1))


class MixtureDiffusionOracle:
    """Noise-prediction oracle for mixture data under the diffusion kernel."""

    def __init__(self, model, sched: DiffusionSchedule):
        self.model = as_mixture(model)
        self.sched = sched
        self._log_w = np.log(self.model.weights)

    @property
    def dim(self):
        return self.model.dim

    def _coeffs(self, t):
        t = float(t)
        if t < DEFAULT_T_FLOOR:
            raise ValueError(f"eps is undefined below the time floor {DEFAULT_T_FLOOR}")
        mu = float(self.sched.mu(t))
        sigma = float(self.sched.sigma(t))
        return mu, sigma, *_marginal_coeffs(self.model, mu, sigma * sigma)

    def score(self, x, t):
        _, _, means, variances = self._coeffs(t)
        return _mixture_score(np.asarray(x, dtype=float), self._log_w, means, variances)

    def log_density(self, x, t):
        _, _, means, variances = self._coeffs(t)
        return _mixture_logpdf(np.asarray(x, dtype=float), self._log_w, means, variances)

    def eps(self, x, t):
        _, sigma, means, variances = self._coeffs(t)
        return -sigma * _mixture_score(np.asarray(x, dtype=float), self._log_w, means, variances)

    def eps_jvp(self, x, t, v):
        _, sigma, means, variances = self._coeffs(t)
        hv = _mixture_hessian_vec(np.asarray(x, dtype=float), np.asarray(v, dtype=float),
                                  self._log_w, means, variances)
        return -sigma * hv

    def x0_mean(self, x, t):
        """Exact conditional mean E[x0 | x_t] (responsibility-weighted)."""
        x = np.asarray(x, dtype=float)
        mu, sigma, means, variances = self._coeffs(t)
        resp, _ = _mixture_score_parts(x, self._log_w, means, variances)
        prior_means = np.stack([c.mean for c in self.model.components])
        prior_vars = np.stack([c.var for c in self.model.components])
        comp_post = (sigma ** 2 * prior_means + mu * prior_vars * x[..., None, :]) / variances
        return np.sum(resp[..., None] * comp_post, axis=-2)


class GaussianDiffusionOracle:
    """Single-Gaussian special case with direct coordinate-wise formulas."""

    def __init__(self, model: GaussianModel, sched: DiffusionSchedule):
        self.model = model
        self.sched = sched

    @property
    def dim(self):
        return self.model.dim

    def _coeffs(self, t):
        t = float(t)
        if t < DEFAULT_T_FLOOR:
            raise ValueError(f"eps is undefined below the time floor {DEFAULT_T_FLOOR}")
        mu = float(self.sched.mu(t))
        sigma = float(self.sched.sigma(t))
        var = mu * mu * self.model.var + sigma * sigma
        return mu, sigma, var

    def eps(self, x, t):
        mu, sigma, var = self._coeffs(t)
        return sigma * (np.asarray(x, dtype=float) - mu * self.model.mean) / var

    def eps_jvp(self, x, t, v):
        _, sigma, var = self._coeffs(t)
        return sigma * np.asarray(v, dtype=float) / var

    def x0_mean(self, x, t):
        mu, sigma, var = self._coeffs(t)
        num = sigma ** 2 * self.model.mean + mu * self.model.var * np.asarray(x, dtype=float)
        return num / var


class MixtureFlowOracle:
    """Velocity oracle for mixture data under the straight-line interpolant."""

    def __init__(self, model, sched: FlowSchedule | None = None):
        self.model = as_mixture(model)
        self.sched = sched or FlowSchedule()
        self._log_w = np.log(self.model.weights)

    @property
    def dim(self):
        return self.model.dim

    def _coeffs(self, t):
        t = float(t)
        if t <= 0:
            raise ValueError("velocity is undefined at t = 0 (alpha_t = 0)")
        alpha = float(self.sched.alpha(t))
        gamma = float(self.sched.gamma(t))
        means, variances = _marginal_coeffs(self.model, alpha, gamma * gamma)
        return alpha, gamma, means, variances

    def score(self, x, t):
        _, _, means, variances = self._coeffs(t)
        return _mixture_score(np.asarray(x, dtype=float), self._log_w, means, variances)

    def log_density(self, x, t):
        _, _, means, variances = self._coeffs(t)
        return _mixture_logpdf(np.asarray(x, dtype=float), self._log_w, means, variances)

    def velocity(self, x, t):
        x = np.asarray(x, dtype=float)
        alpha, gamma, means, variances = self._coeffs(t)
        score = _mixture_score(x, self._log_w, means, variances)
        # gamma*alpha_dot - gamma_dot*alpha = 1 for the straight-line path
        return x / alpha + (gamma / alpha) * score

    def velocity_jvp(self, x, t, v):
        alpha, gamma, means, variances = self._coeffs(t)
        hv = _mixture_hessian_vec(np.asarray(x, dtype=float), np.asarray(v, dtype=float),
                                  self._log_w, means, variances)
        return np.asarray(v, dtype=float) / alpha + (gamma / alpha) * hv

    def x1_mean(self, x, t):
        """Exact conditional mean E[x1 | x_t]."""
        x = np.asarray(x, dtype=float)
        alpha, _, means, variances = self._coeffs(t)
        resp, _ = _mixture_score_parts(x, self._log_w, means, variances)
        prior_means = np.stack([c.mean for c in self.model.components])
        prior_vars = np.stack([c.var for c in self.model.components])
        gamma2 = variances - alpha * alpha * prior_vars
        comp_post = (gamma2 * prior_means + alpha * prior_vars * x[..., None, :]) / variances
        return np.sum(resp[..., None] * comp_post, axis=-2)


class GaussianFlowOracle:
    """Single-Gaussian flow oracle."""

    def __init__(self, model: GaussianModel, sched: FlowSchedule | None = None):
        self.model = model
        self.sched = sched or FlowSchedule()

    @property
    def dim(self):
        return self.model.dim

    def _coeffs(self, t):
        t = float(t)
        if t <= 0:
            raise ValueError("velocity is undefined at t = 0 (alpha_t = 0)")
        alpha = float(self.sched.alpha(t))
        gamma = float(self.sched.gamma(t))
        var = alpha * alpha * self.model.var + gamma * gamma
        return alpha, gamma, var

    def velocity(self, x, t):
        x = np.asarray(x, dtype=float)
        alpha, gamma, var = self._coeffs(t)
        score = -(x - alpha * self.model.mean) / var
        return x / alpha + (gamma / alpha) * score

    def velocity_jvp(self, x, t, v):
        alpha, gamma, var = self._coeffs(t)
        v = np.asarray(v, dtype=float)
        return v / alpha - (gamma / alpha) * v / var

    def x1_mean(self, x, t):
        alpha, gamma, var = self._coeffs(t)
        num = gamma ** 2 * self.model.mean + alpha * self.model.var * np.asarray(x, dtype=float)
        return num / var


def finite_difference_jvp(fn, x, t, v, *, base_step: float = 1e-4):
    """Central-difference Jacobian-vector product of fn(x, t) along v.

    Step h = base_step * (1 + max|x|) / max(max|v|, 1e-12) balances
    truncation against round-off in double precision.
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    h = base_step * (1.0 + np.abs(x).max()) / max(np.abs(v).max(), 1e-12)
    return (fn(x + h * v, t) - fn(x - h * v, t)) / (2.0 * h)


class FiniteDifferenceJVP:
    """Wraps an oracle, replacing its analytic JVP by central differences."""

    def __init__(self, oracle):
        self._oracle = oracle

    @property
    def dim(self):
        return self._oracle.dim

    def eps(self, x, t):
        return self._oracle.eps(x, t)

    def eps_jvp(self, x, t, v):
        return finite_difference_jvp(self._oracle.eps, x, t, v)

    def velocity(self, x, t):
        return self._oracle.velocity(x, t)

    def velocity_jvp(self, x, t, v):
        return finite_difference_jvp(self._oracle.velocity, x, t, v)


def tweedie_diffusion(x, t, eps, sched: DiffusionSchedule):
    """Posterior-mean denoiser: x0_hat = (x - sigma_t * eps) / mu_t."""
    mu = float(sched.mu(t))
    sigma = float(sched.sigma(t))
    return (np.asarray(x, dtype=float) - sigma * np.asarray(eps, dtype=float)) / mu


def tweedie_flow(x, t, b, sched: FlowSchedule | None = None):
    """Endpoint estimate from the velocity: x1_hat = x + (1 - t) * b for the
    straight-line path (general form (-gamma_dot x + gamma b) / (gamma
    alpha_dot - gamma_dot alpha))."""
    sched = sched or FlowSchedule()
    gamma = float(sched.gamma(t))
    gdot = float(sched.gamma_dot(t))
    adot = float(sched.alpha_dot(t))
    alpha = float(sched.alpha(t))
    denom = gamma * adot - gdot * alpha
    return (-gdot * np.asarray(x, dtype=float) + gamma * np.asarray(b, dtype=float)) / denom


@dataclass(frozen=True)
class PosteriorResult:
    mean: np.ndarray
    cov: np.ndarray

    def marginal_std(self):
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))


def exact_posterior(model: GaussianModel, op, y, sigma_y: float) -> PosteriorResult:
    """Exact p(x0 | y) for a Gaussian prior and linear observation.

    sigma_y = 0 conditions on the exact constraint H x = y; otherwise the
    information-form update applies.  Mixture priors are unsupported here.
    """
    if not isinstance(model, GaussianModel):
        raise ConfigError("exact_posterior supports Gaussian priors only")
    y = np.asarray(y, dtype=float)
    H = op.dense()
    prior_cov = np.diag(model.var)
    if sigma_y < 0:
        raise ConfigError("sigma_y must be >= 0")
    if sigma_y == 0:
        gram = H @ prior_cov @ H.T
        gain = prior_cov @ H.T @ np.linalg.inv(gram)
        mean = model.mean + gain @ (y - H @ model.mean)
        cov = prior_cov - gain @ H @ prior_cov
        return PosteriorResult(mean=mean, cov=cov)
    prec = np.diag(1.0 / model.var) + (H.T @ H) / sigma_y ** 2
    cov = np.linalg.inv(prec)
    mean = cov @ (model.mean / model.var + (H.T @ y) / sigma_y ** 2)
    return PosteriorResult(mean=mean, cov=cov)


def mask_mixture_posterior_mean(model: MixtureModel, indices, y, dim: int) -> np.ndarray:
    """Exact posterior mean for a mixture prior observed through a noiseless
    coordinate mask: components re-weighted by their likelihood of the
    observed block, observed coordinates pinned to y."""
    model = as_mixture(model)
    indices = np.asarray(indices, dtype=int)
    y = np.asarray(y, dtype=float)
    log_post = []
    for wgt, comp in zip(model.weights, model.components):
        m_o = comp.mean[indices]
        v_o = comp.var[indices]
        ll = -0.5 * np.sum((y - m_o) ** 2 / v_o + np.log(2.0 * np.pi * v_o))
        log_post.append(np.log(wgt) + ll)
    log_post = np.asarray(log_post)
    resp = np.exp(log_post - log_post.max())
    resp /= resp.sum()
    mean = np.zeros(dim)
    for r, comp in zip(resp, model.components):
        contrib = comp.mean.copy()
        contrib[indices] = y
        mean += r * contrib
    return mean
