"""Real-valued NADE: the weight-tied autoregressive skeleton with parametric
one-dimensional conditionals (Gaussian, Laplace, and mixtures thereof) whose
parameters are produced by per-dimension output heads.
"""

from dataclasses import dataclass, field

import numpy as np

from .util import (
    SIGMA_FLOOR,
    DomainError,
    ShapeError,
    check_ordering,
    logsumexp,
    sigmoid,
    softmax,
    uniform_init,
)

HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)

BERNOULLI = "bernoulli"
FIXED_VAR_GAUSSIAN = "fixed_var_gaussian"
GAUSSIAN = "gaussian"
LAPLACE = "laplace"
MOG = "mog"
MOL = "mol"

_KINDS = (BERNOULLI, FIXED_VAR_GAUSSIAN, GAUSSIAN, LAPLACE, MOG, MOL)
# Component grid used when cross-validating mixture sizes.
COMPONENT_GRID = (2, 5, 10, 20)


@dataclass(frozen=True)
class ConditionalFamily:
    """Which one-dimensional distribution each conditional uses.

    n_components matters only for the mixture kinds; the single-component
    kinds pin it to 1.
    """

    kind: str
    n_components: int = 1

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise DomainError(f"unknown conditional family {self.kind!r}")
        if self.n_components < 1:
            raise DomainError("n_components must be >= 1")
        if self.kind not in (MOG, MOL) and self.n_components != 1:
            raise DomainError(f"{self.kind} admits exactly one component")

    @property
    def C(self):
        return self.n_components

    @property
    def is_laplace(self):
        return self.kind in (LAPLACE, MOL)

    @property
    def has_pi_head(self):
        return self.kind in (MOG, MOL)

    @property
    def has_sigma_head(self):
        return self.kind in (GAUSSIAN, LAPLACE, MOG, MOL)

    def _check_real(self):
        if self.kind == BERNOULLI:
            raise DomainError(
                "bernoulli conditionals belong to the binary model, not RNADE"
            )


@dataclass
class MixtureParams1D:
    """One conditional's mixture: weights on the simplex, locations, scales."""

    pi: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray


@dataclass
class RnadeParams:
    """Shared hidden side (W: (H, D), c: (H,)) plus per-dimension output heads.

    Heads are stored dimension-major: V_theta[d] is the (C, H) matrix that maps
    the hidden vector to dimension d's C outputs in one product.  The pi head
    exists only for mixtures, the sigma head for everything except the
    fixed-variance family (which uses the global scalar sigma_global).
    """

    family: ConditionalFamily
    W: np.ndarray
    c: np.ndarray
    V_mu: np.ndarray  # (D, C, H)
    b_mu: np.ndarray  # (D, C)
    V_sigma: np.ndarray | None = None
    b_sigma: np.ndarray | None = None
    V_pi: np.ndarray | None = None
    b_pi: np.ndarray | None = None
    sigma_global: float = 1.0
    activation: str = "relu"  # 'relu' or 'sigmoid'

    @property
    def H(self):
        return self.W.shape[0]

    @property
    def D(self):
        return self.W.shape[1]

    def validate(self):
        self.family._check_real()
        H, D = self.W.shape
        C = self.family.C
        if self.c.shape != (H,) or self.V_mu.shape != (D, C, H) or self.b_mu.shape != (D, C):
            raise ShapeError("inconsistent hidden/mu-head shapes")
        if self.family.has_sigma_head:
            if self.V_sigma is None or self.V_sigma.shape != (D, C, H):
                raise ShapeError("sigma head missing or mis-shaped")
        elif self.V_sigma is not None:
            raise ShapeError("fixed-variance family carries no sigma head")
        if self.family.has_pi_head:
            if self.V_pi is None or self.V_pi.shape != (D, C, H):
                raise ShapeError("pi head missing or mis-shaped")
        elif self.V_pi is not None:
            raise ShapeError("single-component family carries no pi head")
        if self.activation not in ("relu", "sigmoid"):
            raise ShapeError(f"unknown activation {self.activation!r}")

    def blocks(self):
        out = {"W": self.W, "c": self.c, "V_mu": self.V_mu, "b_mu": self.b_mu}
        if self.family.has_sigma_head:
            out["V_sigma"] = self.V_sigma
            out["b_sigma"] = self.b_sigma
        if self.family.has_pi_head:
            out["V_pi"] = self.V_pi
            out["b_pi"] = self.b_pi
        return out


@dataclass
class RnadeTrace:
    """Forward record: hidden recurrence states plus each dimension's mixture."""

    a: np.ndarray  # (D, H)
    h: np.ndarray  # (D, H)
    mixtures: list  # D MixtureParams1D, in ordering position
    logps: np.ndarray  # (D,) per-dimension log-densities
    logp: float = field(default=0.0)


def init_rnade_params(D, H, family, rng, activation="relu"):
    family._check_real()
    C = family.C
    params = RnadeParams(
        family=family,
        W=uniform_init(rng, (H, D), D),
        c=np.zeros(H),
        V_mu=uniform_init(rng, (D, C, H), H),
        b_mu=np.zeros((D, C)),
        activation=activation,
    )
    if family.has_sigma_head:
        params.V_sigma = uniform_init(rng, (D, C, H), H)
        params.b_sigma = np.zeros((D, C))
    if family.has_pi_head:
        params.V_pi = uniform_init(rng, (D, C, H), H)
        params.b_pi = np.zeros((D, C))
    return params


def _activate(params, a):
    if params.activation == "relu":
        return np.maximum(a, 0.0)
    return sigmoid(a)


def conditional_params(params, dim, h):
    """Mixture parameters for variable `dim` given a hidden vector.

    pi via softmax of the pi-head outputs (uniform when absent), mu equal to
    the mu-head outputs, sigma = exp(sigma-head outputs) floored at
    SIGMA_FLOOR (or the global constant for the fixed-variance family).
    """
    params.family._check_real()
    C = params.family.C
    if params.family.has_pi_head:
        pi = softmax(params.b_pi[dim] + params.V_pi[dim] @ h)
    else:
        pi = np.ones(C)
    mu = params.b_mu[dim] + params.V_mu[dim] @ h
    if params.family.has_sigma_head:
        sigma = np.maximum(np.exp(params.b_sigma[dim] + params.V_sigma[dim] @ h), SIGMA_FLOOR)
    else:
        sigma = np.full(C, params.sigma_global)
    return MixtureParams1D(pi=pi, mu=mu, sigma=sigma)


def log_density_1d(family, mix, v):
    """log sum_c pi_c f(v; mu_c, sigma_c) via log-sum-exp."""
    family._check_real()
    if family.is_laplace:
        comp = -np.abs(v - mix.mu) / mix.sigma - np.log(2.0 * mix.sigma)
    else:
        z = (v - mix.mu) / mix.sigma
        comp = -0.5 * z * z - np.log(mix.sigma) - HALF_LOG_2PI
    return float(logsumexp(np.log(mix.pi) + comp))


def log_prob(params, o, x):
    """Exact log-density of a real vector; same O(HD) recurrence as the
    binary model, with x_{o_d} entering the pre-activation as a real scalar."""
    params.validate()
    D, H = params.D, params.H
    o = check_ordering(o, D)
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (D,):
        raise ShapeError(f"input has shape {x.shape}, expected ({D},)")

    a_all = np.empty((D, H))
    h_all = np.empty((D, H))
    mixtures = []
    logps = np.empty(D)
    a = params.c.copy()
    for d in range(D):
        od = o[d]
        h = _activate(params, a)
        mix = conditional_params(params, od, h)
        a_all[d] = a
        h_all[d] = h
        mixtures.append(mix)
        logps[d] = log_density_1d(params.family, mix, x[od])
        a = a + params.W[:, od] * x[od]
    return RnadeTrace(a=a_all, h=h_all, mixtures=mixtures, logps=logps, logp=float(logps.sum()))


def _batch_heads(params, dim, Hd):
    """Mixture parameters for one dimension across a batch of hidden rows."""
    N = Hd.shape[0]
    C = params.family.C
    mu = Hd @ params.V_mu[dim].T + params.b_mu[dim]
    if params.family.has_pi_head:
        pi = softmax(Hd @ params.V_pi[dim].T + params.b_pi[dim], axis=1)
    else:
        pi = np.ones((N, C))
    if params.family.has_sigma_head:
        sigma = np.maximum(np.exp(Hd @ params.V_sigma[dim].T + params.b_sigma[dim]), SIGMA_FLOOR)
    else:
        sigma = np.full((N, C), params.sigma_global)
    return pi, mu, sigma


def _component_logpdf(family, v, mu, sigma):
    """Per-component log-densities; v broadcasts against (N, C) parameters."""
    if family.is_laplace:
        return -np.abs(v - mu) / sigma - np.log(2.0 * sigma)
    z = (v - mu) / sigma
    return -0.5 * z * z - np.log(sigma) - HALF_LOG_2PI


def log_prob_batch(params, o, X):
    """Log-densities for N examples sharing one ordering; returns (N,) array."""
    params.validate()
    D = params.D
    o = check_ordering(o, D)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != D:
        raise ShapeError(f"batch has shape {X.shape}, expected (N, {D})")
    N = X.shape[0]

    A = np.repeat(params.c[None, :], N, axis=0)
    logps = np.zeros(N)
    for d in range(D):
        od = o[d]
        Hd = _activate(params, A)
        pi, mu, sigma = _batch_heads(params, od, Hd)
        comp = _component_logpdf(params.family, X[:, od : od + 1], mu, sigma)
        logps += logsumexp(np.log(pi) + comp, axis=1)
        A += np.outer(X[:, od], params.W[:, od])
    return logps


@dataclass
class RnadeGrad:
    """Gradient of -log p(x) for every block present in the model."""

    dW: np.ndarray
    dc: np.ndarray
    dV_mu: np.ndarray
    db_mu: np.ndarray
    dV_sigma: np.ndarray | None = None
    db_sigma: np.ndarray | None = None
    dV_pi: np.ndarray | None = None
    db_pi: np.ndarray | None = None

    def blocks(self):
        out = {"W": self.dW, "c": self.dc, "V_mu": self.dV_mu, "b_mu": self.db_mu}
        if self.dV_sigma is not None:
            out["V_sigma"] = self.dV_sigma
            out["b_sigma"] = self.db_sigma
        if self.dV_pi is not None:
            out["V_pi"] = self.dV_pi
            out["b_pi"] = self.db_pi
        return out


def _zero_grad(params):
    g = RnadeGrad(
        dW=np.zeros_like(params.W),
        dc=np.zeros_like(params.c),
        dV_mu=np.zeros_like(params.V_mu),
        db_mu=np.zeros_like(params.b_mu),
    )
    if params.family.has_sigma_head:
        g.dV_sigma = np.zeros_like(params.V_sigma)
        g.db_sigma = np.zeros_like(params.b_sigma)
    if params.family.has_pi_head:
        g.dV_pi = np.zeros_like(params.V_pi)
        g.db_pi = np.zeros_like(params.b_pi)
    return g


def _output_deltas(family, v, pi, mu, sigma, scale_mean_grad_by_sigma):
    """Backward signals at the head outputs for -log density at v.

    Works on (N, C) arrays.  Returns (dz_pi, dz_mu, dz_sigma, responsibilities);
    entries are None where the corresponding head does not exist.
    The sigma-scaling heuristic multiplies the mean signal by sigma before it
    is propagated into the mu head (and onward into the hidden layers).
    """
    comp = _component_logpdf(family, v, mu, sigma)
    logw = np.log(pi) + comp
    resp = np.exp(logw - logsumexp(logw, axis=1)[:, None])

    if family.is_laplace:
        dz_mu = -resp * np.sign(v - mu) / sigma
        dz_sigma = resp * (1.0 - np.abs(v - mu) / sigma)
    else:
        dz_mu = resp * (mu - v) / (sigma * sigma)
        dz_sigma = resp * (1.0 - ((v - mu) / sigma) ** 2)
    if scale_mean_grad_by_sigma:
        dz_mu = dz_mu * sigma
    dz_pi = pi - resp if family.has_pi_head else None
    if not family.has_sigma_head:
        dz_sigma = None
    return dz_pi, dz_mu, dz_sigma, resp


def grad_nll(params, o, x, scale_mean_grad_by_sigma=False):
    """Exact gradient of -log p(x) (optionally with the sigma-scaled mean
    signal); returns (RnadeGrad, RnadeTrace)."""
    g, nll = grad_nll_batch(
        params, o, np.asarray(x, dtype=np.float64)[None, :], scale_mean_grad_by_sigma
    )
    return g, log_prob(params, o, x)


def grad_nll_batch(params, o, X, scale_mean_grad_by_sigma=False):
    """Mean gradient of -log p over a batch; returns (RnadeGrad, mean_nll)."""
    params.validate()
    D, H = params.D, params.H
    C = params.family.C
    o = check_ordering(o, D)
    X = np.asarray(X, dtype=np.float64)
    N = X.shape[0]

    A = np.repeat(params.c[None, :], N, axis=0)
    H_all = np.empty((N, D, H))
    A_all = np.empty((N, D, H))
    logps = np.zeros(N)
    heads = []
    for d in range(D):
        od = o[d]
        A_all[:, d, :] = A
        Hd = _activate(params, A)
        H_all[:, d, :] = Hd
        pi, mu, sigma = _batch_heads(params, od, Hd)
        heads.append((pi, mu, sigma))
        comp = _component_logpdf(params.family, X[:, od : od + 1], mu, sigma)
        logps += logsumexp(np.log(pi) + comp, axis=1)
        A += np.outer(X[:, od], params.W[:, od])

    g = _zero_grad(params)
    delta_a = np.zeros((N, H))
    for d in range(D - 1, -1, -1):
        od = o[d]
        Hd = H_all[:, d, :]
        pi, mu, sigma = heads[d]
        v = X[:, od : od + 1]
        dz_pi, dz_mu, dz_sigma, _ = _output_deltas(
            params.family, v, pi, mu, sigma, scale_mean_grad_by_sigma
        )
        delta_h = dz_mu @ params.V_mu[od]
        g.db_mu[od] = dz_mu.sum(axis=0) / N
        g.dV_mu[od] = (dz_mu.T @ Hd) / N
        if dz_sigma is not None:
            delta_h += dz_sigma @ params.V_sigma[od]
            g.db_sigma[od] = dz_sigma.sum(axis=0) / N
            g.dV_sigma[od] = (dz_sigma.T @ Hd) / N
        if dz_pi is not None:
            delta_h += dz_pi @ params.V_pi[od]
            g.db_pi[od] = dz_pi.sum(axis=0) / N
            g.dV_pi[od] = (dz_pi.T @ Hd) / N
        if params.activation == "relu":
            act_grad = (A_all[:, d, :] > 0.0).astype(np.float64)
        else:
            act_grad = Hd * (1.0 - Hd)
        term = delta_h * act_grad
        g.dc += term.sum(axis=0) / N
        g.dW[:, od] = (delta_a.T @ X[:, od]) / N
        delta_a += term
    return g, float(-logps.mean())


def sample(params, o, rng):
    """One ancestral sample; per dimension draw a component then a scalar."""
    return sample_batch(params, o, rng, 1)[0]


def sample_batch(params, o, rng, n):
    params.validate()
    D = params.D
    o = check_ordering(o, D)
    X = np.zeros((n, D))
    A = np.repeat(params.c[None, :], n, axis=0)
    for d in range(D):
        od = o[d]
        Hd = _activate(params, A)
        pi, mu, sigma = _batch_heads(params, od, Hd)
        cum = np.cumsum(pi, axis=1)
        comp = np.sum(rng.random(n)[:, None] >= cum, axis=1)
        comp = np.minimum(comp, params.family.C - 1)
        loc = mu[np.arange(n), comp]
        scl = sigma[np.arange(n), comp]
        if params.family.is_laplace:
            v = rng.laplace(loc, scl)
        else:
            v = rng.normal(loc, scl)
        X[:, od] = v
        A += np.outer(X[:, od], params.W[:, od])
    return X
