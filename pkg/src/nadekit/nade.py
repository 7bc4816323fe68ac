"""Fixed-order, single-hidden-layer NADE for binary vectors.

Exact log-density, analytic gradients of the negative log-likelihood,
ancestral sampling, an exhaustive normalization check, and the mean-field
message-passing step on a weight-tied RBM that reproduces the forward pass.
"""

from dataclasses import dataclass

import numpy as np

from .util import (
    ContractError,
    ShapeError,
    bernoulli_logpmf,
    check_binary_matrix,
    check_binary_vector,
    check_ordering,
    clamp_prob,
    sigmoid,
    uniform_init,
)


@dataclass
class NadeParams:
    """Weights of a single-hidden-layer binary NADE.

    W: (H, D) input-to-hidden, shared across all conditionals.
    V: (D, H) hidden-to-output.
    b: (D,) output biases.  c: (H,) hidden biases.
    """

    W: np.ndarray
    V: np.ndarray
    b: np.ndarray
    c: np.ndarray

    @property
    def H(self):
        return self.W.shape[0]

    @property
    def D(self):
        return self.W.shape[1]

    def validate(self):
        H, D = self.W.shape
        if self.V.shape != (D, H) or self.b.shape != (D,) or self.c.shape != (H,):
            raise ShapeError(
                f"inconsistent parameter shapes: W{self.W.shape} V{self.V.shape} "
                f"b{self.b.shape} c{self.c.shape}"
            )
        for block in (self.W, self.V, self.b, self.c):
            if not np.all(np.isfinite(block)):
                raise ShapeError("non-finite parameter entry")

    def blocks(self):
        """Named parameter arrays, in serialization order."""
        return {"W": self.W, "V": self.V, "b": self.b, "c": self.c}


@dataclass
class ForwardTrace:
    """Intermediate quantities of one evaluation, reused by the backward pass.

    a[d], h[d] are the hidden pre-activation/activation before dimension d of
    the ordering is consumed; p[d] = p(x_{o_d}=1 | x_{o_<d}).
    """

    a: np.ndarray  # (D, H)
    h: np.ndarray  # (D, H)
    p: np.ndarray  # (D,)
    logp: float


@dataclass
class NadeGrad:
    """Gradient of -log p(x) with respect to each parameter block."""

    dW: np.ndarray
    dV: np.ndarray
    db: np.ndarray
    dc: np.ndarray

    def blocks(self):
        return {"W": self.dW, "V": self.dV, "b": self.db, "c": self.dc}


def init_nade_params(D, H, rng):
    """Weights uniform in +-1/sqrt(fan-in), biases zero."""
    return NadeParams(
        W=uniform_init(rng, (H, D), D),
        V=uniform_init(rng, (D, H), H),
        b=np.zeros(D),
        c=np.zeros(H),
    )


def log_prob(params, o, x):
    """Exact log p(x) under the ordering o, with the O(HD) hidden recurrence.

    Returns a ForwardTrace; trace.logp is the log-density in nats.
    """
    params.validate()
    D, H = params.D, params.H
    o = check_ordering(o, D)
    x = check_binary_vector(x, D)

    a_all = np.empty((D, H))
    h_all = np.empty((D, H))
    p_all = np.empty(D)
    a = params.c.copy()
    logp = 0.0
    for d in range(D):
        od = o[d]
        h = sigmoid(a)
        p = sigmoid(float(params.V[od] @ h) + params.b[od])
        a_all[d] = a
        h_all[d] = h
        p_all[d] = p
        logp += float(bernoulli_logpmf(x[od], p))
        a = a + params.W[:, od] * x[od]
    return ForwardTrace(a=a_all, h=h_all, p=p_all, logp=logp)


def log_prob_batch(params, o, X):
    """log p for N examples sharing one ordering; returns (logps (N,), P (N, D))."""
    params.validate()
    D = params.D
    o = check_ordering(o, D)
    X = check_binary_matrix(X, D)
    N = X.shape[0]

    A = np.repeat(params.c[None, :], N, axis=0)
    P = np.empty((N, D))
    logps = np.zeros(N)
    for d in range(D):
        od = o[d]
        Hd = sigmoid(A)
        p = sigmoid(Hd @ params.V[od] + params.b[od])
        P[:, d] = p
        logps += bernoulli_logpmf(X[:, od], p)
        A += np.outer(X[:, od], params.W[:, od])
    return logps, P


def grad_nll(params, o, x):
    """Exact gradient of -log p(x), computed by the O(HD) backward recurrence."""
    trace = log_prob(params, o, x)
    D, H = params.D, params.H
    o = check_ordering(o, D)
    x = np.asarray(x, dtype=np.float64)

    dW = np.zeros_like(params.W)
    dV = np.zeros_like(params.V)
    db = np.zeros_like(params.b)
    dc = np.zeros_like(params.c)
    delta_a = np.zeros(H)
    for d in range(D - 1, -1, -1):
        od = o[d]
        h = trace.h[d]
        err = trace.p[d] - x[od]
        db[od] = err
        dV[od] = err * h
        delta_h = err * params.V[od]
        term = delta_h * h * (1.0 - h)
        dc += term
        # delta_a here is accumulated from dimensions after d only: the
        # column W[:, o_d] first enters the pre-activation at step d+1.
        dW[:, od] = delta_a * x[od]
        delta_a += term
    return NadeGrad(dW=dW, dV=dV, db=db, dc=dc), trace


def grad_nll_batch(params, o, X):
    """Mean gradient of -log p over a batch; returns (NadeGrad, mean_nll).

    Reduction order over the batch is fixed (matrix products), so repeated
    runs with identical inputs are bit-identical.
    """
    params.validate()
    D, H = params.D, params.H
    o = check_ordering(o, D)
    X = check_binary_matrix(X, D)
    N = X.shape[0]

    A = np.repeat(params.c[None, :], N, axis=0)
    H_all = np.empty((N, D, H))
    P = np.empty((N, D))
    logps = np.zeros(N)
    for d in range(D):
        od = o[d]
        Hd = sigmoid(A)
        H_all[:, d, :] = Hd
        p = sigmoid(Hd @ params.V[od] + params.b[od])
        P[:, d] = p
        logps += bernoulli_logpmf(X[:, od], p)
        A += np.outer(X[:, od], params.W[:, od])

    dW = np.zeros_like(params.W)
    dV = np.zeros_like(params.V)
    db = np.zeros_like(params.b)
    dc = np.zeros_like(params.c)
    delta_a = np.zeros((N, H))
    for d in range(D - 1, -1, -1):
        od = o[d]
        Hd = H_all[:, d, :]
        err = P[:, d] - X[:, od]
        db[od] = err.sum() / N
        dV[od] = (err @ Hd) / N
        delta_h = err[:, None] * params.V[od][None, :]
        term = delta_h * Hd * (1.0 - Hd)
        dc += term.sum(axis=0) / N
        dW[:, od] = (delta_a.T @ X[:, od]) / N
        delta_a += term
    return NadeGrad(dW=dW, dV=dV, db=db, dc=dc), float(-logps.mean())


def sample(params, o, rng):
    """Ancestral sample; returns (x, p) with p the conditionals actually used."""
    X, P = sample_batch(params, o, rng, 1)
    return X[0], P[0]


def sample_batch(params, o, rng, n):
    """n ancestral samples; returns (X (n, D), P (n, D))."""
    params.validate()
    D = params.D
    o = check_ordering(o, D)
    X = np.zeros((n, D))
    P = np.empty((n, D))
    A = np.repeat(params.c[None, :], n, axis=0)
    for d in range(D):
        od = o[d]
        Hd = sigmoid(A)
        p = sigmoid(Hd @ params.V[od] + params.b[od])
        P[:, d] = p
        X[:, od] = (rng.random(n) < p).astype(np.float64)
        A += np.outer(X[:, od], params.W[:, od])
    return X, P


def total_mass(params, o, max_dim=14):
    """Sum of exp(log p) over all of {0,1}^D.  Test oracle; refuses large D."""
    from .util import all_binary_vectors

    D = params.D
    if D > max_dim:
        raise ContractError(f"refusing to enumerate 2^{D} states (max D={max_dim})")
    logps, _ = log_prob_batch(params, o, all_binary_vectors(D))
    return float(np.exp(logps).sum())


# --- mean-field verification oracle ----------------------------------------
#
# A weight-tied RBM admits factorized variational inference over the free
# inputs and the hidden units.  With the first d positions of the ordering
# clamped to the data, one hidden update followed by one input update
# reproduces NADE's forward computation when V = W^T.


@dataclass
class RbmParams:
    """RBM energy parameters: W (H, D), b (D,) input biases, c (H,) hidden."""

    W: np.ndarray
    b: np.ndarray
    c: np.ndarray


@dataclass
class MeanFieldState:
    """Factorized marginals: mu[j] for x_{o_j}, tau[k] for h_k.

    d is the number of clamped leading positions; mu[j] must equal x_{o_j}
    exactly for j < d.
    """

    mu: np.ndarray
    tau: np.ndarray
    d: int


def mean_field_init(rbm, o, x, d):
    """Initial state with clamped prefix and mu = 0 on the free positions."""
    D = rbm.W.shape[1]
    o = check_ordering(o, D)
    mu = np.zeros(D)
    mu[:d] = np.asarray(x, dtype=np.float64)[o[:d]]
    return MeanFieldState(mu=mu, tau=np.zeros(rbm.W.shape[0]), d=d)


def _check_clamp(rbm, o, x, state):
    D = rbm.W.shape[1]
    o = check_ordering(o, D)
    x = np.asarray(x, dtype=np.float64)
    if not np.array_equal(state.mu[: state.d], x[o[: state.d]]):
        raise ContractError("clamped prefix entries of mu do not match the data")
    return o, x


def mean_field_step(rbm, o, x, state):
    """One hidden-marginal update followed by one input-marginal update.

    tau_k <- sigmoid(c_k + sum_j W[k, o_j] mu_j), then for free positions
    j >= d: mu_j <- sigmoid(b_{o_j} + sum_k tau_k W[k, o_j]).  Clamped
    entries are left untouched.
    """
    o, x = _check_clamp(rbm, o, x, state)
    Wo = rbm.W[:, o]  # columns in ordering positions
    tau = sigmoid(rbm.c + Wo @ state.mu)
    mu = state.mu.copy()
    free = np.arange(state.d, len(o))
    mu[free] = sigmoid(rbm.b[o[free]] + tau @ Wo[:, free])
    return MeanFieldState(mu=mu, tau=tau, d=state.d)


def mean_field_objective(rbm, o, x, state):
    """The variational objective being minimized, up to the constant log Z.

    Direct evaluation of the expanded KL divergence between the factorized
    approximation and the clamped-prefix conditional; alternating updates
    must never increase it.
    """
    o, x = _check_clamp(rbm, o, x, state)
    Wo = rbm.W[:, o]
    mu, tau = state.mu, state.tau

    def negent(p):
        p = np.clip(p, 1e-300, 1.0)
        q = np.clip(1.0 - p, 1e-300, 1.0)
        return np.sum(p * np.log(p) + q * np.log(q))

    energy = -float(tau @ Wo @ mu) - float(rbm.b[o] @ mu) - float(rbm.c @ tau)
    return energy + negent(mu[state.d :]) + negent(tau)


def mean_field_fixed_point(rbm, o, x, d, max_iters=100, tol=1e-10):
    """Iterate mean_field_step from the mu=0 initialization to convergence.

    The paper-level construction needs only a single step; the loop is an
    optional refinement with no canonical iteration count.
    """
    state = mean_field_init(rbm, o, x, d)
    for _ in range(max_iters):
        new = mean_field_step(rbm, o, x, state)
        delta = max(
            np.max(np.abs(new.mu - state.mu)), np.max(np.abs(new.tau - state.tau))
        )
        state = new
        if delta < tol:
            break
    return state


def nade_from_rbm(rbm):
    """The weight-tied NADE whose forward pass one mean-field step reproduces."""
    return NadeParams(W=rbm.W.copy(), V=rbm.W.T.copy(), b=rbm.b.copy(), c=rbm.c.copy())
