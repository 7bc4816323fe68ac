"""Shared numeric helpers: stable activations, log-space reductions, orderings."""

import numpy as np

# Bernoulli probabilities are clamped into [PROB_EPS, 1-PROB_EPS] before logs,
# so saturated sigmoids cannot produce -inf log-likelihoods.
PROB_EPS = 1e-12

# Lower bound on mixture scales after exp(z); prevents variance collapse.
SIGMA_FLOOR = 1e-6


class ShapeError(ValueError):
    """Array shapes do not match the declared model dimensions."""


class DomainError(ValueError):
    """Values fall outside the declared domain (e.g. non-binary entries)."""


class ContractError(RuntimeError):
    """A documented precondition was violated by the caller."""


def sigmoid(z):
    """Logistic function, evaluated in a two-branch form that never overflows."""
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    out = np.where(z >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))
    return float(out) if out.ndim == 0 else out


def relu(z):
    return np.maximum(z, 0.0)


def softmax(z, axis=-1):
    """Softmax with max-subtraction."""
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - np.max(z, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


def logsumexp(a, axis=None):
    a = np.asarray(a, dtype=np.float64)
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    s = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    if axis is None:
        return float(s)
    return np.squeeze(s, axis=axis)


def clamp_prob(p):
    return np.clip(p, PROB_EPS, 1.0 - PROB_EPS)


def bernoulli_logpmf(x, p):
    """log Bernoulli(x; p) with p clamped away from {0, 1}."""
    p = clamp_prob(p)
    return x * np.log(p) + (1.0 - x) * np.log1p(-p)


def check_ordering(perm, D):
    """Validate that `perm` is a permutation of 0..D-1 and return it as intp."""
    perm = np.asarray(perm, dtype=np.intp)
    if perm.shape != (D,):
        raise ShapeError(f"ordering has shape {perm.shape}, expected ({D},)")
    if not np.array_equal(np.sort(perm), np.arange(D)):
        raise ShapeError(f"ordering is not a permutation of 0..{D - 1}")
    return perm


def random_ordering(D, rng):
    """Draw a uniformly random ordering with the given generator."""
    return rng.permutation(D).astype(np.intp)


def check_binary_vector(x, D):
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (D,):
        raise ShapeError(f"input has shape {x.shape}, expected ({D},)")
    bad = (x != 0.0) & (x != 1.0)
    if np.any(bad):
        j = int(np.argmax(bad))
        raise DomainError(f"entry {j} = {x[j]} is not binary")
    return x


def check_binary_matrix(X, D):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != D:
        raise ShapeError(f"batch has shape {X.shape}, expected (N, {D})")
    bad = (X != 0.0) & (X != 1.0)
    if np.any(bad):
        i, j = np.argwhere(bad)[0]
        raise DomainError(f"entry ({i}, {j}) = {X[i, j]} is not binary")
    return X


def uniform_init(rng, shape, fan_in):
    """Uniform in +-1/sqrt(fan_in): keeps pre-activations O(1) at start."""
    return rng.uniform(-1.0, 1.0, size=shape) / np.sqrt(fan_in)


def all_binary_vectors(D):
    """All 2^D binary vectors as a (2^D, D) float array, counting order."""
    n = 1 << D
    return ((np.arange(n)[:, None] >> np.arange(D)[None, :]) & 1).astype(np.float64)
