"""Order-agnostic deep NADE for binary vectors.

A single masked feed-forward network supplies the predictive probability of
any variable given any subset of the others, which turns one parameter set
into a model for every ordering: exact per-ordering likelihoods, ensembles
over orderings, ancestral imputation, and the order-sampled training loss.
"""

from dataclasses import dataclass, field

import numpy as np

from .util import (
    ContractError,
    ShapeError,
    bernoulli_logpmf,
    check_ordering,
    logsumexp,
    sigmoid,
    uniform_init,
)


@dataclass
class LayerStack:
    """Feed-forward parameters.  weights[l]: (H_l, H_{l-1}), the input layer
    seeing either the masked input (width D) or the masked input concatenated
    with the mask itself (width 2D).  Inner layers use `activation`; the final
    layer is a sigmoid over D predictive outputs."""

    D: int
    weights: list
    biases: list
    mask_concat: bool = True
    activation: str = "relu"  # inner layers: 'relu' or 'sigmoid'

    @property
    def input_width(self):
        return 2 * self.D if self.mask_concat else self.D

    @property
    def hidden_sizes(self):
        return [w.shape[0] for w in self.weights[:-1]]

    @property
    def n_hidden_layers(self):
        return len(self.weights) - 1

    def validate(self):
        if not self.weights or len(self.weights) != len(self.biases):
            raise ShapeError("empty or inconsistent layer lists")
        prev = self.input_width
        for W, b in zip(self.weights, self.biases):
            if W.shape[1] != prev or b.shape != (W.shape[0],):
                raise ShapeError(f"layer shape {W.shape} does not follow width {prev}")
            prev = W.shape[0]
        if prev != self.D:
            raise ShapeError(f"final layer has {prev} outputs, expected {self.D}")

    def blocks(self):
        out = {}
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            out[f"W{i}"] = W
            out[f"b{i}"] = b
        return out


def init_stack(D, hidden_sizes, rng, mask_concat=True, activation="relu"):
    widths = [2 * D if mask_concat else D] + list(hidden_sizes) + [D]
    weights = [uniform_init(rng, (widths[i + 1], widths[i]), widths[i]) for i in range(len(widths) - 1)]
    biases = [np.zeros(widths[i + 1]) for i in range(len(widths) - 1)]
    return LayerStack(D=D, weights=weights, biases=biases, mask_concat=mask_concat, activation=activation)


def mask_from_prefix(D, prefix):
    """Indicator vector of the conditioning pattern o_{<d}."""
    m = np.zeros(D)
    m[np.asarray(prefix, dtype=np.intp)] = 1.0
    return m


@dataclass
class OrderingPrefixSampler:
    """Draws (d, o_{<d}) with d uniform on {1..D} and the prefix a uniformly
    random ordered (d-1)-subset."""

    D: int
    rng: np.random.Generator

    def sample(self):
        d = int(self.rng.integers(1, self.D + 1))
        prefix = self.rng.permutation(self.D)[: d - 1]
        return d, prefix


def _input_layer(stack, X, M):
    masked = X * M
    if stack.mask_concat:
        return np.concatenate([masked, M], axis=-1)
    return masked


def _forward_batch(stack, X, M, keep=False):
    """Shared forward pass; X and M are (N, D).  With keep=True also returns
    the per-layer activations and pre-activations for backprop."""
    h = _input_layer(stack, X, M)
    hs = [h]
    pre = []
    L = len(stack.weights)
    for l in range(L):
        a = h @ stack.weights[l].T + stack.biases[l]
        if l == L - 1:
            h = sigmoid(a)
        elif stack.activation == "relu":
            h = np.maximum(a, 0.0)
        else:
            h = sigmoid(a)
        if keep:
            pre.append(a)
            hs.append(h)
    if keep:
        return h, hs, pre
    return h


def forward(stack, x, mask):
    """Predictive probabilities: output[i] is p(x_i = 1 | values at mask = 1)
    for every i outside the mask.  Outputs at masked-in positions carry no
    contract."""
    stack.validate()
    x = np.asarray(x, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if x.shape != (stack.D,) or mask.shape != (stack.D,):
        raise ShapeError(f"expected two ({stack.D},) vectors")
    return _forward_batch(stack, x[None, :], mask[None, :])[0]


def forward_batch(stack, X, M):
    stack.validate()
    X = np.asarray(X, dtype=np.float64)
    M = np.asarray(M, dtype=np.float64)
    if M.ndim == 1:
        M = np.repeat(M[None, :], X.shape[0], axis=0)
    if X.shape != M.shape or X.ndim != 2 or X.shape[1] != stack.D:
        raise ShapeError(f"batch shapes {X.shape}/{M.shape} do not match (N, {stack.D})")
    return _forward_batch(stack, X, M)


@dataclass
class StackGrad:
    d_weights: list
    d_biases: list

    def blocks(self):
        out = {}
        for i, (W, b) in enumerate(zip(self.d_weights, self.d_biases)):
            out[f"W{i}"] = W
            out[f"b{i}"] = b
        return out


def loss_given_masks(stack, X, ds, M, want_grad=True):
    """Scaled masked cross-entropy for given (d, mask) pairs.

    Per example: D/(D-d+1) * sum over unmasked outputs of the cross-entropy;
    the same rescaling applies to the backpropagated error, and masked-in
    outputs contribute nothing.  Returns (mean loss, StackGrad or None).
    """
    stack.validate()
    X = np.asarray(X, dtype=np.float64)
    M = np.asarray(M, dtype=np.float64)
    N, D = X.shape
    scale = D / (D - np.asarray(ds, dtype=np.float64) + 1.0)

    out, hs, pre = _forward_batch(stack, X, M, keep=True)
    xent = -(bernoulli_logpmf(X, out))
    per_example = scale * ((1.0 - M) * xent).sum(axis=1)
    loss = float(per_example.mean())
    if not want_grad:
        return loss, None

    # Sigmoid output + cross-entropy: the error at the final pre-activation
    # is (out - x), kept only at unmasked positions and rescaled.
    delta = (scale / N)[:, None] * (1.0 - M) * (out - X)
    d_weights = [None] * len(stack.weights)
    d_biases = [None] * len(stack.weights)
    for l in range(len(stack.weights) - 1, -1, -1):
        d_weights[l] = delta.T @ hs[l]
        d_biases[l] = delta.sum(axis=0)
        if l > 0:
            back = delta @ stack.weights[l]
            if stack.activation == "relu":
                delta = back * (pre[l - 1] > 0.0)
            else:
                delta = back * hs[l] * (1.0 - hs[l])
    return loss, StackGrad(d_weights=d_weights, d_biases=d_biases)


def loss_minibatch(stack, X, sampler, want_grad=True):
    """Order-sampled training loss: each example gets its own (d, o_{<d})
    draw; returns (mean loss, StackGrad, ds, masks)."""
    X = np.asarray(X, dtype=np.float64)
    N, D = X.shape
    ds = np.empty(N)
    M = np.empty((N, D))
    for i in range(N):
        d, prefix = sampler.sample()
        ds[i] = d
        M[i] = mask_from_prefix(D, prefix)
    loss, grad = loss_given_masks(stack, X, ds, M, want_grad=want_grad)
    return loss, grad, ds, M


def logprob_ordering(stack, x, o):
    """Exact log p(x) under one ordering: D forward passes, reading off the
    conditional of o_d from the network masked with o_{<d}."""
    return float(logprob_ordering_batch(stack, np.asarray(x, dtype=np.float64)[None, :], o)[0])


def logprob_ordering_batch(stack, X, o):
    stack.validate()
    D = stack.D
    o = check_ordering(o, D)
    X = np.asarray(X, dtype=np.float64)
    N = X.shape[0]
    logps = np.zeros(N)
    m = np.zeros(D)
    for d in range(D):
        od = o[d]
        out = _forward_batch(stack, X, np.repeat(m[None, :], N, axis=0))
        logps += bernoulli_logpmf(X[:, od], out[:, od])
        m = m.copy()
        m[od] = 1.0
    return logps


def average_logprobs(logps):
    """log of the mean probability given per-member log-probabilities."""
    logps = np.asarray(logps, dtype=np.float64)
    if logps.ndim == 0 or logps.shape[-1] < 1:
        raise ContractError("ensemble needs at least one member")
    return logsumexp(logps, axis=-1) - np.log(logps.shape[-1])


def ensemble_logprob(stack, x, orderings):
    """Log-probability of the uniform mixture over the given orderings."""
    if len(orderings) < 1:
        raise ContractError("ensemble needs at least one ordering")
    logps = np.array([logprob_ordering(stack, x, o) for o in orderings])
    return float(average_logprobs(logps))


def ensemble_logprob_batch(stack, X, orderings):
    if len(orderings) < 1:
        raise ContractError("ensemble needs at least one ordering")
    logps = np.stack([logprob_ordering_batch(stack, X, o) for o in orderings], axis=1)
    return average_logprobs(logps)


def ensemble_orderings(D, K, seed):
    """The K evaluation orderings implied by a recorded seed."""
    rng = np.random.default_rng(seed)
    return [rng.permutation(D).astype(np.intp) for _ in range(K)]


def impute(stack, x_obs, mask, rng, n_samples):
    """Complete the unobserved positions (mask = 0) by ancestral sampling in
    a uniformly random order per sample, conditioning on the observed block
    and previously sampled entries.  Returns an (n_samples, D) array."""
    stack.validate()
    x_obs = np.asarray(x_obs, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    D = stack.D
    missing = np.flatnonzero(mask == 0.0)
    X = np.repeat(x_obs[None, :], n_samples, axis=0)
    if missing.size == 0 or n_samples == 0:
        return X
    M = np.repeat(mask[None, :], n_samples, axis=0)
    # One independent visiting order per sample.
    orders = np.argsort(rng.random((n_samples, missing.size)), axis=1)
    rows = np.arange(n_samples)
    for t in range(missing.size):
        idx = missing[orders[:, t]]
        out = _forward_batch(stack, X, M)
        p = out[rows, idx]
        X[rows, idx] = (rng.random(n_samples) < p).astype(np.float64)
        M[rows, idx] = 1.0
    return X


def observed_marginal_logprob(stack, x, mask, obs_order=None):
    """Log-density of the observed block alone, using an ordering that places
    the observed positions first (ascending index unless obs_order is given);
    the unobserved tail marginalizes away without any summation."""
    stack.validate()
    x = np.asarray(x, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    observed = np.flatnonzero(mask == 1.0) if obs_order is None else np.asarray(obs_order, dtype=np.intp)
    logp = 0.0
    m = np.zeros(stack.D)
    for i in observed:
        out = forward(stack, x, m)
        logp += float(bernoulli_logpmf(x[i], out[i]))
        m[i] = 1.0
    return logp


def remove_output_layer(stack):
    return LayerStack(
        D=stack.D,
        weights=[W.copy() for W in stack.weights[:-1]],
        biases=[b.copy() for b in stack.biases[:-1]],
        mask_concat=stack.mask_concat,
        activation=stack.activation,
    )


def add_hidden_layer(stack, size, rng):
    fan_in = stack.weights[-1].shape[0] if stack.weights else stack.input_width
    stack.weights.append(uniform_init(rng, (size, fan_in), fan_in))
    stack.biases.append(np.zeros(size))
    return stack


def add_output_layer(stack, rng):
    fan_in = stack.weights[-1].shape[0]
    stack.weights.append(uniform_init(rng, (stack.D, fan_in), fan_in))
    stack.biases.append(np.zeros(stack.D))
    return stack


def pretrain(depth, data, rng, hidden_size, config=None, mask_concat=True, activation="relu"):
    """Layer-wise construction: a depth-1 stack is returned at random
    initialization; each deeper stack is built from the trained shallower one
    by swapping in a fresh hidden layer and output layer, then training all
    parameters for 20 iterations."""
    if depth < 1:
        raise ContractError("pretraining depth must be >= 1")
    data = np.asarray(data, dtype=np.float64)
    D = data.shape[1]
    if depth == 1:
        return init_stack(D, [hidden_size], rng, mask_concat=mask_concat, activation=activation)
    stack = pretrain(depth - 1, data, rng, hidden_size, config, mask_concat, activation)
    stack = remove_output_layer(stack)
    add_hidden_layer(stack, hidden_size, rng)
    add_output_layer(stack, rng)
    import dataclasses

    from .training import TrainConfig, fit_stack

    cfg = config if config is not None else TrainConfig()
    cfg = dataclasses.replace(cfg, epochs=20, patience=0)
    fit_stack(stack, data, None, cfg, rng=rng)
    return stack
