"""Classical tractable baselines: mixture of Bernoullis fit by EM, Chow-Liu
trees with add-alpha smoothing, fully visible sigmoid belief networks, and
full-covariance Gaussian maximum likelihood."""

from dataclasses import dataclass

import numpy as np

from .util import (
    DomainError,
    ShapeError,
    bernoulli_logpmf,
    check_binary_matrix,
    check_ordering,
    logsumexp,
    sigmoid,
)

MEAN_EPS = 1e-6  # Bernoulli means are clamped into [eps, 1-eps]
CHOWLIU_ALPHA_GRID = (1e-20, 0.001, 0.01, 0.1)


# --- mixture of multivariate Bernoullis -------------------------------------


@dataclass
class MoBParams:
    weights: np.ndarray  # (K,) on the simplex
    means: np.ndarray  # (K, D) in (0, 1)

    @property
    def K(self):
        return self.weights.shape[0]

    @property
    def D(self):
        return self.means.shape[1]

    def blocks(self):
        return {"weights": self.weights, "means": self.means}


def mob_logprob_batch(params, X):
    X = check_binary_matrix(X, params.D)
    logm = np.log(params.means)
    log1m = np.log1p(-params.means)
    # (N, K): per-component Bernoulli log-likelihoods
    comp = X @ logm.T + (1.0 - X) @ log1m.T
    return logsumexp(np.log(params.weights) + comp, axis=1)


def mob_logprob(params, x):
    return float(mob_logprob_batch(params, np.asarray(x, dtype=np.float64)[None, :])[0])


def mob_fit_em(data, K, max_iters, rng, valid=None, patience=0):
    """Standard EM.  Returns (MoBParams, per-iteration training mean LL).

    With a validation set, the best-validation parameters are returned and
    `patience` non-improving iterations stop the run early; the training
    log-likelihood itself is non-decreasing either way.
    """
    X = check_binary_matrix(np.asarray(data, dtype=np.float64), np.asarray(data).shape[1])
    N, D = X.shape
    if N == 0:
        raise DomainError("empty training set")
    if K < 1:
        raise DomainError("K must be >= 1")

    weights = np.full(K, 1.0 / K)
    # Break symmetry by perturbing the global mean toward random rows.
    base = X.mean(axis=0)
    means = np.clip(0.5 * base[None, :] + 0.5 * X[rng.integers(0, N, size=K)], MEAN_EPS, 1.0 - MEAN_EPS)
    params = MoBParams(weights=weights, means=means)

    history = []
    best_valid = -np.inf
    best = None
    since = 0
    for _ in range(max_iters):
        # E-step
        comp = X @ np.log(params.means).T + (1.0 - X) @ np.log1p(-params.means).T
        logw = np.log(params.weights) + comp
        norm = logsumexp(logw, axis=1)
        history.append(float(norm.mean()))
        resp = np.exp(logw - norm[:, None])
        # M-step
        nk = resp.sum(axis=0)
        params = MoBParams(
            weights=nk / N,
            means=np.clip((resp.T @ X) / np.maximum(nk, 1e-300)[:, None], MEAN_EPS, 1.0 - MEAN_EPS),
        )
        if valid is not None and len(valid):
            score = float(mob_logprob_batch(params, valid).mean())
            if score > best_valid:
                best_valid = score
                best = MoBParams(weights=params.weights.copy(), means=params.means.copy())
                since = 0
            else:
                since += 1
                if patience and since >= patience:
                    break
    if best is not None:
        params = best
    return params, history


# --- Chow-Liu tree -----------------------------------------------------------


@dataclass
class ChowLiuTree:
    """Directed tree over the D variables.  parent[root] = -1; cpt[d, z, v] =
    p(x_d = v | x_parent = z); root_marginal[v] = p(x_root = v)."""

    root: int
    parent: np.ndarray  # (D,) int
    cpt: np.ndarray  # (D, 2, 2); row for the root is unused
    root_marginal: np.ndarray  # (2,)

    @property
    def D(self):
        return self.parent.shape[0]

    def edges(self):
        return [(int(self.parent[d]), d) for d in range(self.D) if d != self.root]

    def blocks(self):
        return {"cpt": self.cpt, "root_marginal": self.root_marginal}


def mutual_information_matrix(X):
    """Pairwise MI of binary columns from empirical counts, 0 log 0 = 0."""
    X = np.asarray(X, dtype=np.float64)
    N, D = X.shape
    p11 = (X.T @ X) / N
    p1 = X.mean(axis=0)
    mi = np.zeros((D, D))
    for a in (0, 1):
        for b in (0, 1):
            pa = p1 if a else 1.0 - p1
            if a and b:
                joint = p11
            elif a and not b:
                joint = p1[:, None] - p11
            elif not a and b:
                joint = p1[None, :] - p11
            else:
                joint = 1.0 - p1[:, None] - p1[None, :] + p11
            joint = np.clip(joint, 0.0, 1.0)
            outer = pa[:, None] * (p1 if b else 1.0 - p1)[None, :]
            with np.errstate(divide="ignore", invalid="ignore"):
                term = joint * (np.log(joint) - np.log(outer))
            term[joint <= 0.0] = 0.0
            mi += term
    np.fill_diagonal(mi, 0.0)
    return mi


def _max_spanning_tree(weights):
    """Prim's algorithm on a dense symmetric weight matrix, O(D^2).

    Ties are broken deterministically toward the smallest-index vertices so
    repeated fits produce identical trees.
    """
    D = weights.shape[0]
    in_tree = np.zeros(D, dtype=bool)
    in_tree[0] = True
    best_w = weights[0].copy()
    best_from = np.zeros(D, dtype=np.intp)
    parent = np.full(D, -1, dtype=np.intp)
    for _ in range(D - 1):
        cand = np.where(in_tree, -np.inf, best_w)
        j = int(np.argmax(cand))  # argmax takes the first (smallest) index on ties
        parent[j] = best_from[j]
        in_tree[j] = True
        better = (~in_tree) & (weights[j] > best_w)
        best_w[better] = weights[j][better]
        best_from[better] = j
        # On exact weight ties prefer the smaller-index attachment point.
        tie = (~in_tree) & (weights[j] == best_w) & (j < best_from)
        best_from[tie] = j
    return parent


def chowliu_fit(data, alpha):
    """Maximum-mutual-information spanning tree with add-alpha CPT smoothing:
    p(x_d=1 | parent=z) = (count(x_d=1, parent=z) + alpha) / (count(parent=z) + 2 alpha)."""
    X = np.asarray(data, dtype=np.float64)
    N, D = X.shape
    if D < 2:
        raise DomainError("Chow-Liu needs at least two variables")
    check_binary_matrix(X, D)
    if alpha < 0:
        raise DomainError("alpha must be >= 0")

    parent = _max_spanning_tree(mutual_information_matrix(X))
    root = 0
    cpt = np.full((D, 2, 2), 0.5)
    counts_root = np.array([N - X[:, root].sum(), X[:, root].sum()])
    root_marginal = (counts_root + alpha) / (N + 2.0 * alpha) if (N + 2 * alpha) > 0 else np.full(2, 0.5)
    for d in range(D):
        if d == root:
            continue
        par = X[:, parent[d]]
        for z in (0, 1):
            sel = par == z
            nz = float(sel.sum())
            n1 = float(X[sel, d].sum())
            denom = nz + 2.0 * alpha
            p1 = (n1 + alpha) / denom if denom > 0 else 0.5
            cpt[d, z, 1] = p1
            cpt[d, z, 0] = 1.0 - p1
    return ChowLiuTree(root=root, parent=parent, cpt=cpt, root_marginal=root_marginal)


def chowliu_logprob(tree, x):
    return float(chowliu_logprob_batch(tree, np.asarray(x, dtype=np.float64)[None, :])[0])


def chowliu_logprob_batch(tree, X):
    X = check_binary_matrix(X, tree.D)
    xi = X.astype(np.intp)
    logp = np.log(tree.root_marginal[xi[:, tree.root]])
    for d in range(tree.D):
        if d == tree.root:
            continue
        logp = logp + np.log(tree.cpt[d, xi[:, tree.parent[d]], xi[:, d]])
    return logp


def chowliu_train_loglik(parent, root, X):
    """Training mean log-likelihood of a given tree with unsmoothed MLE CPTs.

    Used by the exhaustive-tree oracle; alpha = 0 keeps the comparison inside
    the Chow-Liu optimality theorem.
    """
    N = X.shape[0]
    tree = ChowLiuTree(root=root, parent=np.asarray(parent, dtype=np.intp), cpt=np.zeros((len(parent), 2, 2)), root_marginal=np.zeros(2))
    fitted = _refit_cpts(tree, X, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        return float(chowliu_logprob_batch(fitted, X).mean())


def _refit_cpts(tree, X, alpha):
    N, D = X.shape
    cpt = np.full((D, 2, 2), 0.5)
    counts_root = np.array([N - X[:, tree.root].sum(), X[:, tree.root].sum()])
    denom = N + 2.0 * alpha
    root_marginal = (counts_root + alpha) / denom if denom > 0 else np.full(2, 0.5)
    for d in range(D):
        if d == tree.root:
            continue
        par = X[:, tree.parent[d]]
        for z in (0, 1):
            sel = par == z
            nz = float(sel.sum())
            n1 = float(X[sel, d].sum())
            dz = nz + 2.0 * alpha
            p1 = (n1 + alpha) / dz if dz > 0 else 0.5
            cpt[d, z, 1] = p1
            cpt[d, z, 0] = 1.0 - p1
    return ChowLiuTree(root=tree.root, parent=tree.parent, cpt=cpt, root_marginal=root_marginal)


def chowliu_reroot(tree, data, alpha, new_root):
    """Re-orient the same undirected tree at another root and refit CPTs;
    the likelihood is root-invariant, which tests use as a sanity check."""
    D = tree.D
    adj = [[] for _ in range(D)]
    for a, b in tree.edges():
        adj[a].append(b)
        adj[b].append(a)
    parent = np.full(D, -1, dtype=np.intp)
    stack = [new_root]
    seen = {new_root}
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                parent[v] = u
                stack.append(v)
    rerooted = ChowLiuTree(root=new_root, parent=parent, cpt=np.zeros((D, 2, 2)), root_marginal=np.zeros(2))
    return _refit_cpts(rerooted, np.asarray(data, dtype=np.float64), alpha)


# --- fully visible sigmoid belief network ------------------------------------


@dataclass
class FvsbnParams:
    """Logistic-regression conditionals under a fixed ordering.

    Wtri[d, j] is the weight from the j-th to the d-th position of the
    ordering; only the strict lower triangle is active.
    """

    ordering: np.ndarray
    Wtri: np.ndarray  # (D, D), strictly lower triangular
    bias: np.ndarray  # (D,)

    @property
    def D(self):
        return self.bias.shape[0]

    @property
    def n_weights(self):
        return self.D * (self.D - 1) // 2 + self.D

    def blocks(self):
        return {"Wtri": self.Wtri, "bias": self.bias}


def init_fvsbn_params(D, ordering):
    return FvsbnParams(ordering=check_ordering(ordering, D), Wtri=np.zeros((D, D)), bias=np.zeros(D))


def _tri_mask(D):
    return np.tril(np.ones((D, D)), k=-1)


def fvsbn_logits(params, X):
    Xo = X[:, params.ordering]
    return Xo, Xo @ (params.Wtri * _tri_mask(params.D)).T + params.bias


def fvsbn_logprob_batch(params, X):
    X = check_binary_matrix(X, params.D)
    Xo, Z = fvsbn_logits(params, X)
    return bernoulli_logpmf(Xo, sigmoid(Z)).sum(axis=1)


def fvsbn_logprob(params, x):
    return float(fvsbn_logprob_batch(params, np.asarray(x, dtype=np.float64)[None, :])[0])


def fvsbn_grad_batch(params, X):
    """Mean gradient of -log p over a batch; returns (grad blocks, mean nll)."""
    X = check_binary_matrix(X, params.D)
    N = X.shape[0]
    Xo, Z = fvsbn_logits(params, X)
    P = sigmoid(Z)
    nll = float(-bernoulli_logpmf(Xo, P).sum(axis=1).mean())
    err = P - Xo
    dW = (err.T @ Xo) / N * _tri_mask(params.D)
    db = err.sum(axis=0) / N
    return {"Wtri": dW, "bias": db}, nll


# --- full-covariance Gaussian -------------------------------------------------


@dataclass
class FullGaussian:
    mean: np.ndarray
    cov: np.ndarray
    chol: np.ndarray  # lower Cholesky factor of cov

    @property
    def D(self):
        return self.mean.shape[0]

    def blocks(self):
        return {"mean": self.mean, "cov": self.cov}


def gaussian_fit_mle(data, jitter=1e-6):
    X = np.asarray(data, dtype=np.float64)
    N, D = X.shape
    if N <= D:
        raise DomainError(f"need more rows than dimensions (N={N}, D={D})")
    mean = X.mean(axis=0)
    centered = X - mean
    cov = centered.T @ centered / N
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        try:
            cov = cov + jitter * np.eye(D)
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise DomainError("covariance is degenerate even after jitter") from exc
    return FullGaussian(mean=mean, cov=cov, chol=chol)


def gaussian_logprob_batch(g, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != g.D:
        raise ShapeError(f"batch has shape {X.shape}, expected (N, {g.D})")
    y = np.linalg.solve(g.chol, (X - g.mean).T)  # whitened residuals, (D, N)
    log_det = 2.0 * np.log(np.diag(g.chol)).sum()
    return -0.5 * (g.D * np.log(2.0 * np.pi) + log_det + (y * y).sum(axis=0))


def gaussian_logprob(g, x):
    return float(gaussian_logprob_batch(g, np.asarray(x, dtype=np.float64)[None, :])[0])
