"""Optimizers, learning-rate schedules, early stopping, and the experiment
protocol shared by every model kind."""

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import baselines, deepnade, nade, rnade
from .util import DomainError, random_ordering

MODEL_KINDS = ("nade", "rnade", "deepnade", "mob", "chowliu", "fvsbn", "gaussian")


class TrainingError(RuntimeError):
    """Raised when optimization cannot continue (non-finite loss/gradient)."""

    def __init__(self, message, step=None, history=None):
        super().__init__(message)
        self.step = step
        self.history = history or []


@dataclass
class Schedule:
    """Learning-rate schedule: eta/(1+gamma*t), or eta*max(0, 1-t/T)."""

    kind: str = "inv_decay"  # 'inv_decay' | 'linear_to_zero'
    eta: float = 0.05
    gamma: float = 0.0
    total_updates: int = 0  # T for linear_to_zero

    def __post_init__(self):
        if self.kind not in ("inv_decay", "linear_to_zero"):
            raise DomainError(f"unknown schedule kind {self.kind!r}")


def lr_at(schedule, t):
    if t < 0:
        raise DomainError("update index must be >= 0")
    if schedule.kind == "inv_decay":
        return schedule.eta / (1.0 + schedule.gamma * t)
    return schedule.eta * max(0.0, 1.0 - t / schedule.total_updates)


@dataclass
class TrainConfig:
    minibatch_size: int = 100
    epochs: int = 50
    updates_per_epoch: int | None = None  # None: one full pass per epoch
    schedule: Schedule = field(default_factory=Schedule)
    momentum: float = 0.0  # initiated after the first epoch when nonzero
    weight_decay: float = 0.0  # applied to the input-to-hidden weights only
    patience: int = 0  # early-stop look-ahead in epochs; 0 disables
    seed: int = 0
    # None resolves to: on for mixture conditionals, off otherwise.
    sigma_scaled_mean_grad: bool | None = None

    def __post_init__(self):
        if self.minibatch_size < 1 or self.epochs < 0:
            raise DomainError("minibatch size must be >= 1 and epochs >= 0")
        if not (0.0 <= self.momentum < 1.0) or self.weight_decay < 0.0:
            raise DomainError("momentum must be in [0,1), decay >= 0")


def sgd_step(blocks, grads, config, velocity, t, decay_keys=frozenset({"W"})):
    """One (momentum) SGD update, in place.

    velocity <- momentum*velocity - lr_t*(grad + decay*theta restricted to
    decay_keys); theta += velocity.  Weight decay never touches output-side
    matrices.
    """
    lr = lr_at(config.schedule, t)
    for k, theta in blocks.items():
        g = grads[k]
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in block {k!r}", step=t)
        if config.weight_decay and k in decay_keys:
            g = g + config.weight_decay * theta
        velocity[k] *= config.momentum
        velocity[k] -= lr * g
        theta += velocity[k]
    return blocks


@dataclass
class HistoryRow:
    epoch: int
    train_loss: float
    valid_score: float
    lr: float


def history_to_csv(rows):
    lines = ["epoch,train_loss,valid_score,lr"]
    for r in rows:
        lines.append(f"{r.epoch},{r.train_loss:.17g},{r.valid_score:.17g},{r.lr:.17g}")
    return "\n".join(lines) + "\n"


@dataclass
class EarlyStopState:
    """Best validation score seen, the matching snapshot, and the counter."""

    best_score: float = -np.inf
    best_blocks: dict | None = None
    epochs_since_improvement: int = 0

    def update(self, score, blocks):
        if score > self.best_score:
            self.best_score = score
            self.best_blocks = {k: v.copy() for k, v in blocks.items()}
            self.epochs_since_improvement = 0
            return True
        self.epochs_since_improvement += 1
        return False


@dataclass
class FitResult:
    kind: str
    params: object
    ordering: np.ndarray | None
    history: list
    best_valid: float
    meta: dict


def _minibatches(N, config, rng):
    idx = rng.permutation(N)
    n_updates = (N + config.minibatch_size - 1) // config.minibatch_size
    if config.updates_per_epoch is not None:
        n_updates = min(n_updates, config.updates_per_epoch)
    for u in range(n_updates):
        yield idx[u * config.minibatch_size : (u + 1) * config.minibatch_size]


def _sgd_fit(blocks, grad_fn, valid_fn, X, config, decay_keys):
    """Generic minibatch SGD loop with best-validation snapshots.

    grad_fn(minibatch) -> (grad blocks, loss); valid_fn() -> score to
    maximize, or None when there is no validation split.
    """
    velocity = {k: np.zeros_like(v) for k, v in blocks.items()}
    order_rng = np.random.default_rng(config.seed + 1)
    early = EarlyStopState()
    history = []
    t = 0
    for epoch in range(config.epochs):
        # Momentum is initiated after the first epoch.
        cfg = config if epoch >= 1 else dataclasses.replace(config, momentum=0.0)
        losses = []
        for batch_idx in _minibatches(len(X), config, order_rng):
            grads, loss = grad_fn(X[batch_idx])
            if not np.isfinite(loss):
                raise TrainingError(f"training loss diverged at update {t}", step=t, history=history)
            sgd_step(blocks, grads, cfg, velocity, t, decay_keys)
            losses.append(loss)
            t += 1
        train_loss = float(np.mean(losses)) if losses else np.nan
        score = valid_fn() if valid_fn is not None else np.nan
        history.append(HistoryRow(epoch=epoch, train_loss=train_loss, valid_score=score, lr=lr_at(config.schedule, t)))
        if valid_fn is not None:
            early.update(score, blocks)
            if config.patience and early.epochs_since_improvement >= config.patience:
                break
    if early.best_blocks is not None:
        for k in blocks:
            blocks[k][...] = early.best_blocks[k]
    return history, early.best_score


def _chunked_mean_loglik(fn, X, chunk=4096):
    if len(X) == 0:
        return np.nan
    total = 0.0
    for i in range(0, len(X), chunk):
        total += float(np.sum(fn(X[i : i + chunk])))
    return total / len(X)


def fit_stack(stack, train, valid, config, rng=None):
    """Train an existing LayerStack in place on binary data; used both by the
    main entry point and by layer-wise pretraining."""
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    sampler = deepnade.OrderingPrefixSampler(D=stack.D, rng=rng)

    def grad_fn(batch):
        loss, grad, _, _ = deepnade.loss_minibatch(stack, batch, sampler)
        return grad.blocks(), loss

    def valid_fn():
        # Stochastic estimate of the validation mean log-likelihood under a
        # fixed evaluation seed, so early stopping is deterministic.
        eval_sampler = deepnade.OrderingPrefixSampler(D=stack.D, rng=np.random.default_rng(config.seed + 9999))
        loss, _, _, _ = deepnade.loss_minibatch(stack, valid, eval_sampler, want_grad=False)
        return -loss

    decay_keys = frozenset({"W0"})  # first layer is the input-to-hidden matrix
    history, best = _sgd_fit(
        stack.blocks(), grad_fn, valid_fn if valid is not None and len(valid) else None, train, config, decay_keys
    )
    return history, best


def train(model_kind, dataset, config, **model_opts):
    """Fit any supported model kind on a Dataset and return the best-validation
    snapshot plus the per-epoch history (train loss, validation score, lr)."""
    if model_kind not in MODEL_KINDS:
        raise DomainError(f"unknown model kind {model_kind!r}")
    X = dataset.train
    if len(X) == 0:
        raise DomainError("empty training set")
    valid = dataset.valid if len(dataset.valid) else None
    rng = np.random.default_rng(config.seed)
    meta = {}

    if model_kind == "nade":
        H = int(model_opts.get("hidden_units", 500))
        ordering = random_ordering(dataset.D, rng)
        params = nade.init_nade_params(dataset.D, H, rng)

        def grad_fn(batch):
            g, loss = nade.grad_nll_batch(params, ordering, batch)
            return g.blocks(), loss

        valid_fn = (lambda: _chunked_mean_loglik(lambda V: nade.log_prob_batch(params, ordering, V)[0], valid)) if valid is not None else None
        history, best = _sgd_fit(params.blocks(), grad_fn, valid_fn, X, config, frozenset({"W"}))
        meta = {"hidden_units": H, "ordering_seed": config.seed}
        return FitResult("nade", params, ordering, history, best, meta)

    if model_kind == "rnade":
        H = int(model_opts.get("hidden_units", 50))
        family = model_opts.get("family")
        if family is None:
            family = rnade.ConditionalFamily(model_opts.get("family_kind", rnade.MOG), int(model_opts.get("components", 5)))
        activation = model_opts.get("activation", "relu")
        ordering = random_ordering(dataset.D, rng)
        params = rnade.init_rnade_params(dataset.D, H, family, rng, activation=activation)
        scale_flag = config.sigma_scaled_mean_grad
        if scale_flag is None:
            scale_flag = family.has_pi_head  # default: on for mixture families

        def grad_fn(batch):
            g, loss = rnade.grad_nll_batch(params, ordering, batch, scale_mean_grad_by_sigma=scale_flag)
            return g.blocks(), loss

        valid_fn = (lambda: _chunked_mean_loglik(lambda V: rnade.log_prob_batch(params, ordering, V), valid)) if valid is not None else None
        history, best = _sgd_fit(params.blocks(), grad_fn, valid_fn, X, config, frozenset({"W"}))
        meta = {"hidden_units": H, "family": family.kind, "components": family.C, "sigma_scaled_mean_grad": scale_flag}
        return FitResult("rnade", params, ordering, history, best, meta)

    if model_kind == "deepnade":
        hidden_sizes = model_opts.get("hidden_sizes", [500])
        mask_concat = bool(model_opts.get("mask_concat", True))
        activation = model_opts.get("activation", "relu")
        pretrain_layers = bool(model_opts.get("pretrain", False))
        if pretrain_layers and len(hidden_sizes) >= 2:
            if len(set(hidden_sizes)) != 1:
                raise DomainError("layer-wise pretraining assumes equal hidden sizes")
            stack = deepnade.pretrain(
                len(hidden_sizes), X, rng, hidden_sizes[0], config, mask_concat=mask_concat, activation=activation
            )
        else:
            stack = deepnade.init_stack(dataset.D, hidden_sizes, rng, mask_concat=mask_concat, activation=activation)
        history, best = fit_stack(stack, X, valid, config, rng=rng)
        meta = {"hidden_sizes": list(hidden_sizes), "mask_concat": mask_concat, "ordering_seed": config.seed}
        return FitResult("deepnade", stack, None, history, best, meta)

    if model_kind == "mob":
        K = int(model_opts.get("components", 32))
        params, ll_history = baselines.mob_fit_em(X, K, max_iters=config.epochs, rng=rng, valid=valid, patience=config.patience)
        history = [HistoryRow(epoch=i, train_loss=-ll, valid_score=np.nan, lr=0.0) for i, ll in enumerate(ll_history)]
        best = _chunked_mean_loglik(lambda V: baselines.mob_logprob_batch(params, V), valid) if valid is not None else np.nan
        return FitResult("mob", params, None, history, best, {"components": K})

    if model_kind == "chowliu":
        alpha = model_opts.get("alpha")
        grid = model_opts.get("alpha_grid", baselines.CHOWLIU_ALPHA_GRID)
        if alpha is None:
            if valid is None:
                raise DomainError("alpha selection needs a validation split (or pass alpha=)")
            scored = []
            for a in grid:
                t = baselines.chowliu_fit(X, a)
                scored.append((_chunked_mean_loglik(lambda V: baselines.chowliu_logprob_batch(t, V), valid), a, t))
            best_score, alpha, tree = max(scored, key=lambda s: s[0])
        else:
            tree = baselines.chowliu_fit(X, alpha)
            best_score = _chunked_mean_loglik(lambda V: baselines.chowliu_logprob_batch(tree, V), valid) if valid is not None else np.nan
        history = [HistoryRow(epoch=0, train_loss=-_chunked_mean_loglik(lambda V: baselines.chowliu_logprob_batch(tree, V), X), valid_score=best_score, lr=0.0)]
        return FitResult("chowliu", tree, None, history, best_score, {"alpha": alpha})

    if model_kind == "fvsbn":
        ordering = random_ordering(dataset.D, rng)
        params = baselines.init_fvsbn_params(dataset.D, ordering)

        def grad_fn(batch):
            return baselines.fvsbn_grad_batch(params, batch)

        valid_fn = (lambda: _chunked_mean_loglik(lambda V: baselines.fvsbn_logprob_batch(params, V), valid)) if valid is not None else None
        history, best = _sgd_fit(params.blocks(), grad_fn, valid_fn, X, config, frozenset())
        return FitResult("fvsbn", params, ordering, history, best, {"ordering_seed": config.seed})

    # gaussian
    g = baselines.gaussian_fit_mle(X)
    best = _chunked_mean_loglik(lambda V: baselines.gaussian_logprob_batch(g, V), valid) if valid is not None else np.nan
    history = [HistoryRow(epoch=0, train_loss=-_chunked_mean_loglik(lambda V: baselines.gaussian_logprob_batch(g, V), X), valid_score=best, lr=0.0)]
    return FitResult("gaussian", g, None, history, best, {})


def per_example_loglik(kind, params, X, ordering=None, ensemble=None, ordering_seed=0):
    """Test-time per-example log-likelihoods for any model kind.

    For order-agnostic stacks, `ensemble` orderings are drawn from the
    recorded seed and probabilities are averaged; ensemble=None means one
    ordering.
    """
    if kind == "nade":
        return nade.log_prob_batch(params, ordering, X)[0]
    if kind == "rnade":
        return rnade.log_prob_batch(params, ordering, X)
    if kind == "deepnade":
        K = 1 if ensemble is None else int(ensemble)
        orderings = deepnade.ensemble_orderings(params.D, K, ordering_seed)
        if K == 1:
            return deepnade.logprob_ordering_batch(params, X, orderings[0])
        return deepnade.ensemble_logprob_batch(params, X, orderings)
    if kind == "mob":
        return baselines.mob_logprob_batch(params, X)
    if kind == "chowliu":
        return baselines.chowliu_logprob_batch(params, X)
    if kind == "fvsbn":
        return baselines.fvsbn_logprob_batch(params, X)
    if kind == "gaussian":
        return baselines.gaussian_logprob_batch(params, X)
    raise DomainError(f"unknown model kind {kind!r}")


def mean_and_stderr(values):
    """Sample mean and standard error (std / sqrt(N)) of per-example scores."""
    values = np.asarray(values, dtype=np.float64)
    n = len(values)
    se = float(values.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return float(values.mean()), se


def ordering_robustness(dataset, config, n_orderings, **model_opts):
    """Spread of fixed-order test log-likelihood across random orderings.

    Trains one model per ordering seed and reports the per-ordering mean test
    log-likelihoods plus their standard deviation; callers report this
    statistic rather than asserting its value.
    """
    scores = []
    for k in range(n_orderings):
        cfg = dataclasses.replace(config, seed=config.seed + k)
        result = train("nade", dataset, cfg, **model_opts)
        scores.append(float(per_example_loglik("nade", result.params, dataset.test, ordering=result.ordering).mean()))
    scores = np.asarray(scores)
    return scores, float(scores.std(ddof=1)) if n_orderings > 1 else 0.0
