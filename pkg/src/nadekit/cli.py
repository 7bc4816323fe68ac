"""Command-line surface: train, eval, sample, impute, bench.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
All numeric CSV output carries full round-trip precision.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from . import baselines, data, deepnade, nade, rnade, serialize, training
from .util import ContractError, DomainError, ShapeError


class UsageError(Exception):
    pass


def _fmt(x):
    return f"{x:.17g}"


def parse_config(text):
    """key=value lines -> (TrainConfig, model options dict).

    Schedule keys: schedule={inv_decay,linear_to_zero}, eta, gamma,
    total_updates.  Unrecognized keys are passed through to the model.
    """
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"config line {lineno}: expected key=value, got {line!r}")
        raw[key.strip()] = value.strip()

    def pop(key, cast, default):
        if key in raw:
            try:
                return cast(raw.pop(key))
            except ValueError:
                raise UsageError(f"config key {key}: cannot parse value") from None
        return default

    def as_bool(s):
        if s.lower() in ("1", "true", "yes", "on"):
            return True
        if s.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(s)

    schedule = training.Schedule(
        kind=pop("schedule", str, "inv_decay"),
        eta=pop("eta", float, 0.05),
        gamma=pop("gamma", float, 0.0),
        total_updates=pop("total_updates", int, 0),
    )
    sigma_flag = pop("sigma_scaled_mean_grad", as_bool, None)
    config = training.TrainConfig(
        minibatch_size=pop("minibatch_size", int, 100),
        epochs=pop("epochs", int, 50),
        updates_per_epoch=pop("updates_per_epoch", int, None),
        schedule=schedule,
        momentum=pop("momentum", float, 0.0),
        weight_decay=pop("weight_decay", float, 0.0),
        patience=pop("patience", int, 0),
        seed=pop("seed", int, 0),
        sigma_scaled_mean_grad=sigma_flag,
    )

    opts = {}
    for key, value in raw.items():
        if key in ("hidden_units", "components", "pgm_cols"):
            opts[key] = int(value)
        elif key == "hidden_sizes":
            opts[key] = [int(v) for v in value.split(",") if v]
        elif key in ("mask_concat", "pretrain"):
            opts[key] = as_bool(value)
        elif key == "alpha":
            opts[key] = float(value)
        elif key == "alpha_grid":
            opts[key] = [float(v) for v in value.split(",") if v]
        elif key in ("family", "family_kind"):
            opts["family_kind"] = value
        elif key == "activation":
            opts[key] = value
        else:
            raise UsageError(f"unknown config key {key!r}")
    return config, opts


def _dataset_kind_for_model(model_kind):
    return data.REAL if model_kind in ("rnade", "gaussian") else data.BINARY


def _load_model(path):
    container = serialize.load_model(path)
    kind, params, ordering = serialize.model_from_container(container)
    return kind, params, ordering, container.meta


def _eval_logliks(kind, params, ordering, meta, X, ensemble=None):
    seed = int(meta.get("ordering_seed", 0))
    return training.per_example_loglik(kind, params, X, ordering=ordering, ensemble=ensemble, ordering_seed=seed)


def cmd_train(args):
    config, opts = parse_config(Path(args.config).read_text())
    dataset = data.load_dataset(args.data, _dataset_kind_for_model(args.model))
    result = training.train(args.model, dataset, config, **opts)
    meta = {k: v for k, v in result.meta.items()}
    meta["train_seed"] = config.seed
    container = serialize.container_from_model(result.kind, result.params, ordering=result.ordering, meta=meta)
    serialize.save_model(container, args.out)
    with open(str(args.out) + ".history.csv", "w") as fh:
        fh.write(training.history_to_csv(result.history))
    if result.history:
        last = result.history[-1]
        print(f"epochs,{len(result.history)}")
        print(f"final_train_loss,{_fmt(last.train_loss)}")
        if np.isfinite(result.best_valid):
            print(f"best_valid,{_fmt(result.best_valid)}")
    return 0


def cmd_eval(args):
    kind, params, ordering, meta = _load_model(args.model)
    dataset = data.load_dataset(args.data, _dataset_kind_for_model(kind))
    X = dataset.test if len(dataset.test) else dataset.train
    logliks = _eval_logliks(kind, params, ordering, meta, X, ensemble=args.ensemble)
    if not np.all(np.isfinite(logliks)):
        raise FloatingPointError("non-finite log-likelihood on the evaluation set")
    mean, se = training.mean_and_stderr(logliks)
    print("mean_loglik,stderr,n")
    print(f"{_fmt(mean)},{_fmt(se)},{len(logliks)}")
    return 0


def cmd_sample(args):
    kind, params, ordering, meta = _load_model(args.model)
    rng = np.random.default_rng(args.seed)
    n = args.n
    if kind == "nade":
        X, _ = nade.sample_batch(params, ordering, rng, n) if n else (np.zeros((0, params.D)), None)
    elif kind == "rnade":
        X = rnade.sample_batch(params, ordering, rng, n) if n else np.zeros((0, params.D))
    elif kind == "deepnade":
        seed = int(meta.get("ordering_seed", 0))
        o = deepnade.ensemble_orderings(params.D, 1, seed)[0]
        X = np.zeros((n, params.D))
        for i in range(n):
            X[i], _ = _deepnade_sample(params, o, rng)
    elif kind == "mob":
        X = _mob_sample(params, rng, n)
    else:
        raise UsageError(f"sampling is not supported for model kind {kind!r}")
    data.save_split(args.out, X)
    if args.pgm:
        if not args.shape:
            raise UsageError("--pgm needs --shape HxW")
        h, _, w = args.shape.partition("x")
        data.write_pgm_grid(args.pgm, X, (int(h), int(w)), cols=args.pgm_cols)
    return 0


def _deepnade_sample(stack, o, rng):
    x = np.zeros(stack.D)
    m = np.zeros(stack.D)
    p_used = np.zeros(stack.D)
    for d in range(stack.D):
        od = o[d]
        out = deepnade.forward(stack, x, m)
        p_used[od] = out[od]
        x[od] = float(rng.random() < out[od])
        m[od] = 1.0
    return x, p_used


def _mob_sample(params, rng, n):
    comp = rng.choice(params.K, size=n, p=params.weights / params.weights.sum())
    return (rng.random((n, params.D)) < params.means[comp]).astype(np.float64)


def cmd_impute(args):
    kind, params, ordering, meta = _load_model(args.model)
    if kind != "deepnade":
        raise UsageError("imputation requires an order-agnostic (deepnade) model")
    dataset = data.load_dataset(args.data, data.BINARY)
    X = dataset.train
    masks = data.load_split_file(args.mask, data.BINARY)
    if masks.shape[0] == 1:
        masks = np.repeat(masks, X.shape[0], axis=0)
    if masks.shape != X.shape:
        raise data.DataError(f"mask shape {masks.shape} does not match data {X.shape}")
    rng = np.random.default_rng(args.seed)
    completed = []
    for x, m in zip(X, masks):
        completed.append(deepnade.impute(params, x, m, rng, args.n))
    data.save_split(args.out, np.concatenate(completed, axis=0))
    return 0


def cmd_bench(args):
    """Run a recipe file: one job per line,
    `NAME model=KIND data=PATH config=PATH [ensemble=K] [model_path=FILE]`,
    training (unless model_path is given) and evaluating each job, then
    printing one CSV row per job."""
    print("job,mean_loglik,stderr,ci95,n")
    for line in Path(args.recipe).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        name, *pairs = line.split()
        kv = dict(p.partition("=")[::2] for p in pairs)
        ensemble = int(kv["ensemble"]) if "ensemble" in kv else None
        if "model_path" in kv:
            kind, params, ordering, meta = _load_model(kv["model_path"])
            dataset = data.load_dataset(kv["data"], _dataset_kind_for_model(kind))
        else:
            config, opts = parse_config(Path(kv["config"]).read_text())
            dataset = data.load_dataset(kv["data"], _dataset_kind_for_model(kv["model"]))
            result = training.train(kv["model"], dataset, config, **opts)
            kind, params, ordering = result.kind, result.params, result.ordering
            meta = {str(k): str(v) for k, v in result.meta.items()}
            if "out" in kv:
                serialize.save_model(
                    serialize.container_from_model(kind, params, ordering=ordering, meta=meta), kv["out"]
                )
        X = dataset.test if len(dataset.test) else dataset.train
        logliks = _eval_logliks(kind, params, ordering, meta, X, ensemble=ensemble)
        mean, se = training.mean_and_stderr(logliks)
        print(f"{name},{_fmt(mean)},{_fmt(se)},{_fmt(1.96 * se)},{len(logliks)}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="nadekit", description="Train and evaluate tractable density estimators.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a model and save it")
    p.add_argument("--model", required=True, choices=training.MODEL_KINDS)
    p.add_argument("--data", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="mean test log-likelihood as CSV on stdout")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--ensemble", type=int, default=None, help="orderings to average (order-agnostic models)")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("sample", help="draw samples to a text file")
    p.add_argument("--model", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pgm", default=None, help="also write a PGM grid image")
    p.add_argument("--shape", default=None, help="HxW layout of each sample for --pgm")
    p.add_argument("--pgm-cols", dest="pgm_cols", type=int, default=10)
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("impute", help="complete missing entries by ancestral sampling")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--mask", required=True, help="observed-position indicators (1 row, or one per example)")
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_impute)

    p = sub.add_parser("bench", help="run a recipe of train+eval jobs, CSV table on stdout")
    p.add_argument("--recipe", required=True)
    p.set_defaults(fn=cmd_bench)
    return parser


def cli(argv):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (data.DataError, serialize.FormatError, FileNotFoundError, ShapeError, DomainError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (training.TrainingError, FloatingPointError, np.linalg.LinAlgError, ContractError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


def main():
    sys.exit(cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
