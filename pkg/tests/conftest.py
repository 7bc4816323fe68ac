"""Shared test helpers: finite-difference harness, random model factories,
and gating for the benchmark-dataset tests."""

import os
from pathlib import Path

import numpy as np
import pytest

from nadekit import data, nade, rnade


def finite_difference(loss_fn, blocks, eps=1e-5):
    """Central finite differences of a scalar loss over named parameter
    arrays; returns a dict of gradient arrays."""
    out = {}
    for name, arr in blocks.items():
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = arr[idx]
            arr[idx] = old + eps
            hi = loss_fn()
            arr[idx] = old - eps
            lo = loss_fn()
            arr[idx] = old
            g[idx] = (hi - lo) / (2.0 * eps)
        out[name] = g
    return out


def max_relative_error(analytic, numeric, floor=1e-8):
    worst = 0.0
    for k in analytic:
        a, n = analytic[k], numeric[k]
        rel = np.abs(a - n) / np.maximum(floor, np.abs(a) + np.abs(n))
        worst = max(worst, float(rel.max()))
    return worst


def random_nade_params(D, H, rng, bias_scale=0.5):
    """Fully random parameters, biases included, for gradient checks."""
    params = nade.init_nade_params(D, H, rng)
    params.b[...] = bias_scale * rng.normal(size=D)
    params.c[...] = bias_scale * rng.normal(size=H)
    return params


def random_rnade_params(D, H, family, rng, bias_scale=0.4):
    """Random parameters with biases pushed off the ReLU kinks, so central
    differences see a locally smooth objective."""
    params = rnade.init_rnade_params(D, H, family, rng)
    params.c[...] = bias_scale * rng.normal(size=H) + 0.1
    params.b_mu[...] = bias_scale * rng.normal(size=params.b_mu.shape)
    if params.b_sigma is not None:
        params.b_sigma[...] = 0.3 * rng.normal(size=params.b_sigma.shape)
    if params.b_pi is not None:
        params.b_pi[...] = bias_scale * rng.normal(size=params.b_pi.shape)
    return params


def benchmark_dir(name):
    """Path of a prepared benchmark dataset, or None when absent."""
    path = data.default_data_dir() / name
    return path if path.is_dir() else None


def require_benchmark(name):
    path = benchmark_dir(name)
    if path is None:
        pytest.skip(
            f"benchmark dataset {name!r} not present under {data.default_data_dir()} "
            "(run scripts/fetch_data.py on a machine with network access)"
        )
    return path
