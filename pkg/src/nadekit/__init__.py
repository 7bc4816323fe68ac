"""Tractable neural autoregressive density estimation toolkit.

Binary and real-valued autoregressive models with exact likelihoods,
order-agnostic deep variants, classical tractable baselines, and the shared
training/evaluation protocol, all behind one CLI.
"""

__version__ = "0.1.0"
