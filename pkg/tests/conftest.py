import os

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=30, deadline=None)
settings.register_profile("ci", max_examples=100, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def brute_dft(x):
    """Direct O(T^2) summation, the oracle for every FFT-based result."""
    x = np.asarray(x, dtype=complex)
    n = x.shape[0]
    k = np.arange(n)
    basis = np.exp(-2j * np.pi * np.outer(k, k) / n)
    return basis @ x


def brute_bandpass(x, fps, f_lo, f_hi):
    n = len(x)
    spec = brute_dft(x)
    k = np.arange(n)
    freq = np.minimum(k, n - k) * fps / n
    spec[(freq < f_lo) | (freq > f_hi)] = 0
    basis = np.exp(2j * np.pi * np.outer(k, k) / n) / n
    return (basis @ spec).real
