import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gevkam.torus_fn import TorusMatFn

settings.register_profile("default", max_examples=100, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_fn(rng, n=2, d=1, band=3, nmodes=5, real=False, half=False, decay=1.0):
    """Sparse random function with |m| <= band (doubled coordinates when half)."""
    modes = {}
    for _ in range(nmodes):
        if half:
            m = rng.integers(-2 * band, 2 * band + 1, size=d)
        else:
            m = 2 * rng.integers(-band, band + 1, size=d)
        if np.abs(m).sum() > 2 * band:
            continue
        c = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        modes[tuple(int(x) for x in m)] = c * np.exp(-decay * np.abs(m).sum() / 2)
    if not modes:
        modes[(0,) * d] = rng.normal(size=(n, n)).astype(complex)
    f = TorusMatFn.from_modes(modes, n, d, doubled=True)
    return f.with_(real=True) if real else f


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_RUNS = {}


def reference_run(group="sl2", target=1e-80, steps=3):
    """Cached practical-mode run on the reference instance: (A, F, params, result)."""
    from gevkam.instances import reference_A, reference_dd, reference_perturbation
    from gevkam.kam import KamParams, run
    from gevkam.torus_fn import GroupTag
    key = (group, target, steps)
    if key not in _RUNS:
        tag = GroupTag.parse(group)
        p = KamParams(reference_dd(), tag, mode="practical", c_N=2, max_band=64,
                      target_eps=target, max_steps=steps, eps0=1e-2)
        A, F = reference_A(tag), reference_perturbation(tag, seed=0, size=1e-3)
        _RUNS[key] = (A, F, p, run(A, F, p))
    return _RUNS[key]
