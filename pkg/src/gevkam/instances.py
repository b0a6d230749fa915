"""Reference problem instances used by the tests, scripts and configs."""
from __future__ import annotations

import math

import numpy as np

from .arithmetic import DiophantineData
from .torus_fn import GroupTag, TorusMatFn, gevrey_upper_bound

GOLDEN = (math.sqrt(5) - 1) / 2
REFERENCE_OMEGA = (1.0, GOLDEN)
REFERENCE_A = np.array([[0.0, 0.25], [-0.25, 0.0]])


def reference_dd() -> DiophantineData:
    return DiophantineData(REFERENCE_OMEGA, 0.1, 1.5)


def _modes(d: int, radius: int):
    for a in range(-radius, radius + 1):
        for b in range(-radius + abs(a), radius - abs(a) + 1):
            yield (a, b) if d == 2 else (a,)


def reference_perturbation(group: GroupTag | str = GroupTag.SL_R, seed: int = 0, size: float = 1e-3,
                           r: float = 0.5, radius: int = 2) -> TorusMatFn:
    """Random F in the algebra of ``group`` with integer modes |m| <= radius, weights e^{-|m|},
    scaled so that S_r(F) = size."""
    tag = GroupTag.parse(group)
    rng = np.random.default_rng(seed)
    modes = {}
    done = set()
    for m in _modes(2, radius):
        if m in done:
            continue
        neg = tuple(-x for x in m)
        wgt = math.exp(-sum(abs(x) for x in m))
        z = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
        if tag is GroupTag.SL_R or tag is GroupTag.SP_R:
            z = z - np.trace(z) / 2 * np.eye(2)
        elif tag is GroupTag.O:
            z = complex(z[0, 0]) * np.array([[0, 1], [-1, 0]])
        elif tag is GroupTag.U:
            # c_{-m} = -c_m^H makes every value skew-Hermitian
            if m == neg:
                z = (z - z.conj().T) / 2
        c = wgt * z
        if tag.is_real:
            c = c if m != neg else c.real.astype(complex)
            modes[m] = c
            modes[neg] = np.conj(c)
        elif tag is GroupTag.U:
            modes[m] = c
            modes[neg] = -c.conj().T
        else:
            modes[m] = c
            modes[neg] = rng.normal(size=(2, 2)) * wgt
        done.update({m, neg})
    F = TorusMatFn.from_modes(modes, real=tag.is_real)
    return F.scale(size / gevrey_upper_bound(F, r))


def reference_A(group: GroupTag | str = GroupTag.SL_R) -> np.ndarray:
    tag = GroupTag.parse(group)
    if tag is GroupTag.U:
        return 1j * np.array([[0.25, 0.05], [0.05, -0.1]])
    if tag is GroupTag.GL_C:
        return REFERENCE_A.astype(complex)
    return REFERENCE_A.copy()
