"""Initial potentials: zero section, Laplace eigenmodes, random band-limited bumps."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .calculus import covariant_hessian
from .geometry import chi_from_hessian
from .manifold import MetricAtlas, sphere_embedding, transfer_scalar

# real degree-l harmonics as ambient polynomials in the unit-sphere coordinates (X, Y, Z):
# each entry maps m -> (value, gradient, Hessian) builders
_HARMONICS = {
    0: {0: lambda p: (np.ones_like(p[..., 0]), np.zeros(p.shape), np.zeros(p.shape + (3,)))},
    1: {
        m: (lambda a: lambda p: (p[..., a], np.broadcast_to(np.eye(3)[a], p.shape).copy(),
                                 np.zeros(p.shape + (3,))))(axis)
        for m, axis in ((-1, 1), (0, 2), (1, 0))
    },
    2: {},
}


def _quadratic(mat: np.ndarray):
    mat = np.asarray(mat, float)

    def build(p):
        val = np.einsum("...a,ab,...b->...", p, mat, p)
        grad = 2.0 * p @ mat
        hess = np.broadcast_to(2.0 * mat, p.shape + (3,)).copy()
        return val, grad, hess
    return build


_HARMONICS[2] = {
    -2: _quadratic([[0, 0.5, 0], [0.5, 0, 0], [0, 0, 0]]),   # XY
    -1: _quadratic([[0, 0, 0], [0, 0, 0.5], [0, 0.5, 0]]),   # YZ
    0: lambda p: (3 * p[..., 2] ** 2 - 1, np.stack([0 * p[..., 0], 0 * p[..., 0], 6 * p[..., 2]], -1),
                  np.broadcast_to(np.diag([0.0, 0.0, 6.0]), p.shape + (3,)).copy()),
    1: _quadratic([[0, 0, 0.5], [0, 0, 0], [0.5, 0, 0]]),    # XZ
    2: _quadratic([[1, 0, 0], [0, -1, 0], [0, 0, 0]]),       # X^2 - Y^2
}


def ambient_harmonic(ell: int, m: int, points: np.ndarray):
    """Value, ambient gradient and ambient Hessian of a real degree-``ell`` harmonic."""
    if ell not in _HARMONICS:
        raise ValueError(f"harmonics are tabulated for degree 0..2, got {ell}")
    if m not in _HARMONICS[ell]:
        raise ValueError(f"order m must satisfy |m| <= {ell}, got {m}")
    return _HARMONICS[ell][m](points)


def sphere_chart_map_derivatives(atlas: MetricAtlas) -> tuple[np.ndarray, np.ndarray]:
    """First and second chart derivatives of the unit-sphere embedding.

    Returns ``dphi[..., A, j]`` and ``ddphi[..., A, j, k]`` for A in (X, Y, Z).
    """
    x = atlas.coords
    s = 1.0 + np.sum(x**2, axis=-1)
    eye = np.eye(2)
    dphi = np.zeros(x.shape[:-1] + (3, 2))
    ddphi = np.zeros(x.shape[:-1] + (3, 2, 2))
    s1, s2, s3 = s[..., None], s[..., None, None], s[..., None, None, None]
    # planar components 2 x_a / s
    dphi[..., :2, :] = 2.0 * eye / s2 - 4.0 * np.einsum("...a,...j->...aj", x, x) / s2**2
    ddphi[..., :2, :, :] = (
        -4.0 * np.einsum("aj,...k->...ajk", eye, x)
        - 4.0 * np.einsum("ak,...j->...ajk", eye, x)
        - 4.0 * np.einsum("...a,jk->...ajk", x, eye)
    ) / s3**2 + 16.0 * np.einsum("...a,...j,...k->...ajk", x, x, x) / s3**3
    # Z = +-(1 - 2/s): chart 0 is the projection from the north pole
    dz = 4.0 * x / s1**2
    ddz = 4.0 * eye / s2**2 - 16.0 * np.einsum("...j,...k->...jk", x, x) / s2**3
    sign = np.array([1.0, -1.0]).reshape((2,) + (1,) * (x.ndim - 1))
    dphi[..., 2, :] = sign * dz
    ddphi[..., 2, :, :] = sign[..., None] * ddz
    return dphi, ddphi


@dataclass
class InitialCondition:
    kind: str = "zero"  # zero | mode | bump
    amplitude: float = 1e-3
    mode: tuple[int, ...] = (1, 0)  # torus wave vector, or (ell, m) on the sphere
    bandlimit: int = 3
    target_max_chi: float | None = None


def mode_field(atlas: MetricAtlas, mode: tuple[int, ...]) -> np.ndarray:
    """Unit-amplitude Laplace eigenfunction: ``cos(k.x)`` on the torus, a real harmonic on the sphere."""
    if atlas.kind == "torus":
        k = np.asarray(mode, float)
        if k.shape != (atlas.dim,) or np.any(k != np.round(k)):
            raise ValueError(f"torus mode needs {atlas.dim} integer wave numbers, got {mode}")
        return np.cos(atlas.coords @ k)
    ell, m = mode
    return ambient_harmonic(ell, m, sphere_embedding(atlas))[0]


def bandlimited_field(atlas: MetricAtlas, seed: int, bandlimit: int) -> np.ndarray:
    """Seeded random field with sup-norm 1 and no content above ``bandlimit``.

    On the sphere it is a random polynomial of degree <= bandlimit in the ambient
    coordinates (harmonics of degree <= bandlimit); on the torus a random
    trigonometric polynomial with ``|k|_inf <= bandlimit``.
    """
    rng = np.random.default_rng(seed)
    if atlas.kind == "torus":
        x = atlas.coords
        u = np.zeros(atlas.grid_shape)
        for k in itertools.product(range(-bandlimit, bandlimit + 1), repeat=atlas.dim):
            k = np.array(k, float)
            if not k.any():
                continue
            a, b = rng.standard_normal(2) / (k @ k)
            phase = x @ k
            u += a * np.cos(phase) + b * np.sin(phase)
    else:
        p = sphere_embedding(atlas)
        u = np.zeros(atlas.grid_shape)
        for deg in range(1, bandlimit + 1):
            for a in range(deg + 1):
                for b in range(deg + 1 - a):
                    c = deg - a - b
                    u += rng.standard_normal() * p[..., 0] ** a * p[..., 1] ** b * p[..., 2] ** c
    return u / np.abs(u[atlas.owned]).max()


def scale_to_max_chi(u: np.ndarray, atlas: MetricAtlas, target: float) -> float:
    """Amplitude ``a`` such that ``max chi`` of ``a*u`` equals ``target`` (chi = det G / det sigma)."""
    if not target > 1.0:
        raise ValueError(f"target max chi must exceed 1, got {target}")
    hess = covariant_hessian(transfer_scalar(u, atlas), atlas, compact=True)[atlas.owned]
    sinv = atlas.sigma_inv[atlas.owned]

    def excess(a):
        return chi_from_hessian(a * hess, sinv).max() - target

    hi = 1.0
    while excess(hi) < 0:
        hi *= 2.0
    return brentq(excess, 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)


def initial_field(atlas: MetricAtlas, ic: InitialCondition, seed: int = 0) -> np.ndarray:
    if ic.kind == "zero":
        return atlas.zeros()
    if ic.kind == "mode":
        u = mode_field(atlas, ic.mode)
    elif ic.kind == "bump":
        u = bandlimited_field(atlas, seed, ic.bandlimit)
    else:
        raise ValueError(f"unknown initial condition kind {ic.kind!r}")
    amp = ic.amplitude if ic.target_max_chi is None else scale_to_max_chi(u, atlas, ic.target_max_chi)
    return transfer_scalar(amp * u, atlas)
