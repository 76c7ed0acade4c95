"""Fourth-order covariant derivatives of scalar fields.

Partials use centred 5-point stencils applied along one grid axis at a time
(``np.roll``, so periodic boxes need no special casing; wrapped values on
non-periodic charts land in the fringe and are overwritten by the next halo
exchange).  Covariant corrections are applied recursively and each derivative
order is followed by a tensor halo exchange, so a stage never needs more than
two fringe layers.

Index convention: differentiation appends the new index on the right, so
``third[..., i, j, k]`` is ``u_{;ijk} = (u_{;ij})_{;k}``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .manifold import MetricAtlas, transfer_scalar, transfer_tensor

D1_WEIGHTS = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
D2_WEIGHTS = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0


def _stencil(f: np.ndarray, axis: int, weights: np.ndarray) -> np.ndarray:
    # grid axis ``axis`` is array axis ``axis + 1`` (axis 0 is the chart index)
    ax = axis + 1
    out = np.zeros_like(f)
    for offset, w in zip(range(-2, 3), weights):
        if w:
            out += w * np.roll(f, -offset, axis=ax)
    return out


def d1(f: np.ndarray, axis: int, h: float) -> np.ndarray:
    """First partial along grid ``axis``; trailing component axes are carried along."""
    return _stencil(f, axis, D1_WEIGHTS) / h


def d2(f: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Compact second partial along grid ``axis``."""
    return _stencil(f, axis, D2_WEIGHTS) / h**2


def gradient(u: np.ndarray, atlas: MetricAtlas) -> np.ndarray:
    return np.stack([d1(u, a, atlas.h) for a in range(atlas.dim)], axis=-1)


def partial_hessian(u: np.ndarray, atlas: MetricAtlas, grad: np.ndarray | None = None,
                    compact: bool = False) -> np.ndarray:
    """Second partials ``d_i d_j u``.

    With ``compact=False`` every entry is a composition of first-derivative
    stencils, so the discrete operators commute exactly and mixed third
    derivatives built on top are symmetric to roundoff.  ``compact=True`` uses
    the 5-point second-derivative stencil on the diagonal, which damps
    grid-scale modes and is what the time stepper uses.
    """
    n, h = atlas.dim, atlas.h
    if grad is None:
        grad = gradient(u, atlas)
    out = np.empty(u.shape + (n, n))
    for i in range(n):
        out[..., i, i] = d2(u, i, h) if compact else d1(grad[..., i], i, h)
        for j in range(i + 1, n):
            out[..., i, j] = out[..., j, i] = d1(grad[..., i], j, h)
    return out


def covariant_hessian(u: np.ndarray, atlas: MetricAtlas, grad: np.ndarray | None = None,
                      compact: bool = False) -> np.ndarray:
    """``u_{;ij} = d_i d_j u - Lambda^k_ij u_{;k}``."""
    if grad is None:
        grad = gradient(u, atlas)
    hess = partial_hessian(u, atlas, grad, compact)
    if atlas.kind != "torus":
        hess -= np.einsum("...kij,...k->...ij", atlas.christoffel, grad)
    return hess


def covariant_derivative(tensor: np.ndarray, atlas: MetricAtlas) -> np.ndarray:
    """Covariant derivative of a covariant tensor field; the new index goes last."""
    rank = tensor.ndim - 1 - atlas.dim
    n = atlas.dim
    out = np.stack([d1(tensor, a, atlas.h) for a in range(n)], axis=-1)
    if atlas.kind == "torus" or rank == 0:
        return out
    lam = atlas.christoffel  # [..., m, k, i] = Lambda^m_ki
    letters = "abcdefgh"[:rank]
    for pos in range(rank):
        # subtract Lambda^m_{k a_pos} T_{a_1 .. m .. a_r}
        src = letters[:pos] + "m" + letters[pos + 1:]
        out -= np.einsum(f"...mk{letters[pos]},...{src}->...{letters}k", lam, tensor)
    return out


@dataclass
class CovariantJet:
    grad: np.ndarray
    hess: np.ndarray
    third: np.ndarray | None = None
    fourth: np.ndarray | None = None

    @property
    def order(self) -> int:
        return 2 + (self.third is not None) + (self.fourth is not None)


def covariant_jet(u: np.ndarray, atlas: MetricAtlas, order: int = 2) -> CovariantJet:
    """Covariant derivatives of ``u`` up to ``order`` (1..4).

    Fringe values of ``u`` and of each intermediate tensor are refreshed from the
    donor chart before the next differentiation, so the input may carry stale
    fringe data.  ``order=1`` still returns the Hessian (it is needed by every
    consumer and costs little).
    """
    if not 1 <= order <= 4:
        raise ValueError(f"covariant jets are available up to order 4, got {order}")
    u = transfer_scalar(u, atlas)
    grad = gradient(u, atlas)
    hess = covariant_hessian(u, atlas, grad)
    jet = CovariantJet(transfer_tensor(grad, atlas, 1), transfer_tensor(hess, atlas, 2))
    if order >= 3:
        third = covariant_derivative(jet.hess, atlas)
        third = 0.5 * (third + third.swapaxes(-2, -3))
        jet.third = transfer_tensor(third, atlas, 3)
    if order >= 4:
        jet.fourth = transfer_tensor(covariant_derivative(jet.third, atlas), atlas, 4)
    return jet


def scalar_hessian(f: np.ndarray, atlas: MetricAtlas) -> tuple[np.ndarray, np.ndarray]:
    """Gradient and covariant Hessian of a derived scalar field, fringe refreshed first."""
    f = transfer_scalar(f, atlas)
    grad = gradient(f, atlas)
    return grad, covariant_hessian(f, atlas, grad)


def check_commutation(u: np.ndarray, atlas: MetricAtlas, order4: bool = True) -> dict[str, float]:
    """Max-norm residuals of the curvature commutation identities over owned nodes.

    ``first``:  u_{;pqk} - u_{;pkq} - u_{;l} C^l_pqk
    ``second``: u_{;kpqi} - u_{;kpiq} - u_{;lp} C^l_kqi - u_{;kl} C^l_pqi
    """
    jet = covariant_jet(u, atlas, 4 if order4 else 3)
    curv = atlas.curvature
    res1 = jet.third - jet.third.swapaxes(-1, -2) - np.einsum("...l,...lpqk->...pqk", jet.grad, curv)
    out = {"first": float(np.abs(res1[atlas.owned]).max())}
    if order4:
        res2 = (
            jet.fourth
            - jet.fourth.swapaxes(-1, -2)
            - np.einsum("...lp,...lkqi->...kpqi", jet.hess, curv)
            - np.einsum("...kl,...lpqi->...kpqi", jet.hess, curv)
        )
        out["second"] = float(np.abs(res2[atlas.owned]).max())
    return out
