"""Pointwise algebra of the graph of ``du`` and the monitored geometric scalars.

Node-level helpers accept stacks of matrices ``(..., n, n)``; the field-level
functions take a :class:`~slagflow.calculus.CovariantJet` and an atlas.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .calculus import CovariantJet, covariant_hessian, covariant_jet, gradient, scalar_hessian
from .manifold import MetricAtlas, transfer_scalar

BRANCH_MARGIN = 0.01
LAMBDA_GUARD = np.tan(np.pi / 2 - BRANCH_MARGIN)
DEGENERACY_GAP = 1e-6


class BranchRiskError(ValueError):
    """The complex-determinant angle would leave the principal branch."""


# -- node-level algebra ----------------------------------------------------------

def induced_metric_matrix(hess: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """``G = sigma + H sigma^{-1} H``."""
    return sigma + hess @ np.linalg.solve(sigma, hess)


def spd_inverse(a: np.ndarray) -> np.ndarray:
    """Inverse of a stack of SPD matrices through their Cholesky factors."""
    linv = np.linalg.inv(np.linalg.cholesky(a))
    return linv.swapaxes(-1, -2) @ linv


def _check_finite(*arrays: np.ndarray) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError("non-finite entries in matrix input")


def generalized_eigh(hess: np.ndarray, sigma: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Solve ``H w = lambda sigma w``; eigenvectors are sigma-orthonormal columns."""
    hess, sigma = np.asarray(hess, float), np.asarray(sigma, float)
    _check_finite(hess, sigma)
    linv = np.linalg.inv(np.linalg.cholesky(sigma))
    reduced = linv @ hess @ linv.swapaxes(-1, -2)
    reduced = 0.5 * (reduced + reduced.swapaxes(-1, -2))
    lam, vec = np.linalg.eigh(reduced)
    return lam, linv.swapaxes(-1, -2) @ vec


def generalized_eigenvalues(hess: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """Eigenvalues of the Hessian relative to ``sigma``, ascending."""
    hess, sigma = np.asarray(hess, float), np.asarray(sigma, float)
    _check_finite(hess, sigma)
    linv = np.linalg.inv(np.linalg.cholesky(sigma))
    reduced = linv @ hess @ linv.swapaxes(-1, -2)
    return np.linalg.eigvalsh(0.5 * (reduced + reduced.swapaxes(-1, -2)))


def branch_safe(lam: np.ndarray) -> np.ndarray:
    """Nodes where the principal argument of the angle factor is the true angle."""
    return np.all(np.abs(lam) < LAMBDA_GUARD, axis=-1) & (
        np.sum(np.abs(np.arctan(lam)), axis=-1) < np.pi - BRANCH_MARGIN
    )


def angle(hess: np.ndarray, sigma: np.ndarray, method: str = "eigen") -> np.ndarray:
    """Lagrangian angle of the graph of ``du`` at stacks of nodes.

    ``eigen`` sums ``arctan`` of the generalized eigenvalues and is single valued;
    ``complex_det`` takes the principal argument of
    ``det(sigma + iH) / (sqrt(det sigma) sqrt(det G))``.
    """
    hess, sigma = np.asarray(hess, float), np.asarray(sigma, float)
    lam = generalized_eigenvalues(hess, sigma)
    if method == "eigen":
        return np.arctan(lam).sum(axis=-1)
    if method != "complex_det":
        raise ValueError(f"unknown angle method {method!r}")
    if not np.all(branch_safe(lam)):
        raise BranchRiskError(
            "an eigenvalue of the Hessian is beyond the principal-branch guard; "
            "use method='eigen'"
        )
    num = np.linalg.det(sigma + 1j * hess)
    g = induced_metric_matrix(hess, sigma)
    return np.angle(num / np.sqrt(np.linalg.det(sigma) * np.linalg.det(g)))


def fast_angle(hess: np.ndarray, sigma_inv: np.ndarray, det_sigma: np.ndarray) -> np.ndarray:
    """Eigen-sum angle via symmetric functions of the eigenvalues (n <= 2).

    For n = 2, ``arctan l1 + arctan l2 = atan2(l1 + l2, 1 - l1 l2)`` holds exactly
    because the sum never leaves (-pi, pi).  n = 3 falls back to eigenvalues.
    """
    n = hess.shape[-1]
    if n == 1:
        return np.arctan(hess[..., 0, 0] * sigma_inv[..., 0, 0])
    if n == 2:
        tr = np.einsum("...ij,...ji->...", sigma_inv, hess)
        det = (hess[..., 0, 0] * hess[..., 1, 1] - hess[..., 0, 1] * hess[..., 1, 0]) / det_sigma
        return np.arctan2(tr, 1.0 - det)
    sigma = np.linalg.inv(sigma_inv)
    return np.arctan(generalized_eigenvalues(hess, sigma)).sum(axis=-1)


def chi_from_hessian(hess: np.ndarray, sigma_inv: np.ndarray) -> np.ndarray:
    """``det G / det sigma = det(I + (sigma^{-1} H)^2)``."""
    a = sigma_inv @ hess
    n = a.shape[-1]
    return np.linalg.det(np.eye(n) + a @ a)


# -- field level -----------------------------------------------------------------

def induced_metric(jet: CovariantJet, atlas: MetricAtlas) -> tuple[np.ndarray, np.ndarray]:
    g = atlas.sigma + jet.hess @ atlas.sigma_inv @ jet.hess
    return g, spd_inverse(g)


def lagrangian_angle(jet: CovariantJet, atlas: MetricAtlas, method: str = "eigen") -> np.ndarray:
    return angle(jet.hess, atlas.sigma, method)


@dataclass
class LagrangianState:
    G: np.ndarray
    G_inv: np.ndarray
    lam: np.ndarray
    theta: np.ndarray
    chi: np.ndarray
    rho: np.ndarray
    vartheta: np.ndarray
    Lambda2: np.ndarray
    Theta2: np.ndarray
    mu: np.ndarray
    Upsilon2: np.ndarray | None = None

    def extrema(self, atlas: MetricAtlas, p_exponent: float = 1.0) -> dict[str, float]:
        own = atlas.owned
        out = {
            "max_chi": float(self.chi[own].max()),
            "max_vartheta": float(self.vartheta[own].max()),
            "max_Lambda2": float(self.Lambda2[own].max()),
            "max_Theta2": float(self.Theta2[own].max()),
            "max_chi_p_Theta2": float((self.chi[own] ** p_exponent * self.Theta2[own]).max()),
            "min_theta": float(self.theta[own].min()),
            "max_theta": float(self.theta[own].max()),
        }
        if self.Upsilon2 is not None:
            out["max_Upsilon2"] = float(self.Upsilon2[own].max())
        return out


def theta_squared(third: np.ndarray, g_inv: np.ndarray) -> np.ndarray:
    return np.einsum("...ip,...jq,...kr,...ijk,...pqr->...", g_inv, g_inv, g_inv, third, third,
                     optimize=True)


def upsilon_squared(fourth: np.ndarray, g_inv: np.ndarray) -> np.ndarray:
    return np.einsum("...ms,...ip,...jq,...kr,...ijkm,...pqrs->...", g_inv, g_inv, g_inv, g_inv,
                     fourth, fourth, optimize=True)


def monitors(jet: CovariantJet, atlas: MetricAtlas) -> LagrangianState:
    """All monitored scalars at every node (fringe values are refreshed copies)."""
    if jet.third is None:
        raise ValueError("monitors need at least an order-3 jet")
    g, g_inv = induced_metric(jet, atlas)
    lam = generalized_eigenvalues(jet.hess, atlas.sigma)
    theta = np.arctan(lam).sum(axis=-1)
    chi = np.linalg.det(g) / atlas.det_sigma
    a = atlas.sigma_inv @ jet.hess
    return LagrangianState(
        G=g,
        G_inv=g_inv,
        lam=lam,
        theta=theta,
        chi=chi,
        rho=0.5 * np.log(chi),
        vartheta=np.einsum("...ij,...i,...j->...", atlas.sigma_inv, jet.grad, jet.grad),
        Lambda2=np.einsum("...ij,...ji->...", a, a),
        Theta2=theta_squared(jet.third, g_inv),
        mu=gradient(transfer_scalar(theta, atlas), atlas),
        Upsilon2=None if jet.fourth is None else upsilon_squared(jet.fourth, g_inv),
    )


def theta_gradient_identity(u: np.ndarray, atlas: MetricAtlas) -> float:
    """Max over owned nodes of ``|d_k theta - (G^{-1})^{ij} u_{;ijk}|``.

    The left side differentiates the eigen-sum angle field by finite differences,
    so it never touches the contraction it is compared with.
    """
    jet = covariant_jet(u, atlas, 3)
    _, g_inv = induced_metric(jet, atlas)
    theta = transfer_scalar(np.arctan(generalized_eigenvalues(jet.hess, atlas.sigma)).sum(-1), atlas)
    fd = gradient(theta, atlas)
    contraction = np.einsum("...ij,...ijk->...k", g_inv, jet.third)
    return float(np.abs(fd - contraction)[atlas.owned].max())


def centered_rate(u_prev: np.ndarray, u_next: np.ndarray, dt: float) -> np.ndarray:
    """Second-order time-derivative estimate from the two neighbouring time levels."""
    return (u_next - u_prev) / (2.0 * dt)


@dataclass(frozen=True)
class Residual:
    norm: float
    checked: int
    skipped: int = 0


def residual_vartheta(u: np.ndarray, dudt: np.ndarray, atlas: MetricAtlas) -> Residual:
    """Residual of the evolution equation of ``vartheta = |du|^2``.

    ``d_t vartheta - G^{ij} vartheta_{;ij}`` against
    ``-2 s^{ij} G^{pq} u_{;ip} u_{;jq} + 2 s^{ij} G^{pq} C^l_{pqi} u_{;l} u_{;j}``.
    """
    jet = covariant_jet(u, atlas, 2)
    _, g_inv = induced_metric(jet, atlas)
    s_inv = atlas.sigma_inv
    grad_rate = gradient(transfer_scalar(dudt, atlas), atlas)
    vartheta = np.einsum("...ij,...i,...j->...", s_inv, jet.grad, jet.grad)
    _, vt_hess = scalar_hessian(vartheta, atlas)
    lhs = 2.0 * np.einsum("...ij,...i,...j->...", s_inv, jet.grad, grad_rate)
    lhs -= np.einsum("...ij,...ij->...", g_inv, vt_hess)
    rhs = -2.0 * np.einsum("...ij,...pq,...ip,...jq->...", s_inv, g_inv, jet.hess, jet.hess, optimize=True)
    if atlas.kappa:
        rhs += 2.0 * np.einsum("...ij,...pq,...lpqi,...l,...j->...", s_inv, g_inv, atlas.curvature,
                               jet.grad, jet.grad, optimize=True)
    own = atlas.owned
    return Residual(float(np.abs(lhs - rhs)[own].max()), int(own.sum()))


def residual_rho_sphere(u: np.ndarray, dudt: np.ndarray, atlas: MetricAtlas) -> Residual:
    """Residual of the diagonal-frame evolution equation of ``rho = ln(det G/det sigma)/2``.

    Needs a space form (constant ``kappa``, parallel curvature).  At each node the
    third derivatives are rotated into the sigma-orthonormal eigenframe of the
    Hessian; nodes with nearly coincident eigenvalues are skipped.
    """
    if not atlas.curvature_parallel or atlas.kappa is None:
        raise ValueError("residual_rho_sphere requires a space-form atlas")
    jet = covariant_jet(u, atlas, 3)
    g, g_inv = induced_metric(jet, atlas)
    s_inv = atlas.sigma_inv
    rho = 0.5 * np.log(np.linalg.det(g) / atlas.det_sigma)
    _, rho_hess = scalar_hessian(rho, atlas)
    hess_rate = covariant_hessian(transfer_scalar(dudt, atlas), atlas)
    g_rate = hess_rate @ s_inv @ jet.hess
    g_rate = g_rate + g_rate.swapaxes(-1, -2)
    lhs = 0.5 * np.einsum("...ij,...ij->...", g_inv, g_rate) - np.einsum("...ij,...ij->...", g_inv, rho_hess)

    lam, frame = generalized_eigh(jet.hess, atlas.sigma)
    t = np.einsum("...abc,...ap,...bq,...ck->...pqk", jet.third, frame, frame, frame, optimize=True)
    w = 1.0 + lam**2
    lp, lq, lk = lam[..., :, None, None], lam[..., None, :, None], lam[..., None, None, :]
    coef = (-1.0 + lp * lq - lk * (lp + lq)) / (w[..., :, None, None] * w[..., None, :, None] * w[..., None, None, :])
    rhs = np.sum(coef * t**2, axis=(-1, -2, -3))
    n = atlas.dim
    for p in range(n):
        for k in range(p + 1, n):
            rhs -= 2.0 * atlas.kappa * (lam[..., p] - lam[..., k]) ** 2 / (w[..., p] * w[..., k])

    own = atlas.owned
    if n > 1:
        gap = np.diff(lam, axis=-1).min(axis=-1)
        degenerate = gap < DEGENERACY_GAP * (1.0 + np.abs(lam).max(axis=-1))
    else:
        degenerate = np.zeros(own.shape, dtype=bool)
    use = own & ~degenerate
    skipped = int((own & degenerate).sum())
    if skipped > 0.2 * own.sum():
        warnings.warn(f"eigenframe residual skipped {skipped} of {int(own.sum())} nodes (degenerate Hessian)")
    norm = float(np.abs(lhs - rhs)[use].max()) if use.any() else 0.0
    return Residual(norm, int(use.sum()), skipped)
