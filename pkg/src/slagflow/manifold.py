"""Discretized Riemannian bases: the flat torus and the two-chart round sphere.

Every field lives on an array of shape ``(nchart, N, ..., N, *components)``.
All charts of an atlas share one resolution, so the chart index is simply the
leading array axis.

Sphere charts are stereographic projections from the north (chart 0) and
south (chart 1) poles.  Each chart evolves only its *active* disk
``|x| <= active_radius``; every other node is a fringe node refreshed from the
opposite chart through the inversion ``x -> x / |x|^2``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

__all__ = [
    "ChartGrid",
    "ConfigurationError",
    "MetricAtlas",
    "build_sphere",
    "build_torus",
    "curvature_from_christoffel",
    "sectional_curvatures",
    "sphere_embedding",
    "transfer_scalar",
    "transfer_tensor",
]

SPHERE_EXTENT = 1.6
SPHERE_ACTIVE_RADIUS = 1.2
INTERP_POINTS = 6  # degree-5 Lagrange interpolation


class ConfigurationError(ValueError):
    """The requested atlas cannot be built or its charts do not cover the base."""


@dataclass(frozen=True)
class ChartGrid:
    chart_id: int
    extent: tuple[tuple[float, float], ...]
    resolution: int
    halo_width: int
    active_radius: float | None = None  # None: the whole (periodic) box is active
    periodic: bool = False

    @property
    def dim(self) -> int:
        return len(self.extent)

    @property
    def h(self) -> float:
        lo, hi = self.extent[0]
        return (hi - lo) / (self.resolution - 1)

    @property
    def axis(self) -> np.ndarray:
        lo, hi = self.extent[0]
        return np.linspace(lo, hi, self.resolution)

    def mesh(self) -> np.ndarray:
        """Node coordinates, shape ``(N, ..., N, dim)``."""
        axes = [np.linspace(lo, hi, self.resolution) for lo, hi in self.extent]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


@dataclass(frozen=True)
class _TransferPlan:
    """Precomputed fringe refill: one sparse interpolation block per receiver chart."""

    receivers: tuple[np.ndarray, ...]  # flat fringe indices, per chart
    donors: tuple[int, ...]
    weights: tuple[sp.csr_matrix, ...]  # (n_fringe, N**dim)
    jacobians: tuple[np.ndarray, ...]  # d(donor coord)/d(receiver coord), (n_fringe, n, n)


@dataclass(frozen=True, eq=False)
class MetricAtlas:
    kind: str
    dim: int
    charts: tuple[ChartGrid, ...]
    coords: np.ndarray  # (nchart, *grid, n)
    sigma: np.ndarray  # (nchart, *grid, n, n)
    sigma_inv: np.ndarray
    christoffel: np.ndarray  # [..., k, i, j] = Lambda^k_ij
    active: np.ndarray  # (nchart, *grid) bool
    owned: np.ndarray  # every point of the base counted once, away from the fringe
    kappa: float | None = None
    curvature_parallel: bool = True
    plan: _TransferPlan | None = None

    @property
    def nchart(self) -> int:
        return len(self.charts)

    @property
    def resolution(self) -> int:
        return self.charts[0].resolution

    @property
    def h(self) -> float:
        return self.charts[0].h

    @property
    def grid_shape(self) -> tuple[int, ...]:
        return (self.nchart,) + (self.resolution,) * self.dim

    @cached_property
    def det_sigma(self) -> np.ndarray:
        return np.linalg.det(self.sigma)

    @cached_property
    def area_weights(self) -> np.ndarray:
        """Riemannian volume weights on owned nodes (zero elsewhere)."""
        return np.where(self.owned, np.sqrt(self.det_sigma), 0.0) * self.h**self.dim

    @cached_property
    def physical_h(self) -> float:
        """Smallest geodesic node spacing over active nodes."""
        lam_min = np.linalg.eigvalsh(self.sigma[self.active])[:, 0]
        return float(self.h * np.sqrt(lam_min.min()))

    @cached_property
    def curvature(self) -> np.ndarray:
        """Dense ``C^i_jkl`` with ``[..., i, j, k, l]`` layout."""
        n = self.dim
        shape = self.sigma.shape[:-2] + (n,) * 4
        if not self.kappa:
            return np.zeros(shape)
        eye = np.eye(n)
        # space form: C^i_jkl = kappa (delta^i_k sigma_jl - delta^i_l sigma_jk)
        return self.kappa * (
            np.einsum("ik,...jl->...ijkl", eye, self.sigma)
            - np.einsum("il,...jk->...ijkl", eye, self.sigma)
        )

    def zeros(self, *components: int) -> np.ndarray:
        return np.zeros(self.grid_shape + tuple(components))


def build_torus(n: int, resolution: int) -> MetricAtlas:
    if n not in (1, 2, 3):
        raise ConfigurationError(f"torus dimension must be 1, 2 or 3, got {n}")
    if resolution < 16:
        raise ConfigurationError(f"torus resolution must be >= 16, got {resolution}")
    h = 2 * np.pi / resolution
    chart = ChartGrid(0, ((0.0, 2 * np.pi - h),) * n, resolution, 2, None, True)
    coords = chart.mesh()[None]
    grid = coords.shape[:-1]
    sigma = np.broadcast_to(np.eye(n), grid + (n, n)).copy()
    active = np.ones(grid, dtype=bool)
    return MetricAtlas(
        kind="torus",
        dim=n,
        charts=(chart,),
        coords=coords,
        sigma=sigma,
        sigma_inv=sigma.copy(),
        christoffel=np.zeros(grid + (n, n, n)),
        active=active,
        owned=active.copy(),
        kappa=0.0,
        curvature_parallel=True,
    )


def build_sphere(resolution: int, kappa: float = 1.0) -> MetricAtlas:
    """Round sphere of radius ``1/sqrt(kappa)`` covered by two stereographic charts."""
    if not kappa > 0:
        raise ConfigurationError(f"sphere curvature must be positive, got {kappa}")
    if resolution < 32:
        raise ConfigurationError(f"sphere resolution must be >= 32, got {resolution}")
    ext = ((-SPHERE_EXTENT, SPHERE_EXTENT),) * 2
    charts = tuple(
        ChartGrid(c, ext, resolution, INTERP_POINTS // 2, SPHERE_ACTIVE_RADIUS) for c in (0, 1)
    )
    x = np.stack([charts[0].mesh()] * 2)
    r2 = np.sum(x**2, axis=-1)
    s = 1.0 + r2
    eye = np.eye(2)
    conf = (4.0 / kappa) / s**2
    sigma = conf[..., None, None] * eye
    sigma_inv = (1.0 / conf)[..., None, None] * eye
    # conformal metric e^{2 phi} delta: Lambda^k_ij = d^k_i phi_j + d^k_j phi_i - d_ij phi_k
    dphi = -2.0 * x / s[..., None]
    chris = (
        np.einsum("ki,...j->...kij", eye, dphi)
        + np.einsum("kj,...i->...kij", eye, dphi)
        - np.einsum("ij,...k->...kij", eye, dphi)
    )
    r = np.sqrt(r2)
    active = r <= SPHERE_ACTIVE_RADIUS
    # each point is owned by the chart it lies deepest inside: split at the equator,
    # which itself belongs to the lower chart id
    owned = np.stack([r[0] <= 1.0 + 1e-12, r[1] < 1.0 - 1e-12])
    plan = _sphere_plan(charts[0], x[0], active[0])
    return MetricAtlas(
        kind="sphere",
        dim=2,
        charts=charts,
        coords=x,
        sigma=sigma,
        sigma_inv=sigma_inv,
        christoffel=chris,
        active=active,
        owned=owned,
        kappa=float(kappa),
        curvature_parallel=True,
        plan=plan,
    )


def _lagrange_weights(t: np.ndarray, npts: int) -> np.ndarray:
    """Weights of the ``npts`` unit-spaced nodes 0..npts-1 at offsets ``t``."""
    w = np.ones(t.shape + (npts,))
    for j in range(npts):
        for m in range(npts):
            if m != j:
                w[..., j] *= (t - m) / (j - m)
    return w


def _window_starts(y: float, lo: float, h: float, n: int, npts: int) -> list[int]:
    """Candidate stencil starts, centred first, then shifted toward the chart origin."""
    centred = int(np.floor((y - lo) / h)) - (npts // 2 - 1)
    centred = min(max(centred, 0), n - npts)
    toward = -1 if y > 0 else 1
    starts = [centred]
    for shift in (1, 2):
        s = centred + toward * shift
        if 0 <= s <= n - npts:
            starts.append(s)
    return starts


def _sphere_plan(chart: ChartGrid, x: np.ndarray, active: np.ndarray) -> _TransferPlan:
    n_nodes = chart.resolution
    lo = chart.extent[0][0]
    h = chart.h
    npts = INTERP_POINTS
    fringe = np.flatnonzero(~active.ravel())
    xf = x.reshape(-1, 2)[fringe]
    r2 = np.sum(xf**2, axis=-1)
    y = xf / r2[:, None]
    rows, cols, vals = [], [], []
    for row, (ya, yb) in enumerate(y):
        for sa in _window_starts(ya, lo, h, n_nodes, npts):
            sb = next(
                (s for s in _window_starts(yb, lo, h, n_nodes, npts)
                 if active[sa:sa + npts, s:s + npts].all()),
                None,
            )
            if sb is not None:
                break
        else:
            raise ConfigurationError(
                f"fringe node {xf[row]} has no interpolation stencil inside the donor's "
                "active region; the charts do not cover the sphere at this resolution"
            )
        wa = _lagrange_weights(np.array((ya - (lo + sa * h)) / h), npts)
        wb = _lagrange_weights(np.array((yb - (lo + sb * h)) / h), npts)
        ia, ib = np.meshgrid(np.arange(sa, sa + npts), np.arange(sb, sb + npts), indexing="ij")
        rows.append(np.full(npts * npts, row))
        cols.append((ia * n_nodes + ib).ravel())
        vals.append(np.outer(wa, wb).ravel())
    weights = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(len(fringe), n_nodes * n_nodes),
    )
    # J[a, i] = d y_a / d x_i for y = x / |x|^2
    jac = np.eye(2) / r2[:, None, None] - 2.0 * np.einsum("pa,pi->pai", xf, xf) / r2[:, None, None] ** 2
    return _TransferPlan((fringe, fringe), (1, 0), (weights, weights), (jac, jac))


def transfer_tensor(field: np.ndarray, atlas: MetricAtlas, rank: int = 0) -> np.ndarray:
    """Return a copy of ``field`` with every fringe node refilled from the donor chart.

    ``field`` carries ``rank`` trailing covariant indices; fringe values are the
    interpolated donor components pulled back through the transition Jacobian.
    A torus atlas has no fringe and the field is returned unchanged (copied).
    """
    out = np.array(field, dtype=float, copy=True)
    plan = atlas.plan
    if plan is None:
        return out
    nchart = atlas.nchart
    ncomp = atlas.dim**rank
    flat = out.reshape(nchart, -1, ncomp)
    src = flat.copy()
    for c in range(nchart):
        vals = plan.weights[c] @ src[plan.donors[c]]
        if rank:
            vals = vals.reshape((-1,) + (atlas.dim,) * rank)
            jac = plan.jacobians[c]
            for axis in range(rank):
                # contract donor index at ``axis`` with J[a, i]
                vals = np.moveaxis(np.einsum("p...a,pai->p...i", np.moveaxis(vals, axis + 1, -1), jac), -1, axis + 1)
            vals = vals.reshape(-1, ncomp)
        flat[c, plan.receivers[c]] = vals
    return out


def transfer_scalar(field: np.ndarray, atlas: MetricAtlas) -> np.ndarray:
    """Fill fringe nodes of a scalar field (no Jacobian factor)."""
    return transfer_tensor(field, atlas, rank=0)


def sphere_embedding(atlas: MetricAtlas) -> np.ndarray:
    """Unit-sphere Cartesian coordinates ``(X, Y, Z)`` of every node."""
    x = atlas.coords
    s = 1.0 + np.sum(x**2, axis=-1)
    out = np.empty(x.shape[:-1] + (3,))
    out[..., :2] = 2.0 * x / s[..., None]
    z = 1.0 - 2.0 / s
    out[0, ..., 2] = z[0]
    out[1, ..., 2] = -z[1]
    return out


def sectional_curvatures(atlas: MetricAtlas) -> np.ndarray:
    """``C_ipip`` for ``i != p`` in a sigma-orthonormal frame, shape ``(..., pairs)``."""
    n = atlas.dim
    low = np.einsum("...im,...mjkl->...ijkl", atlas.sigma, atlas.curvature)
    frame = np.linalg.inv(np.linalg.cholesky(atlas.sigma)).swapaxes(-1, -2)  # E^T sigma E = I
    rot = np.einsum("...abcd,...ai,...bj,...ck,...dl->...ijkl", low, frame, frame, frame, frame, optimize=True)
    pairs = [(i, p) for i in range(n) for p in range(n) if i != p]
    if not pairs:
        return np.zeros(rot.shape[:-4] + (0,))
    return np.stack([rot[..., i, p, i, p] for i, p in pairs], axis=-1)


def curvature_from_christoffel(atlas: MetricAtlas) -> np.ndarray:
    """``C^i_jkl`` assembled from finite-difference derivatives of the Christoffel symbols.

    Uses ``C^i_jkl = d_k L^i_jl - d_l L^i_jk + L^i_pk L^p_jl - L^i_pl L^p_jk``.
    Values are only meaningful two nodes away from non-periodic chart edges.
    """
    from .calculus import d1

    lam = atlas.christoffel
    h = atlas.h
    dlam = np.stack([d1(lam, a, h) for a in range(atlas.dim)], axis=-1)  # [..., i, j, l, k] = d_k L^i_jl
    out = dlam.swapaxes(-1, -2) - dlam
    out = out + np.einsum("...ipk,...pjl->...ijkl", lam, lam) - np.einsum("...ipl,...pjk->...ijkl", lam, lam)
    return out
