"""Explicit integration of ``du/dt = theta(Hess u, sigma)`` with maximum-principle monitors."""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import stats

from .calculus import covariant_hessian, covariant_jet, d1
from .geometry import (centered_rate, chi_from_hessian, fast_angle, monitors,
                       residual_rho_sphere, residual_vartheta)
from .initial import InitialCondition, initial_field
from .manifold import MetricAtlas, build_sphere, build_torus, transfer_scalar

log = logging.getLogger(__name__)

# real-axis stability limit of classical RK4 and the spectral radius of the
# 5-point second-derivative stencil (times h^2)
RK4_REAL_LIMIT = 2.785
D2_SPECTRAL_RADIUS = 16.0 / 3.0
MAX_HALVINGS = 10
SLOPE_WINDOW = 10
EARLY_WINDOW = 10

SERIES_COLUMNS = (
    "t", "dt", "sup_u", "max_chi", "max_vartheta", "max_Theta2", "max_Upsilon2",
    "max_chi_p_Theta2", "min_theta", "max_theta", "vartheta_slope",
)


class PreconditionError(ValueError):
    """Configuration violates an invariant; nothing was computed."""


class StepFailure(RuntimeError):
    pass


class SolverAbort(RuntimeError):
    """Step retries exhausted or a monitor went non-finite; carries the partial series."""

    def __init__(self, message: str, series: MonitorSeries, u: np.ndarray):
        super().__init__(message)
        self.series = series
        self.u = u


@dataclass
class FlowConfig:
    base: str = "sphere"
    n: int = 2
    resolution: int = 64
    kappa: float = 1.0
    initial: InitialCondition = field(default_factory=InitialCondition)
    t_end: float = 1.0
    cfl: float = 0.2
    dt_max: float = math.inf
    epsilon: float = 0.1
    p_exponent: float = 1.0
    monitor_every: int = 50
    residual_check_every: int = 0
    seed: int = 0
    convergence_threshold: float = 1e-10
    max_principle_tol: float = 1e-8
    stability: bool = False  # check the admissibility gate max chi <= 1 + epsilon

    @property
    def dim(self) -> int:
        return 2 if self.base == "sphere" else self.n

    def validate(self) -> None:
        if self.base not in ("torus", "sphere"):
            raise PreconditionError(f"base.kind must be 'torus' or 'sphere', got {self.base!r}")
        if not 0 < self.cfl <= 0.5:
            raise PreconditionError(f"flow.cfl must lie in (0, 0.5], got {self.cfl}")
        if self.cfl * D2_SPECTRAL_RADIUS * self.dim > RK4_REAL_LIMIT:
            limit = RK4_REAL_LIMIT / (D2_SPECTRAL_RADIUS * self.dim)
            raise PreconditionError(
                f"flow.cfl = {self.cfl} exceeds the RK4 stability limit {limit:.4f} in dimension {self.dim}"
            )
        if not self.epsilon > 0:
            raise PreconditionError(f"flow.epsilon must be positive, got {self.epsilon}")
        if not self.t_end > 0:
            raise PreconditionError(f"flow.t_end must be positive, got {self.t_end}")
        if not self.dt_max > 0:
            raise PreconditionError(f"flow.dt_max must be positive, got {self.dt_max}")
        if self.monitor_every < 1:
            raise PreconditionError(f"flow.monitor_every must be >= 1, got {self.monitor_every}")
        if self.residual_check_every < 0:
            raise PreconditionError("flow.residual_check_every must be >= 0")
        if self.p_exponent < 0:
            raise PreconditionError(f"flow.p_exponent must be non-negative, got {self.p_exponent}")
        if self.initial.kind not in ("zero", "mode", "bump"):
            raise PreconditionError(f"initial.kind must be zero, mode or bump, got {self.initial.kind!r}")
        if self.initial.target_max_chi is not None and not self.initial.target_max_chi > 1:
            raise PreconditionError("initial.target_max_chi must exceed 1")

    def build_atlas(self) -> MetricAtlas:
        try:
            if self.base == "torus":
                return build_torus(self.n, self.resolution)
            return build_sphere(self.resolution, self.kappa)
        except ValueError as exc:
            raise PreconditionError(str(exc)) from exc

    def time_step(self, atlas: MetricAtlas) -> float:
        return min(self.cfl * atlas.physical_h**2, self.dt_max)


@dataclass
class MonitorSeries:
    rows: list[dict[str, float]] = field(default_factory=list)
    step_t: list[float] = field(default_factory=list)
    step_max_chi: list[float] = field(default_factory=list)
    step_max_vartheta: list[float] = field(default_factory=list)
    chi_violations: list[tuple[int, float, float]] = field(default_factory=list)
    vartheta_violations: list[tuple[int, float, float]] = field(default_factory=list)
    residuals: list[dict[str, float]] = field(default_factory=list)
    converged: bool = False
    converged_t: float | None = None
    n_steps: int = 0
    dim: int = 2
    kappa: float = 0.0

    def column(self, name: str) -> np.ndarray:
        return np.array([row[name] for row in self.rows])

    @property
    def initial_max_chi(self) -> float:
        return self.rows[0]["max_chi"] if self.rows else math.nan


def rhs(u: np.ndarray, atlas: MetricAtlas) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Angle field of ``u`` (zero on fringe nodes) plus the gradient and Hessian used."""
    u = transfer_scalar(u, atlas)
    grad = np.stack([d1(u, a, atlas.h) for a in range(atlas.dim)], axis=-1)
    hess = covariant_hessian(u, atlas, grad, compact=True)
    theta = fast_angle(hess, atlas.sigma_inv, atlas.det_sigma)
    if atlas.plan is not None:
        theta[~atlas.active] = 0.0
    return theta, grad, hess


def step(u: np.ndarray, atlas: MetricAtlas, dt: float, k1: np.ndarray | None = None) -> np.ndarray:
    """One classical RK4 step; fringe nodes are refreshed before every stage."""
    if k1 is None:
        k1 = rhs(u, atlas)[0]
    k2 = rhs(u + 0.5 * dt * k1, atlas)[0]
    k3 = rhs(u + 0.5 * dt * k2, atlas)[0]
    k4 = rhs(u + dt * k3, atlas)[0]
    out = transfer_scalar(u + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4), atlas)
    if not np.all(np.isfinite(out[atlas.active])):
        raise StepFailure("non-finite values after RK4 step")
    return out


def sup_deviation(u: np.ndarray, atlas: MetricAtlas) -> float:
    """``sup |u - mean(u)|`` over the base: distance of the potential from the constants."""
    w = atlas.area_weights
    mean = float(np.sum(w * u) / np.sum(w))
    return float(np.abs(u - mean)[atlas.owned].max())


def _step_stats(grad: np.ndarray, hess: np.ndarray, atlas: MetricAtlas) -> tuple[float, float]:
    own = atlas.owned
    sinv = atlas.sigma_inv[own]
    chi = chi_from_hessian(hess[own], sinv)
    g = grad[own]
    vartheta = np.einsum("pij,pi,pj->p", sinv, g, g)
    return float(chi.max()), float(vartheta.max())


def _slope(t: np.ndarray, y: np.ndarray) -> float:
    keep = y > 0
    if keep.sum() < 2:
        return 0.0
    return float(np.polyfit(t[keep], np.log(y[keep]), 1)[0])


def _record(series: MonitorSeries, u: np.ndarray, atlas: MetricAtlas, config: FlowConfig,
            t: float, dt: float, step_chi: float, step_vartheta: float) -> dict[str, float]:
    state = monitors(covariant_jet(u, atlas, 4), atlas)
    ext = state.extrema(atlas, config.p_exponent)
    row = {
        "t": t,
        "dt": dt,
        "sup_u": sup_deviation(u, atlas),
        "max_chi": step_chi,
        "max_vartheta": step_vartheta,
        "max_Theta2": ext["max_Theta2"],
        "max_Upsilon2": ext["max_Upsilon2"],
        "max_chi_p_Theta2": ext["max_chi_p_Theta2"],
        "min_theta": ext["min_theta"],
        "max_theta": ext["max_theta"],
    }
    ts = np.array([r["t"] for r in series.rows[-(SLOPE_WINDOW - 1):]] + [t])
    vs = np.array([r["max_vartheta"] for r in series.rows[-(SLOPE_WINDOW - 1):]] + [step_vartheta])
    row["vartheta_slope"] = _slope(ts, vs)
    if not all(math.isfinite(v) for v in row.values()):
        raise StepFailure(f"non-finite monitor at t = {t}")
    series.rows.append(row)
    return row


def run(
    config: FlowConfig,
    on_row: Callable[[dict[str, float]], None] | None = None,
    on_snapshot: Callable[[float, np.ndarray], None] | None = None,
    snapshot_every: int = 0,
    u0: np.ndarray | None = None,
) -> tuple[MonitorSeries, np.ndarray]:
    """Integrate to ``t_end`` or until the graph reaches the zero section."""
    config.validate()
    atlas = config.build_atlas()
    u = initial_field(atlas, config.initial, config.seed) if u0 is None else transfer_scalar(u0, atlas)
    series = MonitorSeries(dim=atlas.dim, kappa=float(atlas.kappa or 0.0))
    dt0 = config.time_step(atlas)
    t, n = 0.0, 0
    k1, grad, hess = rhs(u, atlas)
    chi_max, vt_max = _step_stats(grad, hess, atlas)
    if config.stability and chi_max > 1.0 + config.epsilon:
        warnings.warn(f"initial max chi = {chi_max:.6g} exceeds 1 + epsilon = {1 + config.epsilon}")
    prev: tuple[np.ndarray, float] | None = None
    last_row_step = -1

    def emit(dt):
        nonlocal last_row_step
        row = _record(series, u, atlas, config, t, dt, chi_max, vt_max)
        last_row_step = n
        if on_row is not None:
            on_row(row)

    if snapshot_every and on_snapshot is not None:
        on_snapshot(t, u)
    try:
        while True:
            series.step_t.append(t)
            series.step_max_chi.append(chi_max)
            series.step_max_vartheta.append(vt_max)
            if sup_deviation(u, atlas) < config.convergence_threshold:
                series.converged, series.converged_t = True, t
                emit(dt0)
                break
            if n % config.monitor_every == 0:
                emit(dt0)
            if t >= config.t_end * (1 - 1e-12):
                if last_row_step != n:
                    emit(dt0)
                break
            dt = min(dt0, config.t_end - t)
            for attempt in range(MAX_HALVINGS + 1):
                try:
                    u_next = step(u, atlas, dt, k1 if attempt == 0 else None)
                    k1_next, grad, hess = rhs(u_next, atlas)
                    if not np.all(np.isfinite(k1_next[atlas.active])):
                        raise StepFailure("non-finite angle field")
                    break
                except (StepFailure, np.linalg.LinAlgError) as exc:
                    if attempt == MAX_HALVINGS:
                        raise SolverAbort(f"step failed at t = {t}: {exc}", series, u) from exc
                    dt *= 0.5
                    log.warning("step rejected at t=%g (%s); retrying with dt=%g", t, exc, dt)
            if (config.residual_check_every and prev is not None and prev[1] == dt
                    and n % config.residual_check_every == 0):
                rate = centered_rate(prev[0], u_next, dt)
                entry = {"t": t, "vartheta": residual_vartheta(u, rate, atlas).norm}
                if atlas.curvature_parallel:
                    entry["rho"] = residual_rho_sphere(u, rate, atlas).norm
                series.residuals.append(entry)
            prev = (u, dt)
            u, k1, t, n = u_next, k1_next, t + dt, n + 1
            new_chi, new_vt = _step_stats(grad, hess, atlas)
            if new_chi > chi_max + config.max_principle_tol:
                series.chi_violations.append((n, t, new_chi - chi_max))
            if new_vt > vt_max + config.max_principle_tol:
                series.vartheta_violations.append((n, t, new_vt - vt_max))
            chi_max, vt_max = new_chi, new_vt
            series.n_steps = n
            if snapshot_every and on_snapshot is not None and n % snapshot_every == 0:
                on_snapshot(t, u)
    except StepFailure as exc:
        raise SolverAbort(str(exc), series, u) from exc
    return series, u


def stability_certificate(series: MonitorSeries, config: FlowConfig) -> dict:
    """Check a completed run against the stability statements for admissible data.

    (a) ``3 eps <= 1``; (b) ``max chi <= 1 + eps`` at every step; (c) ``max chi^p Theta^2``
    stays within 5% of its early-window maximum; (d) the fitted exponential rate of
    ``max vartheta`` against ``-2 kappa (n-1) / (1 + eps^2)``.
    """
    eps = config.epsilon
    n, kappa = series.dim, series.kappa
    report: dict = {"epsilon": eps, "p_exponent": config.p_exponent, "n_samples": len(series.rows),
                    "converged": series.converged, "converged_t": series.converged_t}
    chi = np.array(series.step_max_chi)
    report["a_three_eps_le_one"] = 3 * eps <= 1
    report["initial_max_chi"] = float(chi[0]) if chi.size else math.nan
    report["b_chi_bounded"] = bool(chi.size and np.all(chi <= 1 + eps))
    report["max_chi"] = float(chi.max()) if chi.size else math.nan
    report["chi_violations"] = len(series.chi_violations)
    report["vartheta_violations"] = len(series.vartheta_violations)

    cpt = series.column("max_chi_p_Theta2")
    early = float(cpt[:EARLY_WINDOW].max()) if cpt.size else math.nan
    report["early_max_chi_p_Theta2"] = early
    report["max_chi_p_Theta2"] = float(cpt.max()) if cpt.size else math.nan
    report["c_chi_p_Theta2_bounded"] = bool(cpt.size and cpt.max() <= 1.05 * early)

    bound = 2.0 * kappa * (n - 1) / (1.0 + eps**2)
    report["rate_bound"] = -bound
    t = series.column("t")
    vt = series.column("max_vartheta")
    keep = vt > 0
    rate_ok: bool | None
    if keep.sum() >= 3:
        fit = stats.linregress(t[keep], np.log(vt[keep]))
        half = stats.t.ppf(0.975, keep.sum() - 2) * fit.stderr
        report["fitted_rate"] = float(fit.slope)
        report["fitted_rate_band"] = [float(fit.slope - half), float(fit.slope + half)]
        rate_ok = bool(fit.slope <= -0.95 * bound) if bound > 0 else not series.vartheta_violations
    else:
        report["fitted_rate"] = None
        report["fitted_rate_band"] = None
        report["rate_undefined"] = True
        rate_ok = None
    report["d_decay_rate"] = rate_ok

    trivial = series.converged and not np.any(vt > 0)
    if not report["a_three_eps_le_one"] or report["initial_max_chi"] > 1 + eps:
        status = "PRECONDITION_FAILED"
    elif trivial:
        status = "PASS"  # zero section: nothing to decay
    elif len(series.rows) < 10:
        status = "INCONCLUSIVE"
    elif report["b_chi_bounded"] and report["c_chi_p_Theta2_bounded"] and rate_ok is not False:
        status = "PASS"
    else:
        status = "FAIL"
    report["status"] = status
    return report
