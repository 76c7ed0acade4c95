"""Brute-force reference implementations used to cross-check the main code paths.

Nothing here shares code with the fast paths it validates: the angle is
computed from a complex LU factorisation instead of eigenvalues, harmonic
jets come from the ambient polynomial by the chain rule instead of finite
differences, and mode decay is the closed-form heat-kernel prediction.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Any, Iterable

import numpy as np
from scipy.linalg import lu_factor

from .initial import ambient_harmonic, sphere_chart_map_derivatives
from .manifold import MetricAtlas, sphere_embedding

UNITARITY_TOL = 1e-8
MAX_LINEAR_AMPLITUDE = 1e-2
PROVENANCE_TAGS = ("PAPER", "TRIVIAL", "DERIVED")


class UnitarityError(ValueError):
    """The normalised complex determinant is not on the unit circle."""


def _complex_det(a: np.ndarray) -> complex:
    lu, piv = lu_factor(a)
    sign = (-1) ** int(np.sum(piv != np.arange(len(piv))))
    return complex(sign * np.prod(np.diag(lu)))


def angle_bruteforce(sigma, hess) -> float:
    """Angle from ``det(sigma + iH)`` normalised by ``sqrt(det sigma det G)``.

    ``G = sigma + H sigma^{-1} H`` is formed explicitly; the returned value is the
    principal argument, so it agrees with the eigen-sum only when that sum lies
    in ``(-pi, pi)``.  For real input the modulus is one up to roundoff, so a
    unitarity failure means the factorisation or ``G`` has broken down.
    """
    sigma = np.atleast_2d(np.asarray(sigma, float))
    hess = np.atleast_2d(np.asarray(hess, float))
    if sigma.shape != hess.shape or sigma.shape[0] != sigma.shape[1]:
        raise ValueError(f"need matching square matrices, got {sigma.shape} and {hess.shape}")
    if not np.all(np.linalg.eigvalsh(sigma) > 0):
        raise ValueError("sigma must be positive definite")
    num = _complex_det(sigma + 1j * hess)
    g = sigma + hess @ np.linalg.solve(sigma, hess)
    norm2 = np.linalg.det(sigma) * np.linalg.det(g)
    if not (np.isfinite(norm2) and norm2 > 0):
        raise UnitarityError(f"det sigma * det G = {norm2:.6g} is not positive")
    z = num / math.sqrt(norm2)
    if abs(abs(z) - 1.0) > UNITARITY_TOL:
        raise UnitarityError(f"|normalised determinant| = {abs(z):.12g}, expected 1")
    return math.atan2(z.imag, z.real)


def laplace_eigenvalue(kind: str, mode, kappa: float = 1.0) -> float:
    """Eigenvalue of ``-Laplacian`` for a Fourier mode on the torus or a degree-l harmonic."""
    if kind == "torus":
        k = np.asarray(mode, float)
        if k.ndim != 1 or np.any(k != np.round(k)):
            raise ValueError(f"torus mode must be an integer wave vector, got {mode!r}")
        return float(k @ k)
    if kind == "sphere":
        try:
            ell, m = (int(v) for v in mode)
        except (TypeError, ValueError):
            raise ValueError(f"sphere mode must be (ell, m), got {mode!r}") from None
        if ell < 0 or abs(m) > ell:
            raise ValueError(f"(ell, m) = {mode!r} is not a spherical harmonic index")
        return float(ell * (ell + 1) * kappa)
    raise ValueError(f"unknown base kind {kind!r}")


def linearized_mode_decay(kind: str, mode, amplitude: float, t, kappa: float = 1.0):
    """Predicted ``sup |u|`` of a small eigenmode under the linearised flow ``u_t = Lap u``.

    Returns ``(prediction, error_budget)``; the budget is the size of the
    neglected cubic term of ``arctan``, ``amplitude**3`` up to a mode constant.
    """
    if not 0 < amplitude <= MAX_LINEAR_AMPLITUDE:
        raise ValueError(f"linear prediction needs 0 < amplitude <= {MAX_LINEAR_AMPLITUDE}")
    mu = laplace_eigenvalue(kind, mode, kappa)
    return amplitude * np.exp(-mu * np.asarray(t, float)), amplitude**3


@dataclass(frozen=True)
class SpherePoints:
    """Arbitrary chart points of the kappa-sphere, laid out like an atlas: ``coords[chart, ..., 2]``."""
    coords: np.ndarray
    kappa: float = 1.0
    kind: str = "sphere"

    @property
    def sigma(self) -> np.ndarray:
        s = 1.0 + np.sum(self.coords**2, axis=-1)
        return ((4.0 / self.kappa) / s**2)[..., None, None] * np.eye(2)

    @property
    def christoffel(self) -> np.ndarray:
        s = 1.0 + np.sum(self.coords**2, axis=-1)
        phi = -2.0 * self.coords / s[..., None]
        eye = np.eye(2)
        return (np.einsum("ki,...j->...kij", eye, phi) + np.einsum("kj,...i->...kij", eye, phi)
                - np.einsum("ij,...k->...kij", eye, phi))

    @classmethod
    def at(cls, points, kappa: float = 1.0) -> SpherePoints:
        """The same chart coordinates ``points[..., 2]`` taken in both charts."""
        pts = np.asarray(points, float)
        return cls(np.stack([pts, pts]), kappa)


@dataclass
class HarmonicJet:
    value: np.ndarray
    grad: np.ndarray
    hess: np.ndarray


def sphere_harmonic_restriction(ell: int, atlas: MetricAtlas | SpherePoints, m: int = 0) -> HarmonicJet:
    """Exact chart values, gradient and covariant Hessian of a real harmonic.

    The harmonic is a polynomial in the unit-sphere embedding; its chart
    derivatives follow from the chain rule through the analytic stereographic
    map, and the Christoffel correction uses the analytic symbols of the atlas.
    """
    if atlas.kind != "sphere":
        raise ValueError("harmonic restriction needs sphere chart points")
    if not 0 <= ell <= 2:
        raise ValueError(f"harmonic restriction supports degree 0..2, got {ell}")
    val, agrad, ahess = ambient_harmonic(ell, m, sphere_embedding(atlas))
    dphi, ddphi = sphere_chart_map_derivatives(atlas)
    grad = np.einsum("...a,...aj->...j", agrad, dphi)
    hess = (np.einsum("...ab,...aj,...bk->...jk", ahess, dphi, dphi)
            + np.einsum("...a,...ajk->...jk", agrad, ddphi))
    hess -= np.einsum("...mjk,...m->...jk", atlas.christoffel, grad)
    return HarmonicJet(val, grad, hess)


# -- case files ------------------------------------------------------------------

def dumps17(obj) -> str:
    """JSON text with every float written to 17 significant digits (exact round trip)."""
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {dumps17(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(dumps17(v) for v in obj) + "]"
    if isinstance(obj, (bool, np.bool_)) or obj is None or isinstance(obj, str):
        return json.dumps(obj if not isinstance(obj, np.bool_) else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    x = float(obj)
    return format(x, ".17g") if math.isfinite(x) else "null"


@dataclass
class OracleCase:
    name: str
    kind: str  # angle | decay | harmonic
    inputs: dict[str, Any]
    expected: Any
    tolerance: float
    provenance: str
    note: str = ""

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError(f"{self.name}: tolerance must be positive")
        if self.provenance not in PROVENANCE_TAGS:
            raise ValueError(f"{self.name}: provenance must be one of {PROVENANCE_TAGS}")
        if not np.all(np.isfinite(np.asarray(self.expected, float))):
            raise ValueError(f"{self.name}: expected value must be finite")

    def to_json(self) -> str:
        rec = {
            "name": self.name,
            "kind": self.kind,
            "inputs": self.inputs,
            "expected": self.expected,
            "tolerance": self.tolerance,
            "provenance": self.provenance,
        }
        if self.note:
            rec["note"] = self.note
        return dumps17(rec)

    @classmethod
    def from_json(cls, line: str) -> OracleCase:
        rec = json.loads(line)
        return cls(rec["name"], rec["kind"], rec["inputs"], rec["expected"], rec["tolerance"],
                   rec["provenance"], rec.get("note", ""))


def write_cases(path, cases: Iterable[OracleCase]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for case in cases:
            fh.write(case.to_json() + "\n")


def read_cases(path) -> list[OracleCase]:
    with open(path, encoding="utf-8") as fh:
        return [OracleCase.from_json(line) for line in fh if line.strip()]


def builtin_cases() -> list[OracleCase]:
    e = math.exp
    return [
        OracleCase("angle_identity_zero", "angle", {"sigma": np.eye(2), "hess": np.zeros((2, 2))},
                   0.0, 1e-14, "TRIVIAL"),
        OracleCase("angle_identity_unit_hessian", "angle", {"sigma": np.eye(2), "hess": np.eye(2)},
                   math.pi / 2, 1e-14, "DERIVED", "arg((1+i)^2/2)"),
        OracleCase("angle_scaled_metric", "angle",
                   {"sigma": np.diag([2.0, 1.0]), "hess": np.diag([2.0, 1.0])},
                   math.pi / 2, 1e-14, "DERIVED", "generalized eigenvalues (1, 1)"),
        OracleCase("angle_1d", "angle", {"sigma": [[1.0]], "hess": [[1.0]]},
                   math.pi / 4, 1e-14, "TRIVIAL"),
        OracleCase("decay_torus_k10", "decay",
                   {"kind": "torus", "mode": [1, 0], "amplitude": 1e-3, "t": 1.0, "kappa": 0.0},
                   1e-3 * e(-1.0), 1e-15, "TRIVIAL", "heat-mode decay"),
        OracleCase("decay_sphere_l1", "decay",
                   {"kind": "sphere", "mode": [1, 0], "amplitude": 1e-3, "t": 1.0, "kappa": 1.0},
                   1e-3 * e(-2.0), 1e-15, "DERIVED", "eigenvalue l(l+1) = 2"),
        OracleCase("decay_sphere_l1_kappa4", "decay",
                   {"kind": "sphere", "mode": [1, 0], "amplitude": 1e-3, "t": 0.5, "kappa": 4.0},
                   1e-3 * e(-4.0), 1e-15, "DERIVED", "eigenvalue scales with kappa"),
        OracleCase("harmonic_l1_pole_chart0", "harmonic",
                   {"ell": 1, "m": 0, "kappa": 1.0, "chart": 0, "point": [0.0, 0.0]},
                   [-1.0, 1.0], 1e-12, "DERIVED", "u = Z and u_;11 / sigma_11 at the chart origin"),
        OracleCase("harmonic_l1_pole_chart1", "harmonic",
                   {"ell": 1, "m": 0, "kappa": 1.0, "chart": 1, "point": [0.0, 0.0]},
                   [1.0, -1.0], 1e-12, "DERIVED", "u = Z and u_;11 / sigma_11 at the chart origin"),
    ]


def evaluate_case(case: OracleCase) -> tuple[Any, float]:
    """Evaluate a case with the main code path; returns ``(value, max abs error)``."""
    from .geometry import angle

    inp = case.inputs
    if case.kind == "angle":
        sigma, hess = np.asarray(inp["sigma"], float), np.asarray(inp["hess"], float)
        value = float(angle(hess, sigma))
        ref = angle_bruteforce(sigma, hess)
        return value, max(abs(value - case.expected), abs(ref - case.expected))
    if case.kind == "decay":
        value, _ = linearized_mode_decay(inp["kind"], inp["mode"], inp["amplitude"], inp["t"],
                                         inp.get("kappa", 1.0))
        return float(value), abs(float(value) - case.expected)
    if case.kind == "harmonic":
        pts = SpherePoints.at([inp["point"]], float(inp["kappa"]))
        jet = sphere_harmonic_restriction(int(inp["ell"]), pts, int(inp["m"]))
        node = (int(inp["chart"]), 0)
        value = [float(jet.value[node]), float(jet.hess[node][0, 0] / pts.sigma[node][0, 0])]
        return value, float(np.max(np.abs(np.subtract(value, case.expected))))
    raise ValueError(f"unknown oracle case kind {case.kind!r}")
