"""Verification suites: identity checks at two resolutions with measured orders.

Each suite returns a list of :class:`Check` records; a suite passes when every
check does.  The suites are what ``slagflow verify`` runs.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .calculus import check_commutation, covariant_jet, gradient
from .flow import step
from .geometry import (BranchRiskError, angle, branch_safe, centered_rate, generalized_eigenvalues,
                       induced_metric, induced_metric_matrix, residual_rho_sphere, residual_vartheta,
                       theta_gradient_identity)
from .initial import InitialCondition, initial_field
from .manifold import MetricAtlas, build_sphere, build_torus
from .oracles import angle_bruteforce, builtin_cases, evaluate_case, read_cases, write_cases

ORDER_THRESHOLD = 3.5
RESIDUAL_RATIO = 8.0
ANGLE_TOL = 1e-10
FLAT_FLOOR = 1e-10
CLOSED_FORM_TOL = 1e-6
COARSE, FINE = 48, 96
SMOOTH_BUMP = InitialCondition(kind="bump", bandlimit=3, target_max_chi=1.5)
BUMP_SEED = 3


@dataclass
class Check:
    name: str
    value: float
    threshold: float
    passed: bool
    detail: str = ""

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        extra = f"  ({self.detail})" if self.detail else ""
        return f"{tag}  {self.name}: {self.value:.6g} (threshold {self.threshold:.6g}){extra}"


def order(coarse: float, fine: float, ratio: float = 2.0) -> float:
    if fine <= 0.0:
        return math.inf
    return math.log(coarse / fine) / math.log(ratio)


def random_pairs(count: int, n: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """``sigma = A^T A + 0.1 I`` with ``A ~ U[-1, 1]``, symmetric ``H`` with entries ``U[-3, 3]``."""
    rng = np.random.default_rng(seed)
    a = rng.uniform(-1.0, 1.0, (count, n, n))
    sigma = a.swapaxes(-1, -2) @ a + 0.1 * np.eye(n)
    upper = np.triu(rng.uniform(-3.0, 3.0, (count, n, n)))
    hess = upper + np.triu(upper, 1).swapaxes(-1, -2)
    return sigma, hess


def smooth_bump(atlas: MetricAtlas) -> np.ndarray:
    return initial_field(atlas, SMOOTH_BUMP, BUMP_SEED)


def suite_angle(count: int = 10_000, dims=(2, 3)) -> list[Check]:
    checks = []
    for n in dims:
        sigma, hess = random_pairs(count, n, seed=n)
        num = np.linalg.det(sigma + 1j * hess)
        rhs = np.linalg.det(sigma) * np.linalg.det(induced_metric_matrix(hess, sigma))
        rel = float(np.max(np.abs(np.abs(num) ** 2 - rhs) / rhs))
        checks.append(Check(f"det identity n={n}", rel, ANGLE_TOL, rel <= ANGLE_TOL, f"{count} pairs"))

        lam = generalized_eigenvalues(hess, sigma)
        safe = branch_safe(lam)
        eig = angle(hess[safe], sigma[safe], "eigen")
        cdet = angle(hess[safe], sigma[safe], "complex_det")
        err = float(np.max(np.abs(eig - cdet)))
        checks.append(Check(f"eigen vs complex_det n={n}", err, ANGLE_TOL, err <= ANGLE_TOL,
                            f"{int(safe.sum())} branch-safe of {count}"))
        brute = np.array([angle_bruteforce(s, h) for s, h in zip(sigma[safe], hess[safe])])
        err = float(np.max(np.abs(eig - brute)))
        checks.append(Check(f"eigen vs brute-force LU n={n}", err, ANGLE_TOL, err <= ANGLE_TOL))
    return checks


def suite_commutation() -> list[Check]:
    res = [check_commutation(smooth_bump(build_sphere(N)), build_sphere(N), order4=False)["first"]
           for N in (COARSE, FINE)]
    p = order(*res)
    checks = [Check("sphere commutation order", p, ORDER_THRESHOLD, p >= ORDER_THRESHOLD,
                    f"residual {res[0]:.3e} -> {res[1]:.3e}")]
    for N in (COARSE, FINE):
        atlas = build_torus(2, N)
        r = check_commutation(smooth_bump(atlas), atlas)
        worst = max(r.values())
        checks.append(Check(f"torus commutation N={N}", worst, FLAT_FLOOR, worst < FLAT_FLOOR))
    return checks


def circle_gradient_error(resolution: int = 256) -> float:
    """``u = sin x`` on the circle: worst deviation of either side of the angle-gradient
    identity (difference quotient of theta, contraction of the third derivative) from
    the closed form ``u''' / (1 + u''^2)``."""
    atlas = build_torus(1, resolution)
    x = atlas.coords[..., 0]
    u = np.sin(x)
    exact = -np.cos(x) / (1.0 + np.sin(x) ** 2)
    jet = covariant_jet(u, atlas, 3)
    _, g_inv = induced_metric(jet, atlas)
    contraction = np.einsum("...ij,...ijk->...k", g_inv, jet.third)[..., 0]
    theta = np.arctan(generalized_eigenvalues(jet.hess, atlas.sigma)).sum(-1)
    fd = gradient(theta, atlas)[..., 0]
    return float(max(np.abs(contraction - exact).max(), np.abs(fd - exact).max()))


def suite_gradient() -> list[Check]:
    res = []
    for N in (COARSE, FINE):
        atlas = build_sphere(N)
        res.append(theta_gradient_identity(smooth_bump(atlas), atlas))
    p = order(*res)
    err = circle_gradient_error()
    return [
        Check("sphere angle-gradient order", p, ORDER_THRESHOLD, p >= ORDER_THRESHOLD,
              f"residual {res[0]:.3e} -> {res[1]:.3e}"),
        Check("circle closed form N=256", err, CLOSED_FORM_TOL, err <= CLOSED_FORM_TOL),
    ]


def flow_residuals(atlas: MetricAtlas, dt: float) -> dict[str, float]:
    """Residuals at the middle of three time levels of a smooth-bump flow."""
    u0 = smooth_bump(atlas)
    u1 = step(u0, atlas, dt)
    u2 = step(u1, atlas, dt)
    rate = centered_rate(u0, u2, dt)
    return {"vartheta": residual_vartheta(u1, rate, atlas).norm,
            "rho": residual_rho_sphere(u1, rate, atlas).norm}


def residual_ratios(kind: str) -> dict[str, tuple[float, float]]:
    build: Callable[[int], MetricAtlas] = (lambda N: build_torus(2, N)) if kind == "torus" else build_sphere
    coarse = build(COARSE)
    dt = 0.2 * coarse.physical_h**2
    r0 = flow_residuals(coarse, dt)
    r1 = flow_residuals(build(FINE), dt / 2)
    return {k: (r0[k], r1[k]) for k in r0}


def suite_residuals() -> list[Check]:
    checks = []
    for kind in ("torus", "sphere"):
        for name, (a, b) in residual_ratios(kind).items():
            ratio = a / b if b > 0 else math.inf
            checks.append(Check(f"{kind} {name} residual ratio", ratio, RESIDUAL_RATIO,
                                ratio >= RESIDUAL_RATIO, f"{a:.3e} -> {b:.3e}"))
    return checks


def suite_oracle_cases(out_dir: str | os.PathLike | None = None) -> list[Check]:
    """Round-trip the built-in cases through the case file, then evaluate them."""
    cases = builtin_cases()
    if out_dir is not None:
        path = os.path.join(out_dir, "oracle_cases.jsonl")
        write_cases(path, cases)
        cases = read_cases(path)
    checks = []
    for case in cases:
        try:
            _, err = evaluate_case(case)
        except (ValueError, BranchRiskError) as exc:
            checks.append(Check(case.name, math.nan, case.tolerance, False, str(exc)))
            continue
        checks.append(Check(case.name, err, case.tolerance, err <= case.tolerance, case.provenance))
    return checks


SUITES: dict[str, Callable[..., list[Check]]] = {
    "angle": suite_angle,
    "commutation": suite_commutation,
    "gradient": suite_gradient,
    "residuals": suite_residuals,
    "oracle_cases": suite_oracle_cases,
}
