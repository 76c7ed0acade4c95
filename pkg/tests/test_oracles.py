import json
import math

import numpy as np
import pytest

from slagflow.manifold import build_sphere
from slagflow.oracles import (OracleCase, SpherePoints, UnitarityError, angle_bruteforce, builtin_cases,
                              dumps17, evaluate_case, linearized_mode_decay, read_cases,
                              sphere_harmonic_restriction, write_cases)


def test_bruteforce_examples():
    assert angle_bruteforce(np.eye(2), np.zeros((2, 2))) == 0.0
    assert angle_bruteforce(np.eye(2), np.eye(2)) == pytest.approx(math.pi / 2, abs=1e-15)
    assert angle_bruteforce(np.diag([2.0, 1.0]), np.diag([2.0, 1.0])) == pytest.approx(math.pi / 2)


def test_bruteforce_pivoting_sign():
    # forces a row swap in the LU factorisation
    sigma = np.array([[0.1, 0.0], [0.0, 1.0]]) + 0.0
    hess = np.array([[0.0, 2.0], [2.0, 0.0]])
    lam = np.linalg.eigvals(np.linalg.solve(sigma, hess)).real
    assert angle_bruteforce(sigma, hess) == pytest.approx(np.arctan(lam).sum(), abs=1e-12)


@pytest.mark.filterwarnings("ignore::scipy.linalg.LinAlgWarning")
def test_bruteforce_detects_degenerate_inputs():
    # antisymmetric H makes G singular
    with pytest.raises(UnitarityError):
        angle_bruteforce(np.eye(2), np.array([[0.0, 1.0], [-1.0, 0.0]]))
    with pytest.raises(ValueError):
        angle_bruteforce(-np.eye(2), np.eye(2))


@pytest.mark.parametrize("kind, mode, t, kappa, expected", [
    ("torus", (1, 0), 1.0, 0.0, 1e-3 * math.exp(-1)),
    ("sphere", (1, 0), 1.0, 1.0, 1e-3 * math.exp(-2)),
    ("sphere", (1, 1), 0.5, 4.0, 1e-3 * math.exp(-4)),
    ("torus", (2, 1, 1), 0.1, 0.0, 1e-3 * math.exp(-0.6)),
])
def test_linear_decay(kind, mode, t, kappa, expected):
    value, budget = linearized_mode_decay(kind, mode, 1e-3, t, kappa)
    assert value == pytest.approx(expected, rel=1e-15)
    assert budget == pytest.approx(1e-9)


@pytest.mark.parametrize("kind, mode, amp", [
    ("torus", (0.5, 0), 1e-3), ("sphere", (1, 2), 1e-3), ("sphere", (1,), 1e-3),
    ("plane", (1, 0), 1e-3), ("torus", (1, 0), 0.1),
])
def test_linear_decay_rejects(kind, mode, amp):
    with pytest.raises(ValueError):
        linearized_mode_decay(kind, mode, amp, 1.0)


def test_degree_one_identity_at_random_nodes():
    rng = np.random.default_rng(0)
    pts = SpherePoints.at(rng.uniform(-1.2, 1.2, (100, 2)), kappa=3.0)
    for m in (-1, 0, 1):
        jet = sphere_harmonic_restriction(1, pts, m)
        resid = jet.hess + 3.0 * jet.value[..., None, None] * pts.sigma
        assert np.abs(resid).max() < 1e-12


def test_degree_zero_and_limits():
    pts = SpherePoints.at([[0.3, -0.2]])
    jet = sphere_harmonic_restriction(0, pts)
    assert np.all(jet.value == 1.0) and not jet.grad.any() and not jet.hess.any()
    with pytest.raises(ValueError):
        sphere_harmonic_restriction(3, pts)


def test_degree_two_is_laplace_eigenfunction():
    atlas = build_sphere(48, 2.0)
    for m in range(-2, 3):
        jet = sphere_harmonic_restriction(2, atlas, m)
        lap = np.einsum("...ij,...ij->...", atlas.sigma_inv, jet.hess)
        assert np.abs(lap + 6 * 2.0 * jet.value).max() < 1e-10


def test_builtin_cases_pass():
    for case in builtin_cases():
        _, err = evaluate_case(case)
        assert err <= case.tolerance, case.name


def test_case_file_round_trip(tmp_path):
    path = tmp_path / "cases.jsonl"
    cases = builtin_cases()
    write_cases(path, cases)
    lines = path.read_text().splitlines()
    assert len(lines) == len(cases)
    rec = json.loads(lines[1])
    assert set(rec) >= {"name", "inputs", "expected", "tolerance", "provenance"}
    assert rec["provenance"] in ("PAPER", "TRIVIAL", "DERIVED")
    back = read_cases(path)
    assert [c.name for c in back] == [c.name for c in cases]
    assert back[1].expected == cases[1].expected  # 17 digits round-trip exactly


def test_dumps17_writes_full_precision():
    text = dumps17({"x": [0.1, 1.0 / 3.0], "n": 3, "ok": True})
    assert "0.10000000000000001" in text and "0.33333333333333331" in text
    assert json.loads(text)["x"][1] == 1.0 / 3.0


def test_case_invariants():
    with pytest.raises(ValueError):
        OracleCase("bad", "angle", {}, 1.0, 0.0, "TRIVIAL")
    with pytest.raises(ValueError):
        OracleCase("bad", "angle", {}, 1.0, 1e-3, "GUESS")
    with pytest.raises(ValueError):
        OracleCase("bad", "angle", {}, math.inf, 1e-3, "DERIVED")
