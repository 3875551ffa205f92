import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from swetc.lmi import (
    LMIError, MatrixVar, Status, assemble, bmat, check_witness, nsd, psd,
    solve_feasibility, sym_blocks,
)
from swetc.synthesis import Thm1Params, build_thm1, variables_of


def test_smallest_problem():
    P = MatrixVar("P", 2, symmetric=True)
    prob = assemble([psd(P, strict=True, margin=1e-3)], [P])
    assert len(prob.cones) == 1 and prob.cones[0].size == 2
    assert prob.nvars == 3


def test_theorem1_cone_sizes(ex1):
    plant, gain = ex1
    cons = build_thm1(plant, gain, Thm1Params(h=0.3, delta=0.24))
    prob = assemble(cons, variables_of(cons))
    assert [c.size for c in prob.cones[:4]] == [4, 6, 8, 6]


def test_rectangular_constraint_rejected():
    X = MatrixVar("X", 2, 3)
    with pytest.raises(LMIError):
        assemble([psd(X)], [X])


def test_undeclared_variable_rejected():
    P = MatrixVar("P", 2, symmetric=True)
    Q = MatrixVar("Q", 2, symmetric=True)
    with pytest.raises(LMIError):
        assemble([psd(P + Q)], [P])


def test_contradictory_is_infeasible():
    P = MatrixVar("P", 2, symmetric=True)
    I = np.eye(2)
    prob = assemble([psd(P - I), psd(-P - I)], [P])
    assert solve_feasibility(prob).status is Status.INFEASIBLE


def test_single_constraint_feasible():
    P = MatrixVar("P", 2, symmetric=True)
    cons = [psd(P - np.eye(2))]
    res = solve_feasibility(assemble(cons, [P]))
    assert res.feasible
    ok, _ = check_witness(cons, {"P": np.eye(2)})
    assert ok


def test_theorem1_example1_feasible_and_witness_checks(ex1):
    plant, gain = ex1
    cons = build_thm1(plant, gain, Thm1Params(h=0.3, delta=0.24))
    res = solve_feasibility(assemble(cons, variables_of(cons)))
    assert res.feasible
    ok, reports = check_witness(cons, res.witness, tol=1e-8)
    assert ok
    bad = dict(res.witness)
    bad["P"] = bad["P"] - 2 * (np.linalg.eigvalsh(bad["P"]).min() + 1) * np.eye(2)
    ok, _ = check_witness(cons, bad)
    assert not ok


def test_zero_witness_slack_equals_minus_margin():
    P = MatrixVar("P", 2, symmetric=True)
    c = psd(P, strict=True, margin=1e-3)
    _, (rep,) = check_witness([c], {"P": np.zeros((2, 2))})
    assert rep.slack == pytest.approx(-1e-3)


def test_bmat_shapes():
    X = MatrixVar("X", 2, symmetric=True)
    M = bmat([[X, np.zeros((2, 1))], [np.zeros((1, 2)), np.eye(1)]])
    assert M.shape == (3, 3)
    with pytest.raises(LMIError):
        bmat([[X, np.zeros((3, 1))]])


def _random_problem(rng):
    n = int(rng.integers(1, 4))
    k = int(rng.integers(1, 3))
    X = MatrixVar("X", n, symmetric=True)
    Y = MatrixVar("Y", n, k)
    L = rng.standard_normal((n, n))
    N = rng.standard_normal((n, n))
    C0 = rng.standard_normal((n, n))
    R = rng.standard_normal((k, n))
    NY = N @ Y @ R
    expr = L @ X @ L.T + NY + NY.T + (C0 + C0.T)
    big = sym_blocks({(0, 0): expr, (0, 1): Y, (1, 1): -np.eye(k)}, [n, k])
    return [X, Y], [psd(expr), nsd(big)]


@settings(max_examples=120, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_assemble_matches_evaluate(seed):
    rng = np.random.default_rng(seed)
    variables, cons = _random_problem(rng)
    prob = assemble(cons, variables)
    wit = {}
    for v in variables:
        M = rng.standard_normal(v.shape)
        wit[v.name] = (M + M.T) / 2 if v.symmetric else M
    x = prob.vectorize(wit)
    for cone, c, S in zip(prob.cones, cons, prob.slack_matrices(x)):
        E = c.sense.sign * c.expr.evaluate(wit) - c.margin * np.eye(c.size)
        scale = 1 + np.abs(E).max()
        assert np.abs(S - E).max() <= 1e-12 * scale


def test_vectorize_round_trip(rng):
    variables, cons = _random_problem(rng)
    prob = assemble(cons, variables)
    x = rng.standard_normal(prob.nvars)
    assert np.allclose(prob.vectorize(prob.unvectorize(x)), x)
