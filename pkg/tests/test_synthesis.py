import warnings

import numpy as np
import pytest

from swetc.lmi import Status, check_witness
from swetc.plant import DimensionError, Gain, PerturbedPlant, SimplePlant
from swetc.synthesis import (
    SolverOptions, Thm1Params, Thm2Params, build_delay_partitioned_periodic,
    build_polytopic, build_remark1, build_thm1, build_thm2, check, feasibility,
    max_h, sweep_eps,
)


def thm1(plant, gain, **kw):
    return feasibility("1", plant, gain, **kw)


# -- the switching trigger without delays -------------------------------------------

def test_example1_at_reported_h(ex1):
    assert thm1(*ex1, h=0.356, delta=0.24).feasible


def test_example1_beyond_exact_margin(ex1):
    r = thm1(*ex1, h=0.60, delta=0.001)
    assert r.status in (Status.INFEASIBLE, Status.UNDECIDED)


def test_unstabilised_plant_never_feasible(ex1):
    plant, _ = ex1
    zero = Gain(np.zeros((1, 2)))
    for h in (0.01, 0.1):
        assert not thm1(plant, zero, h=h).feasible


def test_feasible_witness_passes_check(ex2):
    plant, gain = ex2
    cons = build_thm1(plant, gain, Thm1Params(h=0.897, eps=0.555, delta=0.24))
    r = check(cons)
    assert r.feasible
    ok, _ = check_witness(cons, r.witness, tol=1e-8)
    assert ok


def test_builder_needs_simple_plant(ex2_iss):
    plant, gain = ex2_iss
    with pytest.raises(DimensionError):
        build_thm1(plant, gain, Thm1Params(h=0.1))


def test_bad_parameters():
    with pytest.raises(ValueError):
        Thm1Params(h=0.0)
    with pytest.raises(ValueError):
        Thm2Params(gamma=0.0, h=0.1)


# -- the periodic event-trigger without delays -------------------------------------

@pytest.mark.parametrize("eps,h", [(4.6e-3, 1.115), (0.555, 0.344)])
def test_remark1_table_points(ex2, eps, h):
    assert feasibility("r1", *ex2, h=h, eps=eps, delta=0.24).feasible


def test_remark1_gap_to_theorem1(ex2):
    assert not feasibility("r1", *ex2, h=0.899, eps=0.555, delta=0.24).feasible
    assert thm1(*ex2, h=0.897, eps=0.555, delta=0.24).feasible


def test_remark1_bordered_sizes(ex2):
    plant, gain = ex2
    cons = build_remark1(plant, gain, Thm1Params(h=0.5, eps=0.1, delta=0.1))
    n, l = plant.n, plant.l
    sizes = {c.name: c.size for c in cons}
    assert sizes["Psi0bar"] == 3 * n + l and sizes["Psi1bar"] == 4 * n + l


def test_remark1_zero_decay_warns(ex2):
    plant, gain = ex2
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        build_remark1(plant, gain, Thm1Params(h=0.5, eps=0.1, delta=0.0))
    assert any("delta" in str(w.message) for w in rec)


# -- delays and disturbances ---------------------------------------------------------

def test_thm2_example2_embedding(ex2):
    assert feasibility("2", *ex2, h=0.339, eps=0.56, delta=0.24, eta_max=0.1).feasible


def test_thm2_example3_hinf(ex3_hinf):
    r = feasibility("2", *ex3_hinf, h=0.117, eps=0.13, gamma=200.0, eta_max=0.1,
                    opts=SolverOptions(depth_tol=1e-7))
    assert r.feasible
    # the witness solves the unnormalised gain level
    plant, gain = ex3_hinf
    cons = build_thm2(plant, gain, Thm2Params(gamma=200.0, h=0.117, eta_max=0.1, eps=0.13))
    ok, reports = check_witness(cons, r.witness, tol=1e-8)
    assert ok, [x for x in reports if not x.ok(1e-8)]


def test_thm2_monotone_in_gamma(ex3_hinf):
    opts = SolverOptions(depth_tol=1e-7)
    kw = dict(h=0.117, eps=0.13, eta_max=0.1, opts=opts)
    assert feasibility("2", *ex3_hinf, gamma=200.0, **kw).feasible
    assert feasibility("2", *ex3_hinf, gamma=1e6, **kw).feasible
    # the same witness works for the larger gamma
    r = feasibility("2", *ex3_hinf, gamma=200.0, **kw)
    plant, gain = ex3_hinf
    cons = build_thm2(plant, gain, Thm2Params(gamma=400.0, h=0.117, eta_max=0.1, eps=0.13))
    assert check_witness(cons, r.witness, tol=1e-8)[0]


def test_delay_partition_validation(ex2_iss):
    plant, gain = ex2_iss
    p = Thm2Params(gamma=1.0, h=0.3, eta_max=0.1)
    with pytest.raises(ValueError):
        build_delay_partitioned_periodic(plant, gain, p, p.tau_max)
    cons = build_delay_partitioned_periodic(plant, gain, p, 1e-9)
    assert cons and all(c.expr.shape[0] == c.expr.shape[1] for c in cons)


def test_delay_partitioned_table_point(ex2):
    r = feasibility("delpar", *ex2, h=0.636, delta=0.24, eta_max=0.1)
    assert r.feasible and "partition" in r.diagnostics


# -- polytopes ------------------------------------------------------------------

def _perturbed_vertices(plant, scale):
    A = plant.A.copy()
    lo, hi = A.copy(), A.copy()
    lo[1, 1] *= 1 - scale
    hi[1, 1] *= 1 + scale
    return [SimplePlant(lo, plant.B, plant.C), SimplePlant(hi, plant.B, plant.C)]


def test_polytope_single_vertex_identical(ex1):
    plant, gain = ex1
    p = Thm1Params(h=0.3, delta=0.24)
    a = build_thm1(plant, gain, p)
    b = build_polytopic([plant], gain, build_thm1, p)
    assert [c.name for c in a] == [c.name for c in b]
    for x, y in zip(a, b):
        assert np.array_equal(x.expr.const, y.expr.const)


def test_polytope_duplicate_vertices(ex1):
    plant, gain = ex1
    p = Thm1Params(h=0.3, delta=0.24)
    single = check(build_thm1(plant, gain, p)).status
    double = check(build_polytopic([plant, plant], gain, build_thm1, p)).status
    assert single == double


def test_polytope_one_percent(ex1):
    plant, gain = ex1
    p = Thm1Params(h=0.30, delta=0.24)
    verts = _perturbed_vertices(plant, 0.01)
    for v in verts:
        assert check(build_thm1(v, gain, p)).feasible
    assert check(build_polytopic(verts, gain, build_thm1, p)).feasible


def test_polytope_dimension_mismatch(ex1, ex3):
    with pytest.raises(DimensionError):
        build_polytopic([ex1[0], ex3[0]], ex1[1], build_thm1, Thm1Params(h=0.1))


def test_builders_affine_in_plant(ex2_iss):
    plant, gain = ex2_iss
    other = PerturbedPlant(A=plant.A + [[0.1, -0.2], [0.3, 0.05]], B1=plant.B1 * 2,
                           B2=plant.B2 * 0.5, C2=plant.C2)
    lam = 0.3
    mid = plant.vertex_combination(other, lam)
    p = Thm2Params(gamma=1.0, h=0.3, eta_max=0.1, eps=0.2, delta=0.1)
    ca, cb, cm = (build_thm2(x, gain, p) for x in (plant, other, mid))
    for a, b, m in zip(ca, cb, cm):
        assert np.allclose((1 - lam) * a.expr.const + lam * b.expr.const, m.expr.const,
                           atol=1e-12)
        for v in m.expr.variables:
            comb = (1 - lam) * a.expr.coefficients(v) + lam * b.expr.coefficients(v)
            assert np.allclose(comb, m.expr.coefficients(v), atol=1e-12)


# -- searches -------------------------------------------------------------------

def test_max_h_example1(ex1):
    for delta, target in ((0.24, 0.356), (0.001, 0.424)):
        res = max_h(lambda h: thm1(*ex1, h=h, delta=delta), tol=1e-3)
        assert abs(res.h_max - target) <= 0.005
        lo, hi = res.bracket
        assert lo <= res.h_max <= hi


def test_max_h_example3(ex3):
    res = max_h(lambda h: thm1(*ex3, h=h, eps=0.35, delta=0.155), tol=1e-3, h_hi0=2.0)
    assert abs(res.h_max - 0.242) <= 0.005


def test_max_h_none_when_never_feasible(ex1):
    plant, _ = ex1
    res = max_h(lambda h: thm1(plant, Gain(np.zeros((1, 2))), h=h), tol=0.05, h_hi0=1.0)
    assert res.h_max is None and res.status is Status.INFEASIBLE


def test_sweep_table1(ex2):
    fac = lambda eps: (lambda h: thm1(*ex2, h=h, eps=eps, delta=0.24))
    sw = sweep_eps(fac, [0.0, 4.6e-3, 0.555], tol=1e-3)
    h = [r[1] for r in sw.rows]
    assert abs(h[0] - 1.173) <= 0.01
    assert h[1] >= 1.105
    assert abs(h[2] - 0.899) <= 0.01
    assert sweep_eps(fac, []).rows == []


def test_sweep_table2_column(ex2):
    fac = lambda eps: (lambda h: feasibility("2", *ex2, h=h, eps=eps, delta=0.24, eta_max=0.2))
    sw = sweep_eps(fac, [0.345], tol=1e-3, h_hi0=2.0)
    assert abs(sw.rows[0][1] - 0.379) <= 0.01
