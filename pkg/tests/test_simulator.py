import math

import numpy as np
import pytest

from swetc.oracle import sampled_matrix
from swetc.plant import (ContinuousET, DelayModel, Disturbance, Gain, Periodic, PeriodicET,
                         PerturbedPlant, Signal, SwitchingET)
from swetc.simulator import (SimConfig, SimulationError, circle_ics, fictitious_delay,
                             integrate_step, replay_switched, run, run_batch)
from swetc.synthesis import feasibility
from swetc.analysis import zeno_report


@pytest.fixture(scope="module")
def ex2_omega(ex2):
    r = feasibility("1", *ex2, h=0.897, eps=0.555, delta=0.24)
    assert r.feasible
    return r.witness["Omega"]


def _pp(A, B2, B1=None):
    return PerturbedPlant(A=A, B2=B2, C2=np.eye(np.shape(A)[0]), B1=B1)


def test_constant_derivative_exact():
    plant = _pp(np.zeros((2, 2)), np.eye(2))
    x = integrate_step([1.0, 2.0], [0.5, -1.0], np.zeros(0), plant, 0.01)
    assert np.array_equal(x, np.array([1.0, 2.0]) + 0.01 * np.array([0.5, -1.0]))


def test_scalar_exponential():
    plant = _pp(-np.eye(1), np.ones((1, 1)))
    x = integrate_step([1.0], [0.0], np.zeros(0), plant, 0.01)
    assert abs(x[0] - math.exp(-0.01)) <= 1e-10


def test_integrate_step_rejects_overflow():
    plant = _pp(np.eye(1) * 1e300, np.ones((1, 1)))
    with pytest.raises(SimulationError):
        integrate_step([1e300], [0.0], np.zeros(0), plant, 1.0)


def test_periodic_matches_exact_discretisation(ex2):
    plant, gain = ex2
    h = 1.173
    traj = run(plant, gain, SimConfig(Periodic(h), dt=1e-3, T_f=20.0, x0=(10.0, 0.0)))
    M = sampled_matrix(plant, gain, traj.s[1])      # grid-rounded period
    x = np.array([10.0, 0.0])
    for k, s in enumerate(traj.s):
        i = int(round(s / traj.dt))
        assert np.allclose(traj.x[i], x, rtol=1e-4, atol=1e-4 * 10)
        x = M @ x
    assert np.linalg.norm(traj.x[-1]) < 0.1


def test_switching_single_run_near_table(ex2, ex2_omega):
    plant, gain = ex2
    traj = run(plant, gain, SimConfig(SwitchingET(0.897, 0.555, ex2_omega), x0=(10.0, 0.0)))
    assert abs(traj.sent - 11.13) <= 4


def test_switching_zero_eps_equals_periodic(ex2):
    plant, gain = ex2
    for x0 in circle_ics(5):
        a = run(plant, gain, SimConfig(SwitchingET(0.5, 0.0, np.eye(1)), x0=x0))
        b = run(plant, gain, SimConfig(Periodic(0.5), x0=x0))
        assert len(a.s) == len(b.s)
        assert np.max(np.abs(a.s - b.s)) <= a.dt


def test_continuous_trigger_zeno(ex2):
    plant, gain = ex2
    traj = run(plant, gain, SimConfig(ContinuousET(1e-3, np.eye(1)), x0=(10.0, 0.0)))
    assert traj.zeno_suspect
    assert zeno_report(traj).flagged


def test_fictitious_delay_endpoints():
    s_k, s_next, e_k, e_next, h = 1.0, 2.0, 0.05, 0.1, 0.3
    assert fictitious_delay(s_k + e_k + h, s_k, s_next, e_k, e_next, h) == pytest.approx(e_k)
    dt = 1e-4
    t_end = s_next + e_next - dt
    span = s_next + e_next - s_k - e_k - h
    assert abs(fictitious_delay(t_end, s_k, s_next, e_k, e_next, h) - e_next) \
        <= dt * abs(e_next - e_k) / span + 1e-15
    for t in np.linspace(s_k + 0.05 + h, s_next + 0.05, 7, endpoint=False):
        assert fictitious_delay(t, s_k, s_next, 0.05, 0.05, h) == pytest.approx(0.05)
    with pytest.raises(ValueError):
        fictitious_delay(0.0, s_k, s_next, e_k, e_next, h)
    with pytest.raises(ValueError):
        fictitious_delay(1.5, 1.0, 1.2, 0.0, 0.0, 0.5)


def test_periodic_count_identity(ex2):
    plant, gain = ex2
    for h in (1.173, 2.0, 0.7):
        traj = run(plant, gain, SimConfig(Periodic(h), x0=(1.0, 1.0)))
        assert traj.sent == math.floor(20.0 / h) + 1


def test_zero_state_tie(ex2, ex2_omega):
    plant, gain = ex2
    h = 0.897
    traj = run(plant, gain, SimConfig(SwitchingET(h, 0.555, ex2_omega), x0=(0.0, 0.0)))
    assert not np.any(traj.x)
    assert traj.sent == math.floor(20.0 / h) + 1


def test_min_gap_and_delay_ordering(ex2, ex2_omega):
    plant, gain = ex2
    for trig in (SwitchingET(0.338, 0.56, ex2_omega), PeriodicET(0.3, 0.5, ex2_omega)):
        for seed, x0 in enumerate(circle_ics(4)):
            traj = run(plant, gain, SimConfig(trig, x0=x0, seed=seed,
                                              delay=DelayModel(0.1, "random")))
            assert np.min(np.diff(traj.s)) >= trig.h - 1e-9
            assert np.all(np.diff(traj.tk) >= -1e-12)
            assert np.all(traj.eta <= 0.1) and np.all(traj.eta >= 0)
            assert np.allclose(traj.tk, traj.s + traj.eta)


def test_determinism(ex2_iss):
    plant, gain = ex2_iss
    cfg = SimConfig(SwitchingET(0.3, 0.3, np.eye(1)), x0=(3.0, -1.0), seed=11,
                    delay=DelayModel(0.1, "random"),
                    disturbance=Disturbance(w=Signal("noise", 1.0, 5.0, seed=2)))
    a, b = run(plant, gain, cfg), run(plant, gain, cfg)
    assert a.trajectory_csv() == b.trajectory_csv()
    assert a.events_csv() == b.events_csv()


def test_perturbed_embedding_equals_simple(ex2):
    plant, gain = ex2
    pp = PerturbedPlant(A=plant.A, B2=plant.B, C2=plant.C, B1=np.zeros((2, 1)),
                        D2=np.zeros((1, 1)))
    cfg = SimConfig(SwitchingET(0.5, 0.2, np.eye(1)), x0=(10.0, 0.0))
    a = run(plant, gain, cfg)
    b = run(pp, Gain(-gain.K), cfg)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.s, b.s)


def test_reformulation_exactness(ex2, ex2_omega):
    plant, gain = ex2
    traj = run(plant, gain, SimConfig(SwitchingET(0.897, 0.555, ex2_omega), dt=1e-4,
                                      x0=(10.0, 0.0)))
    x = replay_switched(plant, gain, traj)
    assert np.max(np.abs(x - traj.x)) <= 1e-8


def test_dt_must_resolve_h():
    with pytest.raises(ValueError):
        SimConfig(Periodic(0.01), dt=1e-3)


def test_x0_dimension_checked(ex2):
    with pytest.raises(ValueError):
        run(*ex2, SimConfig(Periodic(1.0), x0=(1.0, 2.0, 3.0)))


def test_batch_seeds_and_failures(ex2):
    plant, gain = ex2
    batch = run_batch(plant, gain, SimConfig(Periodic(1.173), T_f=5.0), circle_ics(3))
    assert len(batch.runs) == 3 and not batch.failures
    assert [r.config.seed for r in batch.runs] == [0, 1, 2]
    with pytest.raises(ValueError):
        run_batch(plant, gain, SimConfig(Periodic(1.0)), [])


def test_batch_table1_periodic(ex2):
    plant, gain = ex2
    batch = run_batch(plant, gain, SimConfig(Periodic(1.173)), circle_ics(30))
    assert batch.mean_sm == 18


def test_trajectory_csv_layout(ex3_hinf):
    plant, gain = ex3_hinf
    traj = run(plant, gain, SimConfig(Periodic(0.1), T_f=0.2, x0=(0.1, 0, 0, 0)))
    head = traj.trajectory_csv().splitlines()[0]
    assert head == "t,x1,x2,x3,x4,u1,z1,chi"
    assert traj.events_csv().splitlines()[0] == "k,s_k,eta_k,t_k"
