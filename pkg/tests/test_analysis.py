import dataclasses

import numpy as np
import pytest

from swetc.analysis import (
    METRICS_HEADER, Certificate, CertificateError, count_metrics, empirical_l2,
    eval_certificate_T1, eval_certificate_T2, fit_decay, iss_check, metrics_csv,
    metrics_row, zeno_report,
)
from swetc.plant import DelayModel, Disturbance, Gain, Periodic, PerturbedPlant, Signal, SwitchingET
from swetc.simulator import SimConfig, run
from swetc.synthesis import SolverOptions, feasibility


@pytest.fixture(scope="module")
def t1_cert(ex2):
    r = feasibility("1", *ex2, h=0.897, eps=0.555, delta=0.24)
    return Certificate.from_result("T1", r, h=0.897, eps=0.555, delta=0.24)


@pytest.fixture(scope="module")
def t1_run(ex2, t1_cert):
    trig = SwitchingET(0.897, 0.555, t1_cert.witness["Omega"])
    return run(*ex2, SimConfig(trig, x0=(10.0, 0.0)))


@pytest.fixture(scope="module")
def iss_cert(ex2_iss):
    r = feasibility("2", *ex2_iss, h=0.3, eps=0.3, delta=0.24, gamma=1.0, eta_max=0.1)
    assert r.feasible
    return Certificate.from_result("T2", r, h=0.3, eps=0.3, delta=0.24, gamma=1.0, eta_max=0.1)


def _iss_run(plant, gain, cert, amp, x0=(10.0, 0.0)):
    trig = SwitchingET(0.3, 0.3, cert.witness["Omega"])
    dist = Disturbance(w=Signal("noise", amp, 5.0, seed=2))
    return run(plant, gain, SimConfig(trig, x0=x0, seed=3, delay=DelayModel(0.1, "random"),
                                      disturbance=dist))


# -- counting and decay ------------------------------------------------------------

def test_periodic_exact_division(ex2):
    traj = run(*ex2, SimConfig(Periodic(2.0), x0=(1.0, 0.0)))
    rep = count_metrics(traj)
    assert rep.SM == 11 and rep.avg_period == pytest.approx(2.0)
    assert rep.min_gap == pytest.approx(2.0)


def test_fit_decay_pure_exponential():
    plant = PerturbedPlant(A=-np.eye(2), B2=np.ones((2, 1)), C2=np.eye(2))
    traj = run(plant, Gain(np.zeros((1, 2))), SimConfig(Periodic(1.0), x0=(1.0, -2.0)))
    assert fit_decay(traj) == pytest.approx(1.0, abs=1e-3)


def test_fit_decay_zero_state(ex2):
    traj = run(*ex2, SimConfig(Periodic(1.0), x0=(0.0, 0.0)))
    with pytest.raises(ValueError):
        fit_decay(traj)


def test_fit_decay_switching_design(t1_run):
    assert fit_decay(t1_run) >= 0.19


def test_metrics_csv_header(t1_run):
    rep = count_metrics(t1_run)
    text = metrics_csv([metrics_row("r0", t1_run, rep)])
    lines = text.splitlines()
    assert lines[0] == ",".join(METRICS_HEADER)
    assert lines[1].startswith("r0,switching,0.555,0.897,0.0,")


def test_zeno_report_quiet_on_switching(t1_run):
    rep = zeno_report(t1_run)
    assert not rep.flagged and rep.longest_grid_run == 0


# -- certificates -------------------------------------------------------------------

def test_certificate_json_round_trip(t1_cert):
    again = Certificate.from_json(t1_cert.to_json())
    assert again.tag == "T1" and again.params == t1_cert.params
    for k, v in t1_cert.witness.items():
        assert np.array_equal(again.witness[k], v)


def test_certificate_validation(t1_cert):
    wit = dict(t1_cert.witness)
    with pytest.raises(CertificateError):
        Certificate("T3", wit, {"h": 1.0})
    missing = {k: v for k, v in wit.items() if k != "U"}
    with pytest.raises(CertificateError):
        Certificate("T1", missing, {"h": 1.0})
    bad = dict(wit, P=-wit["P"])
    with pytest.raises(CertificateError):
        Certificate("T1", bad, {"h": 1.0})
    with pytest.raises(CertificateError):
        Certificate("T1", wit, {})


def test_t1_continuity_and_decay(t1_run, t1_cert):
    fs = eval_certificate_T1(t1_run, t1_cert)
    assert fs.continuity.size >= 2 * (t1_run.sent - 1)
    assert fs.continuity_ok(1e-6)
    assert fs.ok(1e-6)


def test_t1_zero_state(ex2, t1_cert):
    trig = SwitchingET(0.897, 0.555, t1_cert.witness["Omega"])
    traj = run(*ex2, SimConfig(trig, x0=(0.0, 0.0), T_f=5.0))
    fs = eval_certificate_T1(traj, t1_cert)
    assert not np.any(fs.V)
    assert fs.max_residual == 0.0


def test_t1_rejects_delayed_runs(ex2, t1_cert, iss_cert):
    trig = SwitchingET(0.897, 0.555, t1_cert.witness["Omega"])
    traj = run(*ex2, SimConfig(trig, x0=(1.0, 0.0), delay=DelayModel(0.1, "constant", 0.05)))
    with pytest.raises(ValueError):
        eval_certificate_T1(traj, t1_cert)
    with pytest.raises(CertificateError):
        eval_certificate_T1(traj, iss_cert)


def test_t2_zero_everything(ex2_iss, iss_cert):
    traj = _iss_run(*ex2_iss, iss_cert, 0.0, x0=(0.0, 0.0))
    fs = eval_certificate_T2(traj, iss_cert)
    assert not np.any(fs.V)
    assert fs.max_residual == 0.0


def test_t2_residual_on_noisy_run(ex2_iss, iss_cert):
    traj = _iss_run(*ex2_iss, iss_cert, 1.0)
    assert eval_certificate_T2(traj, iss_cert).ok(1e-4)


def test_t2_refuses_coarse_grid(ex2_iss, iss_cert):
    plant, gain = ex2_iss
    trig = SwitchingET(0.3, 0.3, iss_cert.witness["Omega"])
    traj = run(plant, gain, SimConfig(trig, dt=0.015, x0=(1.0, 0.0),
                                      delay=DelayModel(0.1, "random")))
    with pytest.raises(ValueError):
        eval_certificate_T2(traj, iss_cert)


def test_t2_hinf_design_decaying_sine(ex3_hinf):
    r = feasibility("2", *ex3_hinf, h=0.117, eps=0.13, gamma=200.0, eta_max=0.1,
                    opts=SolverOptions(depth_tol=1e-7))
    cert = Certificate.from_result("T2", r, h=0.117, eps=0.13, gamma=200.0, eta_max=0.1)
    trig = SwitchingET(0.117, 0.13, cert.witness["Omega"])
    dist = Disturbance(w=Signal("decaying-sine", 1.0, 1.0, 0.1))
    traj = run(*ex3_hinf, SimConfig(trig, seed=5, delay=DelayModel(0.1, "random"),
                                    disturbance=dist))
    assert eval_certificate_T2(traj, cert).ok(1e-4)
    assert empirical_l2(traj, 200.0) < 0


# -- gain integral and ISS ------------------------------------------------------------

def test_empirical_l2_without_output_channel(ex2_iss, iss_cert):
    traj = _iss_run(*ex2_iss, iss_cert, 1.0, x0=(0.0, 0.0))
    assert traj.z.shape[1] == 0
    assert empirical_l2(traj, 1.0) < 0


def test_empirical_l2_monotone_and_linear(ex3_hinf):
    trig = Periodic(0.05)
    dist = Disturbance(w=Signal("decaying-sine", 1.0, 1.0, 0.1))
    traj = run(*ex3_hinf, SimConfig(trig, T_f=5.0, disturbance=dist))
    Js = [empirical_l2(traj, g) for g in (0.5, 1.0, 2.0, 4.0)]
    assert all(a > b for a, b in zip(Js, Js[1:]))
    doubled = dataclasses.replace(traj, z=2 * traj.z)
    assert empirical_l2(doubled, 0.0) == pytest.approx(4 * empirical_l2(traj, 0.0))


def test_empirical_l2_requires_zero_state(ex3_hinf):
    traj = run(*ex3_hinf, SimConfig(Periodic(0.05), T_f=1.0, x0=(0.1, 0, 0, 0)))
    with pytest.raises(ValueError):
        empirical_l2(traj, 1.0)


def test_iss_pure_decay(ex2_iss, iss_cert):
    traj = _iss_run(*ex2_iss, iss_cert, 0.0)
    assert iss_check(traj, iss_cert, 0.0).ok


def test_iss_detector(ex2_iss, iss_cert):
    ok_run = _iss_run(*ex2_iss, iss_cert, 1.0)
    assert iss_check(ok_run, iss_cert, 1.0).ok
    loud = _iss_run(*ex2_iss, iss_cert, 100.0)
    res = iss_check(loud, iss_cert, 1.0)
    assert not res.ok and res.margin < 0


def test_iss_requires_no_output_channel(ex3_hinf, iss_cert):
    traj = run(*ex3_hinf, SimConfig(Periodic(0.05), T_f=1.0))
    with pytest.raises(ValueError):
        iss_check(traj, iss_cert, 1.0)
