"""Metrics of simulated runs and numerical checks of the Lyapunov certificates.

The certificate checks evaluate the functionals on the simulation grid and
test the dissipation inequality pointwise. Derivatives are centered finite
differences taken strictly inside intervals on which the held input is
constant; the state derivative inside the integral terms comes from the model
right-hand side.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .simulator import Trajectory

__all__ = ["Certificate", "CertificateError", "MetricsReport", "count_metrics",
           "fit_decay", "eval_certificate_T1", "eval_certificate_T2",
           "empirical_l2", "iss_check", "zeno_report", "FunctionalSeries",
           "ISSResult", "ZenoReport", "metrics_row", "METRICS_HEADER"]

T1_FIELDS = ("P", "U", "X", "X1", "P2", "P3", "Y1", "Y2", "Y3", "Omega")
T2_FIELDS = ("P", "S0", "S1", "R0", "R1", "G0", "G1", "Omega")


class CertificateError(ValueError):
    pass


@dataclass
class Certificate:
    """Witness of a feasible design together with its parameters.

    ``tag`` is ``"T1"`` (no delays) or ``"T2"`` (delays and disturbances).
    For ``T2`` the parameters include ``eta_max`` (the functional's split
    point) and ``tau_max``; ``gamma`` defaults to 1.
    """

    tag: str
    witness: dict
    params: dict

    def __post_init__(self):
        if self.tag not in ("T1", "T2"):
            raise CertificateError(f"unknown certificate tag {self.tag!r}")
        need = T1_FIELDS if self.tag == "T1" else T2_FIELDS
        missing = [k for k in need if k not in self.witness]
        if missing:
            raise CertificateError(f"missing witness fields {missing}")
        self.witness = {k: np.asarray(v, dtype=float) for k, v in self.witness.items()}
        self.params = dict(self.params)
        self.params.setdefault("delta", 0.0)
        self.params.setdefault("eps", 0.0)
        if "h" not in self.params:
            raise CertificateError("certificate needs parameter h")
        if self.tag == "T2":
            self.params.setdefault("gamma", 1.0)
            self.params.setdefault("eta_max", 0.0)
            self.params.setdefault("tau_max", self.params["h"] + self.params["eta_max"])
        pos = ("P", "U") if self.tag == "T1" else ("P", "S0", "S1", "R0", "R1")
        for name in pos + ("Omega",):
            M = self.witness[name]
            M = (M + M.T) / 2
            lam = np.linalg.eigvalsh(M).min() if M.size else 0.0
            strict = name in ("P", "U")
            if lam < -1e-9 * max(1.0, np.abs(M).max()) or (strict and lam <= 0):
                raise CertificateError(f"witness {name} is not positive "
                                       f"{'definite' if strict else 'semidefinite'}")

    @classmethod
    def from_result(cls, tag, result, **params):
        if result.witness is None:
            raise CertificateError("result carries no witness")
        return cls(tag, dict(result.witness), params)

    def to_json(self):
        return json.dumps({"tag": self.tag, "params": self.params,
                           "witness": {k: v.tolist() for k, v in sorted(self.witness.items())}},
                          indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, source):
        text = Path(source).read_text() if isinstance(source, Path) or (
            isinstance(source, str) and not source.lstrip().startswith("{")) else source
        d = json.loads(text)
        return cls(d["tag"], d["witness"], d["params"])


# -- counting -----------------------------------------------------------------

@dataclass
class MetricsReport:
    SM: int
    avg_period: float | None
    min_gap: float | None
    delta_hat: float | None = None
    J: float | None = None
    zeno: bool = False


METRICS_HEADER = ["run_id", "trigger", "eps", "h", "etaM", "SM", "avg_period",
                  "min_gap", "delta_hat", "J", "zeno"]


def count_metrics(traj: Trajectory) -> MetricsReport:
    """Sent measurements, average release period and minimum gap."""
    s = np.asarray(traj.s)
    if s.size == 0:
        raise ValueError("empty event log")
    s = s[s <= traj.t[-1] + 1e-12]
    gaps = np.diff(s)
    return MetricsReport(SM=int(s.size),
                         avg_period=float(gaps.mean()) if gaps.size else None,
                         min_gap=float(gaps.min()) if gaps.size else None,
                         zeno=bool(traj.zeno_suspect))


def fit_decay(traj: Trajectory, tail=0.5):
    """Exponential decay rate of ``|x(t)|`` fitted over the last ``tail`` of
    the run (least squares on ``log|x|``)."""
    t = np.asarray(traj.t)
    nrm = np.linalg.norm(traj.x, axis=1)
    keep = t >= t[0] + (1 - tail) * (t[-1] - t[0])
    t, nrm = t[keep], nrm[keep]
    pos = nrm > 0
    if not pos.all():
        if not pos.any() or not pos[0]:
            raise ValueError("state is exactly zero on the fit window")
        cut = int(np.argmin(pos))
        t, nrm = t[:cut], nrm[:cut]
    if t.size < 2:
        raise ValueError("fit window too short")
    slope = np.polyfit(t, np.log(nrm), 1)[0]
    return float(-slope)


# -- certificates -------------------------------------------------------------

@dataclass
class FunctionalSeries:
    t: np.ndarray
    V: np.ndarray            # functional value (V_P on event phases for T1)
    VP: np.ndarray
    r: np.ndarray            # residual, NaN where not evaluated
    scale: float
    continuity: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def max_residual(self):
        r = self.r[np.isfinite(self.r)]
        return float(r.max()) if r.size else -math.inf

    def ok(self, tol):
        return self.max_residual <= tol * self.scale

    def continuity_ok(self, tol=1e-6):
        return bool(np.all(self.continuity <= tol))


def _quad(x, M):
    return np.einsum("ij,jk,ik->i", x, M, x)


def _segments(traj):
    """Index intervals ``[a, b)`` on which the held input is constant."""
    starts = sorted({int(round(t / traj.dt)) for t in traj.tk if t <= traj.t[-1] + 1e-12})
    starts = [0] + [s for s in starts if s > 0]
    ends = starts[1:] + [len(traj.t)]
    return list(zip(starts, ends))


def _centered(V, dt):
    """Derivative of ``V`` at its interior points (NaN at both ends): fourth
    order centered differences where the stencil fits, second order next to
    the ends."""
    L = len(V)
    d = np.full(L, np.nan)
    if L >= 3:
        d[1:-1] = (V[2:] - V[:-2]) / (2 * dt)
    if L >= 5:
        d[2:-2] = (-V[4:] + 8 * V[3:-1] - 8 * V[1:-3] + V[:-4]) / (12 * dt)
    return d


def _running_integral(g, dt, delta):
    """``int_{t_0}^{t_j} e^{2 delta (s - t_j)} g(s) ds`` for every ``j``."""
    s = np.arange(len(g)) * dt
    c = np.exp(2 * delta * s) * g
    F = np.concatenate([[0.0], np.cumsum(dt / 2 * (c[:-1] + c[1:]))])
    return np.exp(-2 * delta * s) * F


def eval_certificate_T1(traj: Trajectory, cert: Certificate) -> FunctionalSeries:
    """Functional of the switching trigger on a delay-free run.

    On sampled-data phases ``V = V_P + V_U + V_X``; on event phases ``V =
    V_P``. The residual ``dV/dt + 2 delta V`` is evaluated inside every phase;
    ``continuity`` holds ``|V - V_P| / (1 + V_P)`` at the phase boundaries.
    """
    if cert.tag != "T1":
        raise CertificateError("expected a T1 certificate")
    if np.any(np.asarray(traj.eta) != 0):
        raise ValueError("T1 certificates apply to delay-free runs")
    W, p = cert.witness, cert.params
    h, delta, dt = float(p["h"]), float(p["delta"]), traj.dt
    P, U, X, X1 = W["P"], W["U"], W["X"], W["X1"]
    Xs = (X + X.T) / 2
    Xbar = np.block([[Xs, X1 - X], [(X1 - X).T, -X1 - X1.T + Xs]])
    plant, x = traj.plant, traj.x
    xd = traj.xdot()
    VP = _quad(x, P)
    V = VP.copy()
    r = np.full(len(x), np.nan)
    Hs = int(round(h / dt))
    last = len(x) - 1
    cont = []
    for a, b in _segments(traj):
        sw = min(a + Hs, b)
        end = min(sw, last)
        idx = np.arange(a, end + 1)              # sampled-data phase incl. right limit
        g = _quad(xd[idx], U)
        if end == b:                             # right limit uses the held input
            left = x[end] @ plant.A.T + traj.u[a] @ plant.B2.T
            if plant.nw:
                left = left + traj.w[end] @ plant.B1.T
            g[-1] = _quad(left[None], U)[0]
        tau = (idx - a) * dt
        xx = np.hstack([x[idx], np.repeat(x[a][None], len(idx), 0)])
        Vs = VP[idx] + (h - tau) * (_running_integral(g, dt, delta) + _quad(xx, Xbar))
        cont.append(abs(Vs[0] - VP[a]) / (1 + VP[a]))
        if end == a + Hs:
            cont.append(abs(Vs[-1] - VP[end]) / (1 + VP[end]))
        V[idx[:-1]] = Vs[:-1]
        if end == last and end < sw:
            V[end] = Vs[-1]
        r[idx[1:-1]] = (_centered(Vs, dt) + 2 * delta * Vs)[1:-1]
        if b - sw >= 2:                          # event phase, V = V_P
            seg = np.arange(sw, min(b, last) + 1)
            r[seg[1:-1]] = (_centered(VP[seg], dt) + 2 * delta * VP[seg])[1:-1]
    scale = 1.0 + float(np.max(V))
    return FunctionalSeries(t=traj.t, V=V, VP=VP, r=r, scale=scale,
                            continuity=np.array(cont))


def _window_integrals(f, dt, pad, a, delta):
    """For every grid index ``i`` (after ``pad`` history rows) return

    ``I(i) = int_{t-a}^{t} e^{2 delta (s-t)} f(s) ds`` and
    ``J(i) = int_{t-a}^{t} (s - t + a) e^{2 delta (s-t)} f(s) ds``
    by the trapezoid rule, through prefix sums; ``a`` must be a multiple of
    ``dt``.
    """
    m = int(round(a / dt))
    N = len(f)
    if m == 0:
        z = np.zeros(N - pad)
        return z, z
    s = (np.arange(N) - pad) * dt
    c = np.exp(2 * delta * s) * f
    F = np.concatenate([[0.0], np.cumsum(dt / 2 * (c[:-1] + c[1:]))])
    sc = s * c
    G = np.concatenate([[0.0], np.cumsum(dt / 2 * (sc[:-1] + sc[1:]))])
    i = np.arange(pad, N)
    t = s[i]
    damp = np.exp(-2 * delta * t)
    dF = F[i] - F[i - m]
    I = damp * dF
    J = damp * (G[i] - G[i - m]) + (a - t) * I
    return I, J


def eval_certificate_T2(traj: Trajectory, cert: Certificate, gamma=None) -> FunctionalSeries:
    """Delayed functional ``V_P + V_S0 + V_S1 + V_R0 + V_R1`` and the
    dissipation residual ``dV/dt + 2 delta V + |z|^2 - gamma^2 (|w|^2 +
    |v(t - tau)|^2)``. The state is taken constant before ``t = 0``; the
    residual is evaluated from the first update instant on."""
    if cert.tag != "T2":
        raise CertificateError("expected a T2 certificate")
    W, p = cert.witness, cert.params
    delta, dt = float(p["delta"]), traj.dt
    eta, tau = float(p["eta_max"]), float(p["tau_max"])
    gamma = float(p.get("gamma", 1.0) if gamma is None else gamma)
    if eta > 0 and dt > eta / 10 * (1 + 1e-9):
        raise ValueError(f"grid too coarse: dt={dt} > eta_max/10; rerun with dt <= {eta / 10}")
    if dt > (tau - eta) / 10 * (1 + 1e-9):
        raise ValueError(f"grid too coarse: dt={dt} > (tau_max - eta_max)/10")
    for a in (eta, tau):
        if abs(a / dt - round(a / dt)) > 1e-6:
            raise ValueError(f"window {a} is not a multiple of dt={dt}")
    P, S0, S1, R0, R1 = W["P"], W["S0"], W["S1"], W["R0"], W["R1"]
    x, xd = traj.x, traj.xdot()
    pad = int(round(tau / dt))
    xe = np.vstack([np.repeat(x[:1], pad, 0), x])
    xde = np.vstack([np.zeros((pad, x.shape[1])), xd])
    w1 = tau - eta                     # outer weight of the R1 term
    f0, f1 = _quad(xe, S0), _quad(xe, S1)
    g0, g1 = _quad(xde, R0), _quad(xde, R1)
    VP = _quad(x, P)
    I_S0, _ = _window_integrals(f0, dt, pad, eta, delta)
    I_S1a, _ = _window_integrals(f1, dt, pad, tau, delta)
    I_S1b, _ = _window_integrals(f1, dt, pad, eta, delta)
    _, J_R0 = _window_integrals(g0, dt, pad, eta, delta)
    _, J_R1t = _window_integrals(g1, dt, pad, tau, delta)
    _, J_R1e = _window_integrals(g1, dt, pad, eta, delta)
    # swapping the order of integration leaves the weight (s - t + tau) on
    # [t - tau, t - eta] and (tau - eta) on [t - eta, t]
    V_R1 = w1 * (J_R1t - J_R1e)
    V = VP + I_S0 + (I_S1a - I_S1b) + eta * J_R0 + V_R1
    supply = np.einsum("ij,ij->i", traj.z, traj.z)
    if traj.w.shape[1]:
        supply = supply - gamma ** 2 * np.einsum("ij,ij->i", traj.w, traj.w)
    if traj.v_delayed.shape[1]:
        supply = supply - gamma ** 2 * np.einsum("ij,ij->i", traj.v_delayed, traj.v_delayed)
    r = np.full(len(x), np.nan)
    t0 = int(round(traj.tk[0] / dt)) if len(traj.tk) else len(x)
    for a, b in _segments(traj):
        a = max(a, t0)
        if b - a < 2:
            continue
        seg = np.arange(a, min(b, len(x) - 1) + 1)
        d = _centered(V[seg], dt)
        r[seg[1:-1]] = (d + 2 * delta * V[seg] + supply[seg])[1:-1]
    return FunctionalSeries(t=traj.t, V=V, VP=VP, r=r, scale=1.0 + float(np.max(V)))


def empirical_l2(traj: Trajectory, gamma):
    """``int_0^T |z|^2 - gamma^2 (|w|^2 + |v(t - tau)|^2) dt`` (trapezoid)."""
    if np.any(traj.x[0] != 0):
        raise ValueError("the gain integral is defined for zero initial state")
    integrand = np.einsum("ij,ij->i", traj.z, traj.z)
    if traj.w.shape[1]:
        integrand = integrand - gamma ** 2 * np.einsum("ij,ij->i", traj.w, traj.w)
    if traj.v_delayed.shape[1]:
        integrand = integrand - gamma ** 2 * np.einsum("ij,ij->i", traj.v_delayed,
                                                       traj.v_delayed)
    return float(np.trapezoid(integrand, traj.t))


@dataclass
class ISSResult:
    ok: bool
    margin: float
    bound: np.ndarray
    V: np.ndarray


def iss_check(traj: Trajectory, cert: Certificate, Delta, tol=1e-4):
    """Check ``V(t) <= V(t0) e^{-2 delta (t-t0)} + gamma^2 Delta^2 (1 -
    e^{-2 delta (t-t0)}) / (2 delta)`` from the first update instant ``t0``.

    ``margin`` is the smallest ``(bound - V) / scale``; the check passes when
    it is at least ``-tol``.
    """
    plant = traj.plant
    if plant.nz and (np.any(plant.C1 != 0) or np.any(plant.D1 != 0)):
        raise ValueError("ISS bound needs C1 = 0 and D1 = 0")
    delta = float(cert.params["delta"])
    if delta <= 0:
        raise ValueError("ISS bound needs delta > 0")
    gamma = float(cert.params.get("gamma", 1.0))
    series = eval_certificate_T2(traj, cert)
    i0 = int(round(traj.tk[0] / traj.dt))
    t = traj.t[i0:] - traj.t[i0]
    V = series.V[i0:]
    ex = np.exp(-2 * delta * t)
    bound = V[0] * ex + gamma ** 2 * Delta ** 2 * (1 - ex) / (2 * delta)
    scale = 1.0 + float(np.max(V))
    margin = float(np.min(bound - V) / scale)
    return ISSResult(ok=margin >= -tol, margin=margin, bound=bound, V=V)


@dataclass
class ZenoReport:
    flagged: bool
    gaps: np.ndarray
    longest_grid_run: int
    longest_decrease: int


def zeno_report(traj: Trajectory, grid_run=50, decrease_run=100):
    """Flag grid-limited or steadily shrinking inter-event times."""
    gaps = np.diff(np.asarray(traj.s))
    at_grid = gaps <= traj.dt * (1 + 1e-9)
    longest = cur = 0
    for flag in at_grid:
        cur = cur + 1 if flag else 0
        longest = max(longest, cur)
    dec = cur = 0
    for j in range(1, len(gaps)):
        cur = cur + 1 if gaps[j] < gaps[j - 1] else 0
        dec = max(dec, cur)
    flagged = bool(traj.zeno_suspect or longest >= grid_run or dec >= decrease_run)
    return ZenoReport(flagged=flagged, gaps=gaps, longest_grid_run=longest,
                      longest_decrease=dec)


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def metrics_row(run_id, traj: Trajectory, report: MetricsReport, eta_max=0.0):
    trig = traj.config.trigger
    return [run_id, trig.kind, getattr(trig, "eps", ""), getattr(trig, "h", ""),
            eta_max, report.SM, report.avg_period, report.min_gap,
            report.delta_hat, report.J, report.zeno]


def metrics_csv(rows):
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(METRICS_HEADER)
    for row in rows:
        wr.writerow([_cell(v) for v in row])
    return buf.getvalue()
