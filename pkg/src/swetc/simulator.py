"""Fixed-step simulation of the networked loop under the trigger policies.

Everything lives on the grid ``t_i = i * dt``. Waiting times and delays are
rounded to the grid (waiting times up, delays down), so send instants,
update instants and the switching signal are all grid points and the run is
bitwise reproducible for a given ``(config, seed)``.
"""

from __future__ import annotations

import csv
import io
import math
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .plant import (ContinuousET, DelayModel, Disturbance, Gain, Periodic,
                    PeriodicET, PerturbedPlant, SimplePlant, SwitchingET)

__all__ = ["SimConfig", "Trajectory", "SimulationError", "integrate_step",
           "run", "run_batch", "fictitious_delay", "circle_ics",
           "replay_switched", "as_perturbed", "BatchSummary"]

ZENO_RUN = 50


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimConfig:
    trigger: object
    dt: float = 1e-3
    T_f: float = 20.0
    x0: tuple = ()
    seed: int = 0
    delay: DelayModel = field(default_factory=DelayModel)
    disturbance: Disturbance = field(default_factory=Disturbance)

    def __post_init__(self):
        if not self.dt > 0 or not self.T_f > 0:
            raise ValueError("dt and T_f must be positive")
        h = getattr(self.trigger, "h", None)
        if h is not None and self.dt > h / 20 * (1 + 1e-9):
            raise ValueError(f"dt={self.dt} exceeds h/20={h / 20}")
        object.__setattr__(self, "x0", tuple(float(v) for v in np.ravel(self.x0)))

    def replace(self, **changes):
        d = {k: getattr(self, k) for k in
             ("trigger", "dt", "T_f", "x0", "seed", "delay", "disturbance")}
        d.update(changes)
        return SimConfig(**d)


@dataclass
class Trajectory:
    """Sampled run. Row ``i`` of every per-sample array belongs to ``t[i]``;
    ``u[i]`` is the input held on ``[t[i], t[i+1])``."""

    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    y: np.ndarray
    z: np.ndarray
    w: np.ndarray
    v: np.ndarray
    s: np.ndarray            # send instants s_k
    eta: np.ndarray          # delays eta_k (grid-rounded)
    tk: np.ndarray           # update instants t_k = s_k + eta_k
    y_sent: np.ndarray       # transmitted outputs y(s_k)
    chi: np.ndarray
    tau: np.ndarray          # t - s_k on chi = 1, eta_bar(t) on chi = 0
    e: np.ndarray            # y(s_k) - y(t - eta_bar(t)) on chi = 0, else 0
    v_delayed: np.ndarray    # v(t - tau(t)), the noise seen by the actuator
    active: np.ndarray       # index k of the update in force (-1 before t_0)
    dt: float
    h: float | None
    config: SimConfig
    plant: PerturbedPlant | None = None
    gain: Gain | None = None
    zeno_suspect: bool = False

    def xdot(self):
        """Right-hand side ``A x + B1 w + B2 u`` on the grid (right limits)."""
        p = self.plant
        out = self.x @ p.A.T + self.u @ p.B2.T
        if p.nw:
            out = out + self.w @ p.B1.T
        return out

    @property
    def sent(self):
        return len(self.s)

    def trajectory_csv(self):
        n, m, nz = self.x.shape[1], self.u.shape[1], self.z.shape[1]
        head = (["t"] + [f"x{i + 1}" for i in range(n)] + [f"u{i + 1}" for i in range(m)]
                + [f"z{i + 1}" for i in range(nz)] + ["chi"])
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(head)
        for i in range(len(self.t)):
            wr.writerow([_fmt(self.t[i])] + [_fmt(v) for v in self.x[i]]
                        + [_fmt(v) for v in self.u[i]] + [_fmt(v) for v in self.z[i]]
                        + [int(self.chi[i])])
        return buf.getvalue()

    def events_csv(self):
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["k", "s_k", "eta_k", "t_k"])
        for k in range(len(self.s)):
            wr.writerow([k, _fmt(self.s[k]), _fmt(self.eta[k]), _fmt(self.tk[k])])
        return buf.getvalue()


def _fmt(v):
    return repr(float(v))


def as_perturbed(plant, gain):
    """Return ``(PerturbedPlant, Gain)`` with the ``u = K y`` convention."""
    if isinstance(plant, SimplePlant):
        return plant.promote(gain)
    if not isinstance(plant, PerturbedPlant):
        raise TypeError(f"expected a plant, got {type(plant).__name__}")
    gain.check(plant)
    return plant, gain


def integrate_step(x, u_held, w, plant, dt, t=0.0):
    """One classical RK4 step of ``x' = A x + B1 w(t) + B2 u_held``.

    ``w`` is a callable of time (evaluated at the stage times) or a constant
    vector.
    """
    x = np.asarray(x, dtype=float)
    wf = w if callable(w) else (lambda _t, c=np.asarray(w, float): c)
    A, B1, B2 = plant.A, plant.B1, plant.B2
    bu = B2 @ np.asarray(u_held, dtype=float)

    def f(tt, xx):
        return A @ xx + B1 @ wf(tt) + bu

    with np.errstate(over="ignore", invalid="ignore"):
        k1 = f(t, x)
        k2 = f(t + dt / 2, x + dt / 2 * k1)
        k3 = f(t + dt / 2, x + dt / 2 * k2)
        k4 = f(t + dt, x + dt * k3)
        out = x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise SimulationError(f"non-finite state after step at t={t}")
    return out


def _step_matrices(plant, dt):
    """RK4 step as ``x+ = Ad x + Bu u + W0 w(t) + Wm w(t+dt/2) + W1 w(t+dt)``.

    Obtained by pushing unit vectors through ``integrate_step``; the map is
    linear so this is the same step up to rounding.
    """
    n, m, nw = plant.n, plant.m, plant.nw
    zero_u, zero_w = np.zeros(m), np.zeros(nw)
    Ad = np.column_stack([integrate_step(c, zero_u, zero_w, plant, dt) for c in np.eye(n)]) \
        if n else np.zeros((0, 0))
    Bu = np.column_stack([integrate_step(np.zeros(n), c, zero_w, plant, dt)
                          for c in np.eye(m)]).reshape(n, m)
    W = []
    for stage in (0.0, dt / 2, dt):
        cols = []
        for j in range(nw):
            unit = np.eye(nw)[j]
            cols.append(integrate_step(np.zeros(n), zero_u,
                                       lambda tt, s=stage, c=unit: c if tt == s else zero_w,
                                       plant, dt))
        W.append(np.column_stack(cols).reshape(n, nw) if nw else np.zeros((n, 0)))
    return Ad, Bu, W[0], W[1], W[2]


def fictitious_delay(t, s_k, s_next, eta_k, eta_next, h):
    """Linear interpolation of the delay over ``[t_k + h, t_{k+1})``."""
    t_k, t_next = s_k + eta_k, s_next + eta_next
    lo = min(t_k + h, t_next)
    span = t_next - t_k - h
    if span <= 0:
        raise ValueError("no event-trigger phase: t_{k+1} <= t_k + h")
    if not lo - 1e-12 <= t < t_next:
        raise ValueError(f"t={t} outside [{lo}, {t_next})")
    return ((t_next - t) * eta_k + (t - t_k - h) * eta_next) / span


def _signal_grid(signal, dim, times):
    if dim == 0:
        return np.zeros((len(times), 0))
    if signal.kind == "zero" or signal.amp == 0:
        return np.zeros((len(times), dim))
    f = signal.sampler(dim)
    return np.array([f(t) for t in times], dtype=float).reshape(len(times), dim)


def _waiting(trigger, dt):
    h = getattr(trigger, "h", None)
    return None if h is None else max(1, math.ceil(h / dt - 1e-9))


def run(plant, gain: Gain, config: SimConfig) -> Trajectory:
    """Simulate one run; see the module docstring for the grid conventions."""
    plant, gain = as_perturbed(plant, gain)
    trig = config.trigger
    dt = config.dt
    N = int(round(config.T_f / dt))
    n, l = plant.n, plant.l
    x0 = np.asarray(config.x0 if config.x0 else np.zeros(n), dtype=float)
    if x0.shape != (n,):
        raise ValueError(f"x0 has {x0.size} entries, plant has n={n}")
    Omega = getattr(trig, "Omega", None)
    if Omega is not None and Omega.shape != (l, l):
        raise ValueError(f"Omega must be {l}x{l}")

    times = np.arange(N + 1) * dt
    half = np.arange(2 * N + 1) * (dt / 2)
    wh = _signal_grid(config.disturbance.w, plant.nw, half)
    vg = _signal_grid(config.disturbance.v, plant.nv, times)
    Ad, Bu, W0, Wm, W1 = _step_matrices(plant, dt)
    K, C2, D2 = gain.K, plant.C2, plant.D2
    H = _waiting(trig, dt)
    eps = getattr(trig, "eps", 0.0)
    delays = config.delay.sampler(config.seed)

    x = np.empty((N + 1, n))
    y = np.empty((N + 1, l))
    u = np.zeros((N + 1, plant.m))
    x[0] = x0
    s_idx, eta_idx, y_sent = [], [], []
    pending = deque()
    u_now = np.zeros(plant.m)
    next_check = 0
    short_run = 0
    zeno = False
    last = N

    for i in range(N + 1):
        yi = C2 @ x[i] + D2 @ vg[i]
        y[i] = yi
        fire = False
        if not s_idx:
            fire = True
        elif i >= next_check:
            ys = y_sent[-1]
            if isinstance(trig, Periodic):
                fire = True
            else:
                e = yi - ys
                lhs, rhs = e @ Omega @ e, eps * (yi @ Omega @ yi)
                fire = lhs > rhs if isinstance(trig, PeriodicET) else lhs >= rhs
            if not fire and isinstance(trig, PeriodicET):
                next_check += H
        if fire:
            gap = (i - s_idx[-1]) * dt if s_idx else None
            eta = delays.next(gap)
            d = int(math.floor(eta / dt + 1e-9))
            if s_idx and i - s_idx[-1] == 1:
                short_run += 1
            else:
                short_run = 0
            s_idx.append(i)
            eta_idx.append(d)
            y_sent.append(yi.copy())
            pending.append((i + d, len(s_idx) - 1))
            next_check = i + (H if H is not None else 1)
            if isinstance(trig, ContinuousET) and short_run >= ZENO_RUN:
                zeno = True
        while pending and pending[0][0] <= i:
            _, k = pending.popleft()
            u_now = K @ y_sent[k]
        u[i] = u_now
        if zeno:
            last = i
            break
        if i < N:
            xn = Ad @ x[i] + Bu @ u_now
            if plant.nw:
                xn = xn + W0 @ wh[2 * i] + Wm @ wh[2 * i + 1] + W1 @ wh[2 * i + 2]
            if not np.all(np.isfinite(xn)):
                raise SimulationError(f"non-finite state at t={times[i + 1]}")
            x[i + 1] = xn

    sl = slice(0, last + 1)
    traj = _assemble(plant, gain, config, times[sl], x[sl], u[sl], y[sl],
                     wh[0:2 * last + 1:2], vg[sl], np.array(s_idx), np.array(eta_idx),
                     np.array(y_sent).reshape(len(s_idx), l), H)
    traj.zeno_suspect = zeno
    return traj


def _assemble(plant, gain, config, t, x, u, y, w, v, s_idx, eta_idx, y_sent, H):
    dt = config.dt
    M = len(t)
    tk_idx = s_idx + eta_idx
    h_steps = H if H is not None else 0
    active = np.full(M, -1)
    for k, j in enumerate(tk_idx):
        if j < M:
            active[j:] = k
    chi = np.ones(M, dtype=int)
    tau = np.full(M, np.nan)
    e = np.zeros((M, plant.l))
    v_del = np.zeros((M, plant.nv))
    for k in range(len(s_idx)):
        a = tk_idx[k]
        if a >= M:
            break
        b = tk_idx[k + 1] if k + 1 < len(s_idx) else M
        b = min(b, M)
        if b <= a:
            continue
        sw = min(a + h_steps, b)
        idx = np.arange(a, sw)
        tau[idx] = (idx - s_idx[k]) * dt
        v_del[idx] = v[s_idx[k]]
        if sw < b:
            idx = np.arange(sw, b)
            chi[idx] = 0
            if k + 1 < len(s_idx):
                span = tk_idx[k + 1] - a - h_steps
                eb = ((tk_idx[k + 1] - idx) * eta_idx[k] + (idx - a - h_steps) * eta_idx[k + 1]) / span
            else:
                eb = np.full(len(idx), float(eta_idx[k]))
            tau[idx] = eb * dt
            src = idx - eb
            e[idx] = y_sent[k] - _interp_rows(y, src)
            if plant.nv:
                v_del[idx] = _interp_rows(v, src)
    z = x @ plant.C1.T + u @ plant.D1.T if plant.nz else np.zeros((M, 0))
    return Trajectory(t=t, x=x, u=u, y=y, z=z, w=w, v=v,
                      s=s_idx * dt, eta=eta_idx * dt, tk=tk_idx * dt, y_sent=y_sent,
                      chi=chi, tau=tau, e=e, v_delayed=v_del, active=active, dt=dt,
                      h=None if H is None else H * dt, config=config,
                      plant=plant, gain=gain)


def _interp_rows(arr, pos):
    """Linear interpolation of grid rows at fractional indices ``pos``."""
    lo = np.clip(np.floor(pos).astype(int), 0, len(arr) - 1)
    hi = np.clip(lo + 1, 0, len(arr) - 1)
    frac = (pos - lo)[:, None]
    return arr[lo] * (1 - frac) + arr[hi] * frac


def replay_switched(plant, gain, traj: Trajectory):
    """Re-integrate a delay-free run in its switched form.

    On ``chi = 1`` phases the right-hand side is written with the sampling
    delay, ``(A + B2 K C2) x + B2 K C2 (x(s_k) - x)``; on ``chi = 0`` phases
    with the event error, ``(A + B2 K C2) x + B2 K e`` where ``e = y(s_k) -
    y(t)`` is recomputed from the stage state. Only the event sequence is
    taken from ``traj``; the state is integrated independently.
    """
    plant, gain = as_perturbed(plant, gain)
    if np.any(traj.eta != 0):
        raise ValueError("replay_switched needs a delay-free run")
    if plant.nw or plant.nv:
        if not (np.all(traj.w == 0) and np.all(traj.v == 0)):
            raise ValueError("replay_switched needs an undisturbed run")
    A, B, C, K = plant.A, plant.B2, plant.C2, gain.K
    Acl, BK = A + B @ K @ C, B @ K
    dt = traj.dt
    x = np.empty_like(traj.x)
    x[0] = traj.x[0]
    for i in range(len(traj.t) - 1):
        k = traj.active[i]
        xs = x[int(round(traj.s[k] / dt))]
        if traj.chi[i] == 1:
            def f(xx):
                return Acl @ xx + BK @ C @ (xs - xx)
        else:
            def f(xx):
                return Acl @ xx + BK @ (C @ xs - C @ xx)
        xi = x[i]
        k1 = f(xi)
        k2 = f(xi + dt / 2 * k1)
        k3 = f(xi + dt / 2 * k2)
        k4 = f(xi + dt * k3)
        x[i + 1] = xi + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


def circle_ics(count=30, radius=10.0):
    """Initial states ``radius * (cos(2 pi k / count), sin(2 pi k / count))``."""
    k = np.arange(1, count + 1)
    ang = 2 * np.pi * k / count
    return [(radius * math.cos(a), radius * math.sin(a)) for a in ang]


@dataclass
class BatchSummary:
    runs: list
    failures: list

    @property
    def mean_sm(self):
        return float(np.mean([r.sent for r in self.runs])) if self.runs else float("nan")


def run_batch(plant, gain, base: SimConfig, ics, seeds=None, jobs=1, keep=True):
    """One run per initial condition; run ``j`` uses ``seeds[j]`` or
    ``base.seed + j``. Failures are collected rather than raised."""
    ics = list(ics)
    if not ics:
        raise ValueError("empty initial-condition set")
    if seeds is None:
        seeds = [base.seed + j for j in range(len(ics))]
    cfgs = [base.replace(x0=ic, seed=sd) for ic, sd in zip(ics, seeds)]

    def one(cfg):
        try:
            return run(plant, gain, cfg), None
        except Exception as exc:  # noqa: BLE001 - reported per run
            return None, (cfg, exc)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, cfgs))
    else:
        results = [one(c) for c in cfgs]
    runs = [r for r, _ in results if r is not None]
    fails = [f for _, f in results if f is not None]
    return BatchSummary(runs=runs, failures=fails)
