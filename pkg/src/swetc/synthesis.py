"""LMI conditions for the switching and periodic event-triggers, and searches
over the waiting time ``h`` and threshold ``eps``.

Builders return lists of :class:`~swetc.lmi.LMIConstraint`. The first
constraints of each list are the structural matrix inequalities; positivity
of the Lyapunov matrices follows.
"""
from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .lmi import (MatrixVar, assemble, solve_feasibility, sym_blocks, psd, nsd,
                  bmat, Status, FeasibilityResult, LMIError)
from .plant import SimplePlant, PerturbedPlant, Gain, DimensionError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Thm1Params:
    h: float
    eps: float = 0.0
    delta: float = 0.0

    def __post_init__(self):
        if not self.h > 0 or self.eps < 0 or self.delta < 0:
            raise ValueError(f"invalid parameters {self}")


@dataclass(frozen=True)
class Thm2Params:
    gamma: float
    h: float
    eta_max: float = 0.0
    eps: float = 0.0
    delta: float = 0.0

    def __post_init__(self):
        if not (self.gamma > 0 and self.h > 0) or min(self.eta_max, self.eps,
                                                       self.delta) < 0:
            raise ValueError(f"invalid parameters {self}")

    @property
    def tau_max(self):
        return self.h + self.eta_max


def _check_simple(plant, gain):
    if not isinstance(plant, SimplePlant):
        raise DimensionError("expected a SimplePlant (u = -K y)")
    gain.check(plant)


# -- switching event-trigger, no delays -----------------------------------------

def _thm1_vars(n, l):
    P = MatrixVar("P", n, symmetric=True)
    U = MatrixVar("U", n, symmetric=True)
    X, X1, P2, P3, Y1, Y2, Y3 = (MatrixVar(s, n) for s in
                                 ("X", "X1", "P2", "P3", "Y1", "Y2", "Y3"))
    Om = MatrixVar("Omega", l, symmetric=True)
    return P, U, X, X1, P2, P3, Y1, Y2, Y3, Om


def _thm1_blocks(plant, gain, p):
    """Xi and the two Psi matrices shared by the switching and the periodic
    event-trigger conditions."""
    A, B, C, K = plant.A, plant.B, plant.C, gain.K
    n = plant.n
    h, d = p.h, p.delta
    P, U, X, X1, P2, P3, Y1, Y2, Y3, Om = v = _thm1_vars(n, plant.l)
    BKC = B @ K @ C
    Xs = (X + X.T) / 2
    Xi = sym_blocks({(0, 0): P + h * Xs, (0, 1): h * X1 - h * X,
                     (1, 1): -h * X1 - h * X1.T + h * Xs}, [n, n])
    S11 = A.T @ P2 + P2.T @ A + 2 * d * P - Y1 - Y1.T
    S12 = P - P2.T + A.T @ P3 - Y2
    S13 = Y1.T - P2.T @ BKC - Y3
    S22 = -P3 - P3.T
    S23 = Y2.T - P3.T @ BKC
    S33 = Y3 + Y3.T
    Xd = (0.5 - d * h) * (X + X.T)
    X1d = (1 - 2 * d * h) * (X - X1)
    W = X + X.T - 2 * X1 - 2 * X1.T

    def X2d(tau):
        return (0.5 - d * (h - tau)) * W

    psi0 = {(0, 0): S11 - Xd, (0, 1): S12 + h * Xs, (0, 2): S13 + X1d,
            (1, 1): S22 + h * U, (1, 2): S23 - h * (X - X1),
            (2, 2): S33 - X2d(0.0)}
    psi1 = {(0, 0): S11 - Xs, (0, 1): S12, (0, 2): S13 + X - X1,
            (0, 3): h * Y1.T, (1, 1): S22, (1, 2): S23, (1, 3): h * Y2.T,
            (2, 2): S33 - X2d(h), (2, 3): h * Y3.T,
            (3, 3): -h * math.exp(-2 * d * h) * U}
    return v, Xi, psi0, psi1


def _positivity(P, U, Om):
    return [psd(P, strict=True, name="P"), psd(U, strict=True, name="U"),
            psd(Om, name="Omega")]


def build_thm1(plant: SimplePlant, gain: Gain, p: Thm1Params):
    """Stability conditions for the switching event-trigger without delays.

    Returns ``[Xi > 0, Psi0 <= 0, Psi1 <= 0, Phi <= 0, P > 0, U > 0,
    Omega >= 0]``; feasibility certifies exponential stability with decay
    rate ``p.delta``.
    """
    _check_simple(plant, gain)
    (P, U, X, X1, P2, P3, Y1, Y2, Y3, Om), Xi, psi0, psi1 = \
        _thm1_blocks(plant, gain, p)
    n, l = plant.n, plant.l
    A, B, C, K = plant.A, plant.B, plant.C, gain.K
    Acl = A - B @ K @ C
    BK = B @ K
    phi = sym_blocks({
        (0, 0): P2.T @ Acl + Acl.T @ P2 + p.eps * (C.T @ Om @ C) + 2 * p.delta * P,
        (0, 1): P + Acl.T @ P3 - P2.T,
        (0, 2): -(P2.T @ BK),
        (1, 1): -P3.T - P3,
        (1, 2): -(P3.T @ BK),
        (2, 2): -Om,
    }, [n, n, l])
    return [psd(Xi, strict=True, name="Xi"),
            nsd(sym_blocks(psi0, [n] * 3), name="Psi0"),
            nsd(sym_blocks(psi1, [n] * 4), name="Psi1"),
            nsd(phi, name="Phi")] + _positivity(P, U, Om)


def build_remark1(plant: SimplePlant, gain: Gain, p: Thm1Params):
    """Stability conditions for the periodic event-trigger without delays:
    ``Xi > 0`` and the two bordered matrices (sizes ``3n+l`` and ``4n+l``)."""
    _check_simple(plant, gain)
    if p.delta == 0:
        warnings.warn("periodic event-trigger conditions are stated for "
                      "delta > 0; proceeding with delta = 0", stacklevel=2)
    (P, U, X, X1, P2, P3, Y1, Y2, Y3, Om), Xi, psi0, psi1 = \
        _thm1_blocks(plant, gain, p)
    n, l = plant.n, plant.l
    B, C, K = plant.B, plant.C, gain.K
    BK = B @ K
    cons = [psd(Xi, strict=True, name="Xi")]
    for name, psi, k in (("Psi0bar", psi0, 3), ("Psi1bar", psi1, 4)):
        blocks = dict(psi)
        blocks[(0, 0)] = blocks[(0, 0)] + p.eps * (C.T @ Om @ C)
        blocks[(0, k)] = -(P2.T @ BK)
        blocks[(1, k)] = -(P3.T @ BK)
        blocks[(k, k)] = -Om
        cons.append(nsd(sym_blocks(blocks, [n] * k + [l]), name=name))
    return cons + _positivity(P, U, Om)


# -- delays and disturbances ----------------------------------------------------

def _check_perturbed(plant, gain):
    if not isinstance(plant, PerturbedPlant):
        raise DimensionError("expected a PerturbedPlant (u = K y)")
    gain.check(plant)


def _delay_vars(n, l):
    P = MatrixVar("P", n, symmetric=True)
    S0, S1, R0, R1 = (MatrixVar(s, n, symmetric=True)
                      for s in ("S0", "S1", "R0", "R1"))
    G0, G1 = MatrixVar("G0", n), MatrixVar("G1", n)
    Om = MatrixVar("Omega", l, symmetric=True)
    return P, S0, S1, R0, R1, G0, G1, Om


def delay_matrix(plant, gain, v, *, gamma, delta, eps, eta, tau_max, weight1,
                 park_on, trigger):
    """Dissipation matrix for a delayed segment of the closed loop.

    Block order: ``x(t), x(t-eta), x(t-tau_max), x(t-d), e, w, v(t-d), xdot``
    where ``d`` is the current delay. ``park_on="R0"`` covers ``d`` in
    ``[0, eta]`` (the reciprocally convex bound acts on the ``R0`` window),
    ``park_on="R1"`` covers ``d`` in ``[eta, tau_max]``. ``trigger`` adds the
    event-trigger error ``e`` and the ``eps``-weighted trigger inequality;
    without it the ``e`` block is empty. ``weight1`` multiplies the ``R1``
    window (``tau_max - eta``).
    """
    P, S0, S1, R0, R1, G0, G1, Om = v
    A, B1, B2 = plant.A, plant.B1, plant.B2
    C1, C2, D1, D2, K = plant.C1, plant.C2, plant.D1, plant.D2, gain.K
    n, l, nw, nv = plant.n, plant.l, plant.nw, plant.nv
    e0 = math.exp(-2 * delta * eta)
    e1 = math.exp(-2 * delta * tau_max)
    H = eta ** 2 * R0 + weight1 ** 2 * R1
    g2 = gamma ** 2
    DKC, DK, DKD = D1 @ K @ C2, D1 @ K, D1 @ K @ D2
    BKC, BK, BKD = B2 @ K @ C2, B2 @ K, B2 @ K @ D2

    b = {
        (0, 0): A.T @ P + P @ A + 2 * delta * P + S0 - e0 * R0 + C1.T @ C1,
        (0, 3): P @ BKC + C1.T @ DKC,
        (0, 5): P @ B1,
        (0, 6): P @ BKD + C1.T @ DKD,
        (0, 7): A.T @ H,
        (1, 1): e0 * (S1 - S0 - R0) - e1 * R1,
        (2, 2): -e1 * (R1 + S1),
        (3, 3): DKC.T @ DKC,
        (3, 6): DKC.T @ DKD,
        (3, 7): BKC.T @ H,
        (5, 5): -g2 * np.eye(nw),
        (5, 7): B1.T @ H,
        (6, 6): DKD.T @ DKD - g2 * np.eye(nv),
        (6, 7): BKD.T @ H,
        (7, 7): -H,
    }
    if park_on == "R0":
        b[(0, 1)] = e0 * G0
        b[(0, 3)] = b[(0, 3)] + e0 * (R0 - G0)
        b[(1, 2)] = e1 * R1
        b[(1, 3)] = e0 * (R0 - G0.T)
        b[(3, 3)] = b[(3, 3)] + e0 * (G0 + G0.T - 2 * R0)
    elif park_on == "R1":
        b[(0, 1)] = e0 * R0
        b[(1, 2)] = e1 * G1
        b[(1, 3)] = e1 * (R1 - G1)
        b[(2, 3)] = e1 * (R1 - G1.T)
        b[(3, 3)] = b[(3, 3)] + e1 * (G1 + G1.T - 2 * R1)
    else:
        raise ValueError(f"park_on must be 'R0' or 'R1', got {park_on!r}")
    le = 0
    if trigger:
        le = l
        b[(0, 4)] = P @ BK + C1.T @ DK
        b[(3, 3)] = b[(3, 3)] + eps * (C2.T @ Om @ C2)
        b[(3, 4)] = DKC.T @ DK
        b[(3, 6)] = b[(3, 6)] + eps * (C2.T @ Om @ D2)
        b[(4, 4)] = DK.T @ DK - Om
        b[(4, 6)] = DK.T @ DKD
        b[(4, 7)] = BK.T @ H
        b[(6, 6)] = b[(6, 6)] + eps * (D2.T @ Om @ D2)
    return sym_blocks(b, [n, n, n, n, le, nw, nv, n])


def _park(R, G, n):
    return bmat([[R, G], [G.T, R]])


def _delay_positivity(v):
    P, S0, S1, R0, R1, G0, G1, Om = v
    return [psd(P, strict=True, name="P"), psd(S0, name="S0"),
            psd(S1, name="S1"), psd(R0, name="R0"), psd(R1, name="R1"),
            psd(Om, name="Omega")]


def build_thm2(plant: PerturbedPlant, gain: Gain, p: Thm2Params):
    """L2-gain and stability conditions for the switching event-trigger under
    network delays ``eta_k <= eta_max``.

    Returns ``[Psi <= 0, Phi <= 0, Park0 >= 0, Park1 >= 0, P > 0, S0, S1, R0,
    R1, Omega >= 0]``. ``p.delta = 0`` is accepted (all exponential weights
    become 1).
    """
    _check_perturbed(plant, gain)
    n = plant.n
    v = _delay_vars(n, plant.l)
    common = dict(gamma=p.gamma, delta=p.delta, eps=p.eps, eta=p.eta_max,
                  tau_max=p.tau_max, weight1=p.h)
    psi = delay_matrix(plant, gain, v, park_on="R1", trigger=False, **common)
    phi = delay_matrix(plant, gain, v, park_on="R0", trigger=True, **common)
    P, S0, S1, R0, R1, G0, G1, Om = v
    return [nsd(psi, name="Psi"), nsd(phi, name="Phi"),
            psd(_park(R0, G0, n), name="Park0"),
            psd(_park(R1, G1, n), name="Park1")] + _delay_positivity(v)


def build_delay_partitioned_periodic(plant: PerturbedPlant, gain: Gain,
                                     p: Thm2Params, partition: float):
    """Conditions for the periodic event-trigger under delays.

    Every instant is treated as a continuous-trigger phase whose delay is at
    most ``tau_max = h + eta_max``; the delay interval is split at
    ``partition``. Both halves get a dissipation matrix of the delayed
    trigger form: one with the reciprocally convex bound on ``[0,
    partition]`` and one on ``[partition, tau_max]``.
    """
    _check_perturbed(plant, gain)
    tau = p.tau_max
    if not 0 < partition < tau:
        raise ValueError(f"partition must lie in (0, {tau}), got {partition}")
    n = plant.n
    v = _delay_vars(n, plant.l)
    common = dict(gamma=p.gamma, delta=p.delta, eps=p.eps, eta=partition,
                  tau_max=tau, weight1=tau - partition, trigger=True)
    low = delay_matrix(plant, gain, v, park_on="R0", **common)
    high = delay_matrix(plant, gain, v, park_on="R1", **common)
    P, S0, S1, R0, R1, G0, G1, Om = v
    return [nsd(high, name="Psi"), nsd(low, name="Phi"),
            psd(_park(R0, G0, n), name="Park0"),
            psd(_park(R1, G1, n), name="Park1")] + _delay_positivity(v)


# plant-independent constraints are shared between polytope vertices
_VERTEX_FREE = {"Xi", "P", "U", "Omega", "S0", "S1", "R0", "R1", "Park0", "Park1"}


def build_polytopic(vertices, gain, builder, *args, **kwargs):
    """Conditions of ``builder`` imposed at every vertex with shared
    variables; feasibility certifies the whole convex hull."""
    if not vertices:
        raise ValueError("need at least one vertex")
    shapes = [tuple(getattr(v, k).shape for k in ("A", "B", "C")
                    if hasattr(v, k)) if isinstance(v, SimplePlant)
              else v.to_dict()["shapes"] for v in vertices]
    if any(s != shapes[0] for s in shapes[1:]) or \
            any(type(v) is not type(vertices[0]) for v in vertices):
        raise DimensionError("vertex plants differ in dimensions")
    cons = []
    for i, vert in enumerate(vertices):
        for c in builder(vert, gain, *args, **kwargs):
            if i > 0 and c.name in _VERTEX_FREE:
                continue
            if i > 0 or len(vertices) > 1:
                c = type(c)(c.expr, c.sense, c.margin,
                            c.name if c.name in _VERTEX_FREE else f"{c.name}@{i}")
            cons.append(c)
    return cons


def variables_of(constraints):
    seen = {}
    for c in constraints:
        for v in c.expr.variables:
            seen.setdefault(v.name, v)
    return list(seen.values())


# -- feasibility and search ---------------------------------------------------------

@dataclass
class SolverOptions:
    bound: float = 1e4
    depth_tol: float = 1e-4

    def kwargs(self):
        return {"bound": self.bound, "depth_tol": self.depth_tol}


def check(constraints, opts=None) -> FeasibilityResult:
    opts = opts or SolverOptions()
    prob = assemble(constraints, variables_of(constraints))
    return solve_feasibility(prob, **opts.kwargs())


THEOREMS = ("1", "r1", "2", "delpar")

DEFAULT_PARTITIONS = (0.2, 0.35, 0.5, 0.65, 0.8)


def feasibility(theorem, plant, gain, *, h, eps=0.0, delta=0.0, gamma=None,
                eta_max=0.0, partitions=DEFAULT_PARTITIONS, opts=None):
    """Feasibility of one design point; the witness is in the result.

    ``partitions`` (fractions of ``tau_max``) are tried in order for the
    delay-partitioned conditions; the first feasible one wins and is stored
    in ``diagnostics["partition"]``.
    """
    if theorem in ("1", "r1"):
        p = Thm1Params(h=h, eps=eps, delta=delta)
        b = build_thm1 if theorem == "1" else build_remark1
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return check(b(plant, gain, p), opts)
    if theorem not in ("2", "delpar"):
        raise ValueError(f"unknown theorem {theorem!r}; expected one of {THEOREMS}")
    if isinstance(plant, SimplePlant):
        plant, gain = plant.promote(gain)
    gamma = 1.0 if gamma is None else float(gamma)
    # Dividing the conditions by gamma^2 is the same as solving for
    # variables / gamma^2 with C1 / gamma, D1 / gamma and unit gain level;
    # this keeps the -gamma^2 I blocks at unit scale.
    scaled = PerturbedPlant(A=plant.A, B1=plant.B1, B2=plant.B2,
                            C1=plant.C1 / gamma, C2=plant.C2,
                            D1=plant.D1 / gamma, D2=plant.D2)
    p = Thm2Params(gamma=1.0, h=h, eta_max=eta_max, eps=eps, delta=delta)

    def solve(cons):
        r = check(cons, opts)
        if r.witness is not None:
            r.witness = {k: gamma ** 2 * v for k, v in r.witness.items()}
        r.diagnostics["gamma_scale"] = gamma ** 2
        return r

    if theorem == "2":
        return solve(build_thm2(scaled, gain, p))
    best = None
    for frac in partitions:
        r = solve(build_delay_partitioned_periodic(scaled, gain, p,
                                                   frac * p.tau_max))
        r.diagnostics["partition"] = frac * p.tau_max
        if r.feasible:
            return r
        if best is None or r.status is Status.UNDECIDED:
            best = r
    return best


@dataclass
class MaxH:
    h_max: float | None
    status: Status
    result: FeasibilityResult | None
    evaluations: list = field(default_factory=list)
    tol: float = 1e-3
    bracket: tuple = ()

    @property
    def witness(self):
        return self.result.witness if self.result else None


def max_h(feasible_at, tol=1e-3, h_hi0=10.0):
    """Largest certified ``h`` for a predicate ``h -> FeasibilityResult``.

    Halves ``h_hi0`` until a feasible ``h`` is found, bisects down to ``tol``
    (Undecided counts as not feasible) and finally checks ``h + tol``; if that
    is feasible too the search continues upward.
    """
    evals = []

    def f(h):
        r = feasible_at(h)
        evals.append((h, r.status.value))
        return r

    h = h_hi0
    r = f(h)
    while not r.feasible:
        h /= 2
        if h < tol:
            return MaxH(None, Status.INFEASIBLE, None, evals, tol, (0.0, h))
        r = f(h)
    lo, best = h, r
    hi = h * 2 if h < h_hi0 else None
    while True:
        if hi is None:
            # feasible at the initial bracket top: report it
            return MaxH(lo, Status.FEASIBLE, best, evals, tol, (lo, lo))
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            r = f(mid)
            if r.feasible:
                lo, best = mid, r
            else:
                hi = mid
        r = f(lo + tol)
        if not r.feasible:
            return MaxH(lo, Status.FEASIBLE, best, evals, tol, (lo, hi))
        lo, best, hi = lo + tol, r, lo + 2 * tol
        while True:
            r = f(hi)
            if not r.feasible:
                break
            lo, best, hi = hi, r, hi + 2 * tol


@dataclass
class SweepResult:
    rows: list                     # (eps, h_max, status)
    tol: float
    h_hi0: float
    results: list = field(default_factory=list, repr=False)


def sweep_eps(feasible_factory, eps_grid, tol=1e-3, h_hi0=10.0, jobs=1):
    """``max_h`` for every threshold in ``eps_grid``.

    ``feasible_factory(eps)`` returns the ``h -> FeasibilityResult`` predicate.
    Rows are sorted by ``eps``; a failed row carries status ``error``.
    """
    grid = sorted(float(e) for e in eps_grid)

    def one(eps):
        try:
            return max_h(feasible_factory(eps), tol=tol, h_hi0=h_hi0)
        except (LMIError, ValueError, np.linalg.LinAlgError) as exc:
            log.warning("sweep row eps=%g failed: %s", eps, exc)
            return exc

    if jobs > 1 and len(grid) > 1:
        with ThreadPoolExecutor(jobs) as ex:
            out = list(ex.map(one, grid))
    else:
        out = [one(e) for e in grid]
    rows = []
    for eps, res in zip(grid, out):
        if isinstance(res, Exception):
            rows.append((eps, None, "error"))
        else:
            rows.append((eps, res.h_max, res.status.value))
    return SweepResult(rows, tol, h_hi0, out)
