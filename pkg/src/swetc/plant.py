"""Plant, gain, trigger, delay and disturbance data objects.

Two feedback conventions coexist, one per plant flavour:

* ``SimplePlant`` (A, B, C) is closed by ``u = -K y(s_k)``;
* ``PerturbedPlant`` (A, B1, B2, C1, C2, D1, D2) is closed by
  ``u = K y(s_k)``.

``SimplePlant.promote`` converts between the two, flipping the sign of the
gain so both describe the same closed loop.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DimensionError(ValueError):
    pass


def _mat(value, name, shape=None):
    a = np.array(value, dtype=float)
    if a.ndim == 1 and a.size == 0 and shape is not None:
        a = a.reshape(shape)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    if a.ndim != 2:
        raise DimensionError(f"{name}: expected a matrix, got ndim={a.ndim}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name}: non-finite entry")
    a.setflags(write=False)
    return a


def _frozen(obj, **arrays):
    for k, v in arrays.items():
        object.__setattr__(obj, k, v)


@dataclass(frozen=True, eq=False)
class SimplePlant:
    """Undisturbed plant ``dx/dt = A x + B u, y = C x``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        A, B, C = _mat(self.A, "A"), _mat(self.B, "B"), _mat(self.C, "C")
        n = A.shape[0]
        if n < 1 or A.shape != (n, n):
            raise DimensionError(f"A: must be square with n >= 1, got {A.shape}")
        if B.shape[0] != n or B.shape[1] < 1:
            raise DimensionError(f"B: expected {n}x m (m >= 1), got {B.shape}")
        if C.shape[1] != n or C.shape[0] < 1:
            raise DimensionError(f"C: expected l x {n} (l >= 1), got {C.shape}")
        _frozen(self, A=A, B=B, C=C)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def l(self):
        return self.C.shape[0]

    def promote(self, gain: Gain | None = None):
        """Embed as a PerturbedPlant with empty disturbance channels.

        Returns the perturbed plant, or ``(plant, gain)`` with the gain sign
        flipped to the ``u = K y`` convention when ``gain`` is given.
        """
        p = PerturbedPlant(A=self.A, B2=self.B, C2=self.C)
        if gain is None:
            return p
        return p, Gain(-gain.K)

    def __eq__(self, other):
        return (isinstance(other, SimplePlant)
                and all(np.array_equal(getattr(self, k), getattr(other, k))
                        for k in "ABC"))

    def to_dict(self):
        return {"A": self.A.tolist(), "B": self.B.tolist(), "C": self.C.tolist()}


@dataclass(frozen=True, eq=False)
class PerturbedPlant:
    """Plant with disturbance ``w``, measurement noise ``v`` and controlled
    output ``z``::

        dx/dt = A x + B1 w + B2 u
        z     = C1 x + D1 u
        y     = C2 x + D2 v

    Missing channels are stored as matrices with a zero dimension.
    """

    A: np.ndarray
    B2: np.ndarray
    C2: np.ndarray
    B1: np.ndarray | None = None
    C1: np.ndarray | None = None
    D1: np.ndarray | None = None
    D2: np.ndarray | None = None

    def __post_init__(self):
        A = _mat(self.A, "A")
        n = A.shape[0]
        if n < 1 or A.shape != (n, n):
            raise DimensionError(f"A: must be square with n >= 1, got {A.shape}")
        B2 = _mat(self.B2, "B2")
        C2 = _mat(self.C2, "C2")
        if B2.shape[0] != n or B2.shape[1] < 1:
            raise DimensionError(f"B2: expected {n} x m (m >= 1), got {B2.shape}")
        if C2.shape[1] != n or C2.shape[0] < 1:
            raise DimensionError(f"C2: expected l x {n} (l >= 1), got {C2.shape}")
        m, l = B2.shape[1], C2.shape[0]
        B1 = _mat(np.zeros((n, 0)) if self.B1 is None else self.B1, "B1", (n, 0))
        C1 = _mat(np.zeros((0, n)) if self.C1 is None else self.C1, "C1", (0, n))
        nz = C1.shape[0]
        D1 = _mat(np.zeros((nz, m)) if self.D1 is None else self.D1, "D1", (nz, m))
        D2 = _mat(np.zeros((l, 0)) if self.D2 is None else self.D2, "D2", (l, 0))
        if B1.shape[0] != n:
            raise DimensionError(f"B1: expected {n} rows, got {B1.shape}")
        if C1.shape[1] != n:
            raise DimensionError(f"C1: expected {n} columns, got {C1.shape}")
        if D1.shape != (nz, m):
            raise DimensionError(f"D1: expected {(nz, m)}, got {D1.shape}")
        if D2.shape[0] != l:
            raise DimensionError(f"D2: expected {l} rows, got {D2.shape}")
        _frozen(self, A=A, B1=B1, B2=B2, C1=C1, C2=C2, D1=D1, D2=D2)

    n = property(lambda self: self.A.shape[0])
    m = property(lambda self: self.B2.shape[1])
    l = property(lambda self: self.C2.shape[0])
    nw = property(lambda self: self.B1.shape[1])
    nv = property(lambda self: self.D2.shape[1])
    nz = property(lambda self: self.C1.shape[0])

    _KEYS = ("A", "B1", "B2", "C1", "C2", "D1", "D2")

    def __eq__(self, other):
        return (isinstance(other, PerturbedPlant)
                and all(getattr(self, k).shape == getattr(other, k).shape
                        and np.array_equal(getattr(self, k), getattr(other, k))
                        for k in self._KEYS))

    def to_dict(self):
        # 0-row matrices lose their column count in JSON; store shapes too
        d = {k: getattr(self, k).tolist() for k in self._KEYS}
        d["shapes"] = {k: list(getattr(self, k).shape) for k in self._KEYS}
        return d

    def vertex_combination(self, other: PerturbedPlant, lam: float):
        """Convex combination ``(1-lam)*self + lam*other`` of A, B1, B2."""
        return PerturbedPlant(
            A=(1 - lam) * self.A + lam * other.A,
            B1=(1 - lam) * self.B1 + lam * other.B1,
            B2=(1 - lam) * self.B2 + lam * other.B2,
            C1=self.C1, C2=self.C2, D1=self.D1, D2=self.D2)


@dataclass(frozen=True, eq=False)
class Gain:
    K: np.ndarray

    def __post_init__(self):
        _frozen(self, K=_mat(self.K, "K"))

    def check(self, plant):
        m = plant.m
        l = plant.l
        if self.K.shape != (m, l):
            raise DimensionError(f"K: expected {(m, l)}, got {self.K.shape}")
        return self

    def __eq__(self, other):
        return isinstance(other, Gain) and np.array_equal(self.K, other.K)


def closed_loop_hurwitz(plant: SimplePlant, gain: Gain) -> bool:
    """True iff ``A - B K C`` has all eigenvalues in the open left half-plane."""
    gain.check(plant)
    Acl = plant.A - plant.B @ gain.K @ plant.C
    return bool(np.max(np.linalg.eigvals(Acl).real) < 0)


# -- trigger policies -------------------------------------------------------

def _check_omega(Omega, l=None):
    Om = np.array(Omega, dtype=float)
    if Om.ndim == 0:
        Om = Om.reshape(1, 1)
    if Om.ndim != 2 or Om.shape[0] != Om.shape[1]:
        raise DimensionError(f"Omega must be square, got {Om.shape}")
    if l is not None and Om.shape[0] != l:
        raise DimensionError(f"Omega: expected {l}x{l}, got {Om.shape}")
    Om = (Om + Om.T) / 2
    scale = np.linalg.norm(Om, 2) if Om.size else 0.0
    if Om.size and np.linalg.eigvalsh(Om).min() < -1e-10 * scale:
        raise ValueError("Omega must be positive semidefinite")
    Om.setflags(write=False)
    return Om


def _check_h(h):
    if not h > 0:
        raise ValueError(f"waiting time h must be positive, got {h}")
    return float(h)


def _check_eps(eps):
    if not eps >= 0:
        raise ValueError(f"threshold eps must be nonnegative, got {eps}")
    return float(eps)


@dataclass(frozen=True, eq=False)
class Periodic:
    h: float
    kind = "periodic"

    def __post_init__(self):
        _frozen(self, h=_check_h(self.h))


@dataclass(frozen=True, eq=False)
class ContinuousET:
    eps: float
    Omega: np.ndarray
    kind = "continuous"

    def __post_init__(self):
        _frozen(self, eps=_check_eps(self.eps), Omega=_check_omega(self.Omega))


@dataclass(frozen=True, eq=False)
class PeriodicET:
    h: float
    eps: float
    Omega: np.ndarray
    kind = "periodic-et"

    def __post_init__(self):
        _frozen(self, h=_check_h(self.h), eps=_check_eps(self.eps),
                Omega=_check_omega(self.Omega))


@dataclass(frozen=True, eq=False)
class SwitchingET:
    """Wait ``h`` after each send, then send at the first instant where
    ``(y - y_k)' Omega (y - y_k) >= eps * y' Omega y``."""

    h: float
    eps: float
    Omega: np.ndarray
    kind = "switching"

    def __post_init__(self):
        _frozen(self, h=_check_h(self.h), eps=_check_eps(self.eps),
                Omega=_check_omega(self.Omega))

    def fires(self, y, y_sent):
        e = y - y_sent
        return e @ self.Omega @ e >= self.eps * (y @ self.Omega @ y)


def trigger_from_dict(d, l=None):
    kind = d["kind"]
    Om = d.get("Omega")
    if Om is None and kind != "periodic":
        if l is None:
            raise ValueError("Omega missing and output dimension unknown")
        Om = np.eye(l)
    if kind == "periodic":
        return Periodic(d["h"])
    if kind == "continuous":
        return ContinuousET(d["eps"], Om)
    if kind in ("periodic-et", "periodic_et"):
        return PeriodicET(d["h"], d["eps"], Om)
    if kind == "switching":
        return SwitchingET(d["h"], d["eps"], Om)
    raise ValueError(f"unknown trigger kind {kind!r}")


# -- delays -----------------------------------------------------------------

@dataclass(frozen=True)
class DelayModel:
    """Network-induced delays ``0 <= eta_k <= eta_max``.

    ``mode`` is ``"zero"``, ``"constant"`` (every packet delayed by
    ``value``) or ``"random"``. Random delays are drawn so that the update
    instants ``t_k = s_k + eta_k`` never decrease: given the previous delay
    and the gap ``s_{k+1} - s_k``, the next delay is uniform on
    ``[max(0, eta_k - gap), eta_max]``.
    """

    eta_max: float = 0.0
    mode: str = "zero"
    value: float = 0.0

    def __post_init__(self):
        if self.eta_max < 0:
            raise ValueError("eta_max must be nonnegative")
        if self.mode not in ("zero", "constant", "random"):
            raise ValueError(f"unknown delay mode {self.mode!r}")
        if self.mode == "constant" and not 0 <= self.value <= self.eta_max:
            raise ValueError("constant delay must lie in [0, eta_max]")

    def sampler(self, seed=0):
        return _DelaySampler(self, np.random.default_rng(seed))


class _DelaySampler:
    def __init__(self, model, rng):
        self.model = model
        self.rng = rng
        self.last = None

    def next(self, gap=None):
        """Delay of the next packet; ``gap`` is its distance to the previous send."""
        m = self.model
        if m.mode == "zero":
            eta = 0.0
        elif m.mode == "constant":
            eta = m.value
        else:
            lo = 0.0 if self.last is None else max(0.0, self.last - gap)
            eta = float(self.rng.uniform(lo, m.eta_max)) if lo < m.eta_max else m.eta_max
        self.last = eta
        return eta


# -- disturbances -----------------------------------------------------------

@dataclass(frozen=True)
class Signal:
    """Scalar-channel signal preset, broadcast to ``dim`` channels.

    ``kind``: ``zero``, ``step``, ``decaying-sine`` (``amp * exp(-decay t)
    sin(freq t)``) or ``noise`` (band-limited: a seeded sum of sinusoids with
    frequencies up to ``freq``, ``|value| <= amp`` on every channel).
    """

    kind: str = "zero"
    amp: float = 0.0
    freq: float = 1.0
    decay: float = 0.0
    seed: int = 0
    components: int = 8

    def __post_init__(self):
        if self.kind not in ("zero", "step", "decaying-sine", "noise"):
            raise ValueError(f"unknown signal kind {self.kind!r}")

    def sampler(self, dim):
        if dim == 0 or self.kind == "zero" or self.amp == 0:
            z = np.zeros(dim)
            return lambda t: z
        a = self.amp
        if self.kind == "step":
            v = np.full(dim, a)
            return lambda t: v if t >= 0 else np.zeros(dim)
        if self.kind == "decaying-sine":
            one = np.ones(dim)
            f, d = self.freq, self.decay
            return lambda t: one * (a * np.exp(-d * t) * np.sin(f * t))
        rng = np.random.default_rng(self.seed)
        k = self.components
        freqs = rng.uniform(0.0, self.freq, size=(dim, k))
        phases = rng.uniform(0.0, 2 * np.pi, size=(dim, k))
        weights = rng.uniform(0.5, 1.0, size=(dim, k))
        weights *= a / weights.sum(axis=1, keepdims=True)
        return lambda t: np.sum(weights * np.sin(freqs * t + phases), axis=1)

    def sup(self):
        return 0.0 if self.kind == "zero" else abs(self.amp)


@dataclass(frozen=True)
class Disturbance:
    """Disturbance ``w`` and measurement noise ``v``; ``bound`` (if set) is a
    declared bound on ``|(w(t), v(t))|``."""

    w: Signal = field(default_factory=Signal)
    v: Signal = field(default_factory=Signal)
    bound: float | None = None

    def __post_init__(self):
        if self.bound is not None and self.bound < 0:
            raise ValueError("bound must be nonnegative")

    def sup_norm(self, nw, nv):
        """Upper bound on ``|(w, v)|`` implied by the channel amplitudes."""
        return float(np.sqrt(nw * self.w.sup() ** 2 + nv * self.v.sup() ** 2))

    @property
    def is_zero(self):
        return self.w.sup() == 0 and self.v.sup() == 0

    @classmethod
    def from_dict(cls, d):
        if d is None:
            return cls()
        return cls(w=Signal(**d.get("w", {})), v=Signal(**d.get("v", {})),
                   bound=d.get("bound"))


# -- config documents ---------------------------------------------------------

_SIMPLE_KEYS = {"A", "B", "C"}


def _read(source):
    if isinstance(source, dict):
        return source
    if isinstance(source, str) and source.lstrip().startswith("{"):
        return json.loads(source)
    return json.loads(Path(source).read_text())


def load_plant(source, promote=False):
    """Build a plant from a JSON document (path, string or dict).

    Documents with ``A, B, C`` give a SimplePlant; ``A, B2, C2`` (plus any of
    ``B1, C1, D1, D2``) give a PerturbedPlant. With ``promote=True`` a simple
    plant is embedded as a PerturbedPlant.
    """
    doc = _read(source)
    shapes = doc.get("shapes", {})

    def get(key):
        if key not in doc:
            return None
        a = np.array(doc[key], dtype=float)
        if key in shapes:
            a = a.reshape(shapes[key])
        return a

    if _SIMPLE_KEYS <= doc.keys():
        plant = SimplePlant(get("A"), get("B"), get("C"))
        return plant.promote() if promote else plant
    if "B2" in doc and "C2" in doc:
        return PerturbedPlant(A=get("A"), B1=get("B1"), B2=get("B2"),
                              C1=get("C1"), C2=get("C2"), D1=get("D1"),
                              D2=get("D2"))
    raise DimensionError("document lacks B/C (simple) or B2/C2 (perturbed)")


def load_config(source):
    """Plant plus gain from one document; returns ``(plant, gain)``."""
    doc = _read(source)
    plant = load_plant(doc)
    if "K" not in doc:
        raise KeyError("K")
    return plant, Gain(doc["K"]).check(plant)


def dump_config(plant, gain=None):
    d = plant.to_dict()
    if gain is not None:
        d["K"] = gain.K.tolist()
    return json.dumps(d)
