"""Affine matrix expressions, linear matrix inequalities and a semidefinite
feasibility backend.

Expressions are affine in named matrix variables: a constant plus a sum of
terms ``c * L @ V @ R`` (or ``V.T`` in place of ``V``). Block matrices are
composed with :func:`bmat`; constraints are assembled into the standard form
``G0 + sum_k x_k G_k >= 0`` (one PSD cone per constraint) and handed to
Clarabel.

Feasibility is decided by the *depth* of the constraint set: the solver
maximises ``t`` such that every constraint holds with ``t * I`` to spare while
every scalar unknown stays in ``[-bound, bound]``. Only a depth comfortably
above the solver's own accuracy is reported as Feasible, and the witness is
re-checked by exact eigenvalue evaluation.
"""
from __future__ import annotations

import enum
import logging
import time
from dataclasses import dataclass, field
from numbers import Real

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)

DEFAULT_MARGIN = 1e-7


class LMIError(ValueError):
    pass


class _Ops:
    """Arithmetic shared by variables and expressions."""

    __array_ufunc__ = None  # make numpy defer to the reflected operators

    def _aff(self):
        raise NotImplementedError

    def __add__(self, other):
        return self._aff()._add(other)

    __radd__ = __add__

    def __sub__(self, other):
        return self._aff()._add(-_as_affine(other, self.shape))

    def __rsub__(self, other):
        return (-self._aff())._add(other)

    def __neg__(self):
        return self._aff()._scale(-1.0)

    def __mul__(self, c):
        if not isinstance(c, Real):
            return NotImplemented
        return self._aff()._scale(float(c))

    __rmul__ = __mul__

    def __truediv__(self, c):
        return self._aff()._scale(1.0 / float(c))

    def __matmul__(self, M):
        if isinstance(M, _Ops):
            raise LMIError("product of two decision expressions is not affine")
        return self._aff()._rmul(np.asarray(M, dtype=float))

    def __rmatmul__(self, M):
        return self._aff()._lmul(np.asarray(M, dtype=float))

    @property
    def T(self):
        return self._aff()._transpose()


@dataclass(frozen=True, eq=False)
class MatrixVar(_Ops):
    name: str
    rows: int
    cols: int | None = None
    symmetric: bool = False

    def __post_init__(self):
        if self.cols is None:
            object.__setattr__(self, "cols", self.rows)
        if self.rows < 0 or self.cols < 0:
            raise LMIError(f"{self.name}: negative dimension")
        if self.symmetric and self.rows != self.cols:
            raise LMIError(f"{self.name}: symmetric variable must be square")

    @property
    def shape(self):
        return (self.rows, self.cols)

    @property
    def size(self):
        """Number of scalar unknowns."""
        if self.symmetric:
            return self.rows * (self.rows + 1) // 2
        return self.rows * self.cols

    def _aff(self):
        return Affine(self.shape, np.zeros(self.shape),
                      ((1.0, np.eye(self.rows), self, False, np.eye(self.cols)),))

    def __repr__(self):
        kind = "sym" if self.symmetric else "full"
        return f"MatrixVar({self.name!r}, {self.rows}x{self.cols}, {kind})"

    # vectorisation ---------------------------------------------------------

    def basis(self):
        """Index pairs of the scalar unknowns, in vectorisation order."""
        if self.symmetric:
            return [(i, j) for j in range(self.rows) for i in range(j + 1)]
        return [(i, j) for j in range(self.cols) for i in range(self.rows)]

    def unvec(self, x):
        V = np.zeros(self.shape)
        for k, (i, j) in enumerate(self.basis()):
            V[i, j] = x[k]
            if self.symmetric:
                V[j, i] = x[k]
        return V

    def vec(self, V):
        V = np.asarray(V, dtype=float)
        if V.shape != self.shape:
            raise LMIError(f"{self.name}: expected shape {self.shape}, got {V.shape}")
        if self.symmetric:
            V = (V + V.T) / 2
        return np.array([V[i, j] for i, j in self.basis()])


def _as_affine(x, shape):
    if isinstance(x, _Ops):
        return x._aff()
    if isinstance(x, Real) and x == 0:
        return Affine(shape, np.zeros(shape), ())
    a = np.asarray(x, dtype=float)
    if a.shape != tuple(shape):
        raise LMIError(f"shape mismatch: {a.shape} vs {tuple(shape)}")
    return Affine(shape, a, ())


class Affine(_Ops):
    """Affine matrix expression ``const + sum c * L @ V(^T) @ R``."""

    __slots__ = ("shape", "const", "terms")

    def __init__(self, shape, const, terms):
        self.shape = tuple(shape)
        self.const = const
        self.terms = tuple(terms)

    def _aff(self):
        return self

    @classmethod
    def constant(cls, M):
        M = np.atleast_2d(np.asarray(M, dtype=float))
        return cls(M.shape, M, ())

    def _add(self, other):
        o = _as_affine(other, self.shape)
        if o.shape != self.shape:
            raise LMIError(f"shape mismatch: {self.shape} + {o.shape}")
        return Affine(self.shape, self.const + o.const, self.terms + o.terms)

    def _scale(self, c):
        return Affine(self.shape, c * self.const,
                      tuple((c * a, L, v, t, R) for a, L, v, t, R in self.terms))

    def _rmul(self, M):
        if M.ndim != 2 or M.shape[0] != self.shape[1]:
            raise LMIError(f"shape mismatch: {self.shape} @ {M.shape}")
        return Affine((self.shape[0], M.shape[1]), self.const @ M,
                      tuple((a, L, v, t, R @ M) for a, L, v, t, R in self.terms))

    def _lmul(self, M):
        if M.ndim != 2 or M.shape[1] != self.shape[0]:
            raise LMIError(f"shape mismatch: {M.shape} @ {self.shape}")
        return Affine((M.shape[0], self.shape[1]), M @ self.const,
                      tuple((a, M @ L, v, t, R) for a, L, v, t, R in self.terms))

    def _transpose(self):
        return Affine(self.shape[::-1], self.const.T,
                      tuple((a, R.T, v, (not t) and not v.symmetric, L.T)
                            for a, L, v, t, R in self.terms))

    @property
    def variables(self):
        seen = {}
        for _, _, v, _, _ in self.terms:
            seen.setdefault(v.name, v)
        return list(seen.values())

    def evaluate(self, values):
        """Numeric value with ``values[name]`` substituted for each variable."""
        out = np.array(self.const, dtype=float)
        for a, L, v, t, R in self.terms:
            if v.name not in values:
                raise LMIError(f"missing variable {v.name!r} in witness")
            V = np.asarray(values[v.name], dtype=float)
            out += a * (L @ (V.T if t else V) @ R)
        return out

    def coefficients(self, var):
        """Coefficient matrices of the scalar unknowns of ``var``: array of
        shape ``(var.size, rows, cols)``."""
        r, c = self.shape
        T = np.zeros((var.rows, var.cols, r, c))
        for a, L, v, t, R in self.terms:
            if v is not var and v.name != var.name:
                continue
            if t:
                T += a * np.einsum("aj,ib->ijab", L, R)
            else:
                T += a * np.einsum("ai,jb->ijab", L, R)
        out = np.empty((var.size, r, c))
        for k, (i, j) in enumerate(var.basis()):
            out[k] = T[i, j] + T[j, i] if (var.symmetric and i != j) else T[i, j]
        return out

    def __repr__(self):
        names = ",".join(v.name for v in self.variables)
        return f"Affine({self.shape[0]}x{self.shape[1]}; {names})"


def bmat(grid, row_dims=None, col_dims=None):
    """Block matrix from a grid of expressions, arrays or ``None`` (zeros).

    ``row_dims``/``col_dims`` are required only where a row or column holds
    nothing but ``None`` blocks.
    """
    nr, nc = len(grid), len(grid[0])
    rd = list(row_dims) if row_dims is not None else [None] * nr
    cd = list(col_dims) if col_dims is not None else [None] * nc
    cells = [[None] * nc for _ in range(nr)]
    for i, row in enumerate(grid):
        if len(row) != nc:
            raise LMIError("ragged block grid")
        for j, b in enumerate(row):
            if b is None:
                continue
            if isinstance(b, _Ops):
                b = b._aff()
            elif isinstance(b, Real):
                if b != 0:
                    raise LMIError("scalar blocks other than 0 are ambiguous")
                continue
            else:
                b = Affine.constant(b)
            for dims, idx, d in ((rd, i, b.shape[0]), (cd, j, b.shape[1])):
                if dims[idx] is None:
                    dims[idx] = d
                elif dims[idx] != d:
                    raise LMIError(f"block ({i},{j}) has shape {b.shape}, "
                                   f"expected ({rd[i]},{cd[j]})")
            cells[i][j] = b
    if None in rd or None in cd:
        raise LMIError("cannot infer dimensions of an all-zero block row/column")
    ro = np.concatenate([[0], np.cumsum(rd)]).astype(int)
    co = np.concatenate([[0], np.cumsum(cd)]).astype(int)
    R, C = int(ro[-1]), int(co[-1])
    const = np.zeros((R, C))
    terms = []
    for i in range(nr):
        for j in range(nc):
            b = cells[i][j]
            if b is None:
                continue
            const[ro[i]:ro[i + 1], co[j]:co[j + 1]] = b.const
            for a, L, v, t, Rm in b.terms:
                Lb = np.zeros((R, L.shape[1]))
                Lb[ro[i]:ro[i + 1]] = L
                Rb = np.zeros((Rm.shape[0], C))
                Rb[:, co[j]:co[j + 1]] = Rm
                terms.append((a, Lb, v, t, Rb))
    return Affine((R, C), const, terms)


def sym_blocks(blocks, dims):
    """Symmetric block matrix from its upper-triangular blocks.

    ``blocks`` maps ``(i, j)`` with ``i <= j`` to a block; the lower part is
    filled with transposes and absent blocks are zero. Diagonal blocks must
    themselves be symmetric expressions.
    """
    k = len(dims)
    grid = [[None] * k for _ in range(k)]
    for (i, j), b in blocks.items():
        if i > j:
            raise LMIError(f"block ({i},{j}) lies below the diagonal")
        if dims[i] == 0 or dims[j] == 0:
            continue
        grid[i][j] = b
        if i != j:
            grid[j][i] = (b.T if isinstance(b, _Ops)
                          else np.asarray(b, dtype=float).T)
    return bmat(grid, dims, dims)


# -- constraints --------------------------------------------------------------

class Sense(str, enum.Enum):
    PSD_STRICT = ">"
    PSD = ">="
    NSD = "<="
    NSD_STRICT = "<"

    @property
    def strict(self):
        return self in (Sense.PSD_STRICT, Sense.NSD_STRICT)

    @property
    def sign(self):
        return 1.0 if self in (Sense.PSD, Sense.PSD_STRICT) else -1.0


@dataclass(frozen=True, eq=False)
class LMIConstraint:
    expr: Affine
    sense: Sense
    margin: float = 0.0
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "sense", Sense(self.sense))
        if isinstance(self.expr, MatrixVar):
            object.__setattr__(self, "expr", self.expr._aff())
        if self.margin < 0:
            raise LMIError("margin must be nonnegative")
        if self.sense.strict and self.margin <= 0:
            raise LMIError(f"{self.name}: strict constraint needs a positive margin")

    @property
    def size(self):
        return self.expr.shape[0]


def default_margin(constraints):
    """``1e-7 * (1 + largest constant entry)`` over the given constraints."""
    c = max((float(np.abs(k.expr.const).max()) for k in constraints
             if k.expr.const.size), default=0.0)
    return DEFAULT_MARGIN * (1.0 + c)


def psd(expr, strict=False, margin=None, name=""):
    s = Sense.PSD_STRICT if strict else Sense.PSD
    return LMIConstraint(expr, s, (margin or DEFAULT_MARGIN) if strict else 0.0, name)


def nsd(expr, strict=False, margin=None, name=""):
    s = Sense.NSD_STRICT if strict else Sense.NSD
    return LMIConstraint(expr, s, (margin or DEFAULT_MARGIN) if strict else 0.0, name)


# -- standard form --------------------------------------------------------------

@dataclass
class Cone:
    name: str
    size: int
    G0: np.ndarray          # (m, m)
    G: np.ndarray           # (K, m, m)


@dataclass
class StandardForm:
    """``G0_j + sum_k x_k G_kj >= 0`` for every cone ``j``."""

    variables: list
    offsets: dict
    nvars: int
    cones: list
    constraints: list = field(repr=False)

    def vectorize(self, witness):
        x = np.zeros(self.nvars)
        for v in self.variables:
            o = self.offsets[v.name]
            x[o:o + v.size] = v.vec(witness[v.name])
        return x

    def unvectorize(self, x):
        return {v.name: v.unvec(x[self.offsets[v.name]:self.offsets[v.name] + v.size])
                for v in self.variables}

    def slack_matrices(self, x):
        return [c.G0 + np.tensordot(x, c.G, axes=1) for c in self.cones]

    def to_sdpa(self):
        """Sparse SDPA text: ``sum x_k F_k - F0 >= 0`` with ``F0 = -G0``."""
        lines = [f"{self.nvars}", f"{len(self.cones)}",
                 " ".join(str(c.size) for c in self.cones),
                 " ".join(["0"] * self.nvars)]
        for b, c in enumerate(self.cones, start=1):
            mats = [-c.G0] + list(c.G)
            for mno, M in enumerate(mats):
                iu, ju = np.nonzero(np.triu(np.abs(M) > 0))
                for i, j in zip(iu, ju):
                    lines.append(f"{mno} {b} {i + 1} {j + 1} {M[i, j]:.17g}")
        return "\n".join(lines) + "\n"


def _symmetric(M, tol=1e-12):
    s = 1.0 + np.abs(M).max() if M.size else 1.0
    return np.abs(M - np.swapaxes(M, -1, -2)).max(initial=0.0) <= tol * s


def assemble(constraints, variables):
    """Standard form of a list of constraints over the declared variables."""
    names = {}
    for v in variables:
        if v.name in names:
            raise LMIError(f"duplicate variable name {v.name!r}")
        names[v.name] = v
    offsets, k = {}, 0
    for v in variables:
        offsets[v.name] = k
        k += v.size
    cones = []
    for idx, c in enumerate(constraints):
        e = c.expr
        label = c.name or f"c{idx}"
        r, cc = e.shape
        if r != cc:
            raise LMIError(f"{label}: constraint expression is {r}x{cc}, not square")
        for v in e.variables:
            if v.name not in names:
                raise LMIError(f"{label}: undeclared variable {v.name!r}")
            if names[v.name].shape != v.shape:
                raise LMIError(f"{label}: variable {v.name!r} used with shape {v.shape}")
        G = np.zeros((k, r, r))
        for v in e.variables:
            o = offsets[v.name]
            G[o:o + v.size] = e.coefficients(v)
        G0 = np.array(e.const, dtype=float)
        if not (_symmetric(G0) and _symmetric(G)):
            raise LMIError(f"{label}: expression is not symmetric")
        G0 = (G0 + G0.T) / 2
        G = (G + np.swapaxes(G, 1, 2)) / 2
        s = c.sense.sign
        G0 = s * G0 - c.margin * np.eye(r)
        cones.append(Cone(label, r, G0, s * G))
    return StandardForm(list(variables), offsets, k, cones, list(constraints))


# -- solving --------------------------------------------------------------------

class Status(str, enum.Enum):
    FEASIBLE = "feasible"
    INFEASIBLE = "infeasible"
    UNDECIDED = "undecided"


@dataclass
class FeasibilityResult:
    status: Status
    witness: dict | None
    depth: float | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def feasible(self):
        return self.status is Status.FEASIBLE


def _svec_index(m):
    """Row order and scaling of Clarabel's PSD triangle (upper, column-major)."""
    idx = [(i, j) for j in range(m) for i in range(j + 1)]
    scale = np.array([1.0 if i == j else np.sqrt(2.0) for i, j in idx])
    return idx, scale


def _svec_rows(M_stack, m):
    idx, scale = _svec_index(m)
    ii = np.array([i for i, _ in idx], dtype=int)
    jj = np.array([j for _, j in idx], dtype=int)
    return M_stack[..., ii, jj] * scale


def solve_feasibility(problem, bound=1e4, depth_tol=1e-4, verbose=False,
                      max_iter=200):
    """Decide feasibility of an assembled problem.

    Maximises the common depth ``t`` with ``S_j(x) >= t I`` for every cone and
    ``|x_k| <= bound``. Feasible requires ``t >= depth_tol`` confirmed by exact
    eigenvalues at the returned point; Infeasible requires a solved problem
    with ``t <= -depth_tol`` (no point of the box satisfies the constraints);
    everything else is Undecided.
    """
    import clarabel

    K = problem.nvars
    blocks_A, b_parts, cones = [], [], []
    for c in problem.cones:
        m = c.size
        if m == 0:
            continue
        Gs = _svec_rows(c.G, m)                       # (K, p)
        g0 = _svec_rows(c.G0, m)                      # (p,)
        eye = _svec_rows(np.eye(m), m)
        # s = svec(G0 + sum x G - t I) = b - A z
        blocks_A.append(np.hstack([-Gs.T, eye[:, None]]))
        b_parts.append(g0)
        cones.append(clarabel.PSDTriangleConeT(m))
    box = sp.vstack([sp.hstack([sp.identity(K), sp.csc_matrix((K, 1))]),
                     sp.hstack([-sp.identity(K), sp.csc_matrix((K, 1))])])
    A = sp.vstack([sp.csc_matrix(np.vstack(blocks_A))] + [box]).tocsc() \
        if blocks_A else box.tocsc()
    b = np.concatenate(b_parts + [np.full(2 * K, bound)])
    cones.append(clarabel.NonnegativeConeT(2 * K))
    q = np.zeros(K + 1)
    q[-1] = -1.0
    P = sp.csc_matrix((K + 1, K + 1))
    settings = clarabel.DefaultSettings()
    settings.verbose = verbose
    settings.max_iter = max_iter
    t0 = time.perf_counter()
    sol = clarabel.DefaultSolver(P, q, A, b, cones, settings).solve()
    elapsed = time.perf_counter() - t0
    status_name = str(sol.status)
    z = np.array(sol.x)
    diag = {"solver_status": status_name, "iterations": int(sol.iterations),
            "r_prim": float(sol.r_prim), "r_dual": float(sol.r_dual),
            "solve_time": elapsed, "bound": bound, "depth_tol": depth_tol}
    if not np.all(np.isfinite(z)):
        return FeasibilityResult(Status.UNDECIDED, None, None, diag)
    x, t = z[:K], float(z[-1])
    exact = min((float(np.linalg.eigvalsh(S).min())
                 for S in problem.slack_matrices(x) if S.size), default=np.inf)
    diag["solver_depth"] = t
    diag["exact_depth"] = exact
    if exact >= depth_tol:
        witness = problem.unvectorize(x)
        return FeasibilityResult(Status.FEASIBLE, witness, exact, diag)
    if status_name == "Solved" and t <= -depth_tol and \
            -float(sol.obj_val_dual) <= -depth_tol:
        return FeasibilityResult(Status.INFEASIBLE, None, t, diag)
    return FeasibilityResult(Status.UNDECIDED, None, t, diag)


@dataclass
class SlackReport:
    name: str
    size: int
    slack: float
    scale: float

    def ok(self, tol):
        return self.slack >= -tol * self.scale


def check_witness(constraints, witness, tol=1e-8):
    """Minimum-eigenvalue slack of every constraint at ``witness``.

    The slack of ``E >= margin I`` is ``lambda_min(E) - margin`` (sign-flipped
    for the negative senses). Returns ``(all_ok, reports)`` where a report
    passes when ``slack >= -tol * scale`` and ``scale = max(1, max|E|)``.
    """
    reports = []
    for idx, c in enumerate(constraints):
        E = c.expr.evaluate(witness)
        E = c.sense.sign * (E + E.T) / 2
        if E.size == 0:
            reports.append(SlackReport(c.name or f"c{idx}", 0, np.inf, 1.0))
            continue
        lam = float(np.linalg.eigvalsh(E).min())
        reports.append(SlackReport(c.name or f"c{idx}", E.shape[0],
                                   lam - c.margin, max(1.0, float(np.abs(E).max()))))
    return all(r.ok(tol) for r in reports), reports
