"""Small conic modeling layer backed by Clarabel.

Programs are built from named real variable blocks and affine expressions,
then assembled into the standard form ``A x + s = b, s in K`` with cones
taken from {zero, nonnegative, second-order, exponential, PSD}.  Complex
Hermitian PSD matrices are hosted through the real symmetric embedding
``[[Re, -Im], [Im, Re]]``.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import clarabel
import numpy as np
import scipy.sparse as sp

__all__ = [
    "Affine",
    "ConicProgram",
    "ConicSolution",
    "DeclarationError",
    "HermitianVar",
    "Tolerances",
    "embed_hermitian",
    "extract_hermitian",
]

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
FAILURE = "numerical-failure"


class DeclarationError(ValueError):
    """Raised for duplicate or unknown variable blocks."""


def embed_hermitian(a: np.ndarray) -> np.ndarray:
    """Real symmetric embedding ``[[Re A, -Im A], [Im A, Re A]]``."""
    a = np.asarray(a, dtype=complex)
    re, im = a.real, a.imag
    return np.block([[re, -im], [im, re]])


def extract_hermitian(x: np.ndarray) -> np.ndarray:
    """Inverse of :func:`embed_hermitian`, symmetrized over the two copies.

    For an arbitrary real symmetric PSD ``X`` the result is Hermitian PSD and
    ``Tr(A W) = Tr(embed(A) X) / 2`` holds for every Hermitian ``A``.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0] // 2
    x11, x12 = x[:n, :n], x[:n, n:]
    x21, x22 = x[n:, :n], x[n:, n:]
    return 0.5 * (x11 + x22) + 0.5j * (x21 - x12)


def _svec_index(n: int) -> tuple[np.ndarray, np.ndarray]:
    # upper triangle, column-major (Clarabel's PSDTriangle ordering)
    rows, cols = [], []
    for j in range(n):
        for i in range(j + 1):
            rows.append(i)
            cols.append(j)
    return np.array(rows), np.array(cols)


def svec(c: np.ndarray) -> np.ndarray:
    """Scaled upper-triangular vectorization: ``<svec(C), svec(X)> = Tr(C X)``."""
    c = np.asarray(c, dtype=float)
    i, j = _svec_index(c.shape[0])
    scale = np.where(i == j, 1.0, np.sqrt(2.0))
    return scale * c[i, j]


def smat(v: np.ndarray, n: int) -> np.ndarray:
    i, j = _svec_index(n)
    scale = np.where(i == j, 1.0, 1.0 / np.sqrt(2.0))
    out = np.zeros((n, n))
    out[i, j] = scale * v
    out[j, i] = scale * v
    return out


class Affine:
    """A column of real affine expressions ``G x + g`` over named blocks."""

    __slots__ = ("terms", "const")
    # make numpy defer to the reflected operators
    __array_ufunc__ = None

    def __init__(self, terms: dict[str, np.ndarray] | None, const) -> None:
        self.const = np.atleast_1d(np.asarray(const, dtype=float))
        self.terms = terms or {}

    @classmethod
    def constant(cls, value) -> Affine:
        return cls({}, value)

    @property
    def size(self) -> int:
        return self.const.shape[0]

    @staticmethod
    def _lift(other, size: int) -> Affine:
        if isinstance(other, Affine):
            return other
        value = np.broadcast_to(np.asarray(other, dtype=float), (size,))
        return Affine({}, value.copy())

    def __add__(self, other) -> Affine:
        other = self._lift(other, self.size)
        if other.size != self.size and 1 not in (self.size, other.size):
            raise ValueError(f"size mismatch {self.size} vs {other.size}")
        size = max(self.size, other.size)
        terms = {}
        for src in (self, other):
            for name, coef in src.terms.items():
                coef = np.broadcast_to(coef, (size, coef.shape[1]))
                terms[name] = terms[name] + coef if name in terms else coef.copy()
        return Affine(terms, self.const + other.const)

    __radd__ = __add__

    def __neg__(self) -> Affine:
        return Affine({k: -v for k, v in self.terms.items()}, -self.const)

    def __sub__(self, other) -> Affine:
        return self + (-self._lift(other, self.size))

    def __rsub__(self, other) -> Affine:
        return (-self) + other

    def __mul__(self, scalar) -> Affine:
        scalar = np.asarray(scalar, dtype=float)
        if scalar.ndim == 0:
            return Affine({k: scalar * v for k, v in self.terms.items()}, scalar * self.const)
        col = scalar.reshape(-1, 1)
        return Affine({k: col * v for k, v in self.terms.items()}, scalar * self.const)

    __rmul__ = __mul__

    def __truediv__(self, scalar) -> Affine:
        return self * (1.0 / np.asarray(scalar, dtype=float))

    def __rmatmul__(self, mat) -> Affine:
        mat = np.atleast_2d(np.asarray(mat, dtype=float))
        return Affine({k: mat @ v for k, v in self.terms.items()}, mat @ self.const)

    def __getitem__(self, idx) -> Affine:
        sel = np.arange(self.size)[idx]
        sel = np.atleast_1d(sel)
        return Affine({k: v[sel] for k, v in self.terms.items()}, self.const[sel])

    def sum(self) -> Affine:
        return np.ones((1, self.size)) @ self

    @staticmethod
    def stack(items) -> Affine:
        items = [it if isinstance(it, Affine) else Affine.constant(it) for it in items]
        sizes = [it.size for it in items]
        total = sum(sizes)
        names = {}
        for it in items:
            for name, coef in it.terms.items():
                names[name] = coef.shape[1]
        terms = {name: np.zeros((total, width)) for name, width in names.items()}
        start = 0
        for it, n in zip(items, sizes):
            for name, coef in it.terms.items():
                terms[name][start:start + n] = coef
            start += n
        return Affine(terms, np.concatenate([it.const for it in items]))

    def value(self, values: dict[str, np.ndarray]) -> np.ndarray:
        out = self.const.copy()
        for name, coef in self.terms.items():
            out = out + coef @ values[name]
        return out


@dataclass
class HermitianVar:
    """Handle for an ``n x n`` Hermitian PSD variable embedded as ``2n x 2n``."""

    name: str
    n: int

    def _expr(self) -> Affine:
        dim = 2 * self.n
        width = dim * (dim + 1) // 2
        return Affine({self.name: np.eye(width)}, np.zeros(width))

    def inner(self, a: np.ndarray) -> Affine:
        """Scalar affine expression ``Tr(A W)`` for Hermitian ``A``."""
        coef = 0.5 * svec(embed_hermitian(a))
        return Affine({self.name: coef[None, :]}, 0.0)

    def inner_many(self, mats) -> Affine:
        rows = np.array([0.5 * svec(embed_hermitian(a)) for a in mats])
        return Affine({self.name: rows}, np.zeros(len(rows)))

    def trace(self) -> Affine:
        return self.inner(np.eye(self.n))


# an "almost solved" answer is accepted when its primal residual is within this
# factor of the feasibility tolerance; every solver output is re-checked with
# the exact evaluators downstream
ALMOST_FACTOR = 100.0


@dataclass(frozen=True)
class Tolerances:
    feasibility: float = 1e-8
    gap_rel: float = 1e-8
    gap_abs: float = 1e-8
    max_iter: int = 200


@dataclass
class ConicSolution:
    status: str
    objective: float
    values: dict[str, np.ndarray]
    iterations: int
    primal_residual: float
    dual_residual: float
    solver_status: str = ""

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]


@dataclass
class _Cone:
    kind: str
    dim: int
    expr: Affine


@dataclass
class ConicProgram:
    """Minimize a linear objective over affine images in convex cones."""

    blocks: dict[str, int] = field(default_factory=dict)
    hermitian: dict[str, int] = field(default_factory=dict)
    cones: list[_Cone] = field(default_factory=list)
    objective: Affine | None = None

    def _declare(self, name: str, width: int) -> None:
        if name in self.blocks:
            raise DeclarationError(f"variable {name!r} already declared")
        self.blocks[name] = width

    def variable(self, name: str, size: int = 1) -> Affine:
        if size < 1:
            raise DeclarationError("variable size must be >= 1")
        self._declare(name, size)
        return Affine({name: np.eye(size)}, np.zeros(size))

    def hermitian_psd(self, name: str, n: int) -> HermitianVar:
        if n < 1:
            raise DeclarationError("complex dimension must be >= 1")
        dim = 2 * n
        self._declare(name, dim * (dim + 1) // 2)
        self.hermitian[name] = n
        var = HermitianVar(name, n)
        self.cones.append(_Cone("psd", dim, var._expr()))
        return var

    def _check(self, expr: Affine) -> None:
        for name in expr.terms:
            if name not in self.blocks:
                raise DeclarationError(f"constraint references undeclared block {name!r}")

    def _add(self, kind: str, expr: Affine, dim: int | None = None) -> None:
        self._check(expr)
        self.cones.append(_Cone(kind, expr.size if dim is None else dim, expr))

    def add_eq(self, expr: Affine) -> None:
        self._add("zero", expr)

    def add_nonneg(self, expr: Affine) -> None:
        self._add("nonneg", expr)

    def add_soc(self, t: Affine, z: Affine) -> None:
        """``||z||_2 <= t``."""
        self._add("soc", Affine.stack([t, z]))

    def add_rotated_soc(self, x: Affine, y: Affine, z: Affine) -> None:
        """``x >= 0, y >= 0, x * y >= ||z||^2``."""
        x = Affine._lift(x, 1)
        y = Affine._lift(y, 1)
        self.add_soc(x + y, Affine.stack([x - y, 2.0 * z]))

    def add_exponential_cone(self, t: Affine, x: Affine) -> None:
        """``t <= ln(x)`` (hence ``x > 0``)."""
        t = Affine._lift(t, 1)
        x = Affine._lift(x, 1)
        self._add("exp", Affine.stack([t, Affine.constant(1.0), x]), 3)

    def minimize(self, expr: Affine) -> None:
        expr = Affine._lift(expr, 1)
        if expr.size != 1:
            raise ValueError("objective must be scalar")
        self._check(expr)
        self.objective = expr

    # -- assembly ---------------------------------------------------------

    def _offsets(self) -> tuple[dict[str, int], int]:
        offsets, start = {}, 0
        for name, width in self.blocks.items():
            offsets[name] = start
            start += width
        return offsets, start

    def _dense(self, expr: Affine, offsets, nvar) -> np.ndarray:
        g = np.zeros((expr.size, nvar))
        for name, coef in expr.terms.items():
            o = offsets[name]
            g[:, o:o + coef.shape[1]] = coef
        return g

    def assemble(self):
        """Return ``(q, A, b, cones, offsets)`` in Clarabel's standard form."""
        offsets, nvar = self._offsets()
        obj = self.objective if self.objective is not None else Affine.constant(0.0)
        q = self._dense(obj, offsets, nvar)[0]
        # zero and nonnegative rows must precede the others only for readability
        a_rows, b_rows, cones = [], [], []
        for cone in self.cones:
            g = self._dense(cone.expr, offsets, nvar)
            a_rows.append(-g)
            b_rows.append(cone.expr.const)
            if cone.kind == "zero":
                cones.append(clarabel.ZeroConeT(cone.dim))
            elif cone.kind == "nonneg":
                cones.append(clarabel.NonnegativeConeT(cone.dim))
            elif cone.kind == "soc":
                cones.append(clarabel.SecondOrderConeT(cone.dim))
            elif cone.kind == "exp":
                cones.append(clarabel.ExponentialConeT())
            else:
                cones.append(clarabel.PSDTriangleConeT(cone.dim))
        a = sp.csc_matrix(np.vstack(a_rows)) if a_rows else sp.csc_matrix((0, nvar))
        b = np.concatenate(b_rows) if b_rows else np.zeros(0)
        return q, a, b, cones, offsets

    def solve(self, tol: Tolerances = Tolerances()) -> ConicSolution:
        q, a, b, cones, offsets = self.assemble()
        nvar = q.shape[0]
        settings = clarabel.DefaultSettings()
        settings.verbose = False
        settings.tol_feas = tol.feasibility
        settings.tol_gap_rel = tol.gap_rel
        settings.tol_gap_abs = tol.gap_abs
        settings.max_iter = tol.max_iter
        solver = clarabel.DefaultSolver(sp.csc_matrix((nvar, nvar)), q, a, b, cones, settings)
        res = solver.solve()
        raw = str(res.status)
        x = np.asarray(res.x, dtype=float)
        if raw == "Solved" or (raw == "AlmostSolved" and res.r_prim <= ALMOST_FACTOR * tol.feasibility):
            status = OPTIMAL
        elif "Infeasible" in raw:
            status = INFEASIBLE
        else:
            status = FAILURE
        values = {}
        for name, width in self.blocks.items():
            o = offsets[name]
            chunk = x[o:o + width]
            if name in self.hermitian:
                n = self.hermitian[name]
                chunk = extract_hermitian(smat(chunk, 2 * n))
            values[name] = chunk
        const = self.objective.const[0] if self.objective is not None else 0.0
        return ConicSolution(
            status=status,
            objective=float(res.obj_val + const) if status == OPTIMAL else float("nan"),
            values=values,
            iterations=int(res.iterations),
            primal_residual=float(res.r_prim),
            dual_residual=float(res.r_dual),
            solver_status=raw,
        )

    def dump(self) -> str:
        """Plain-text cone-LP listing: objective, triplets of A, b and cones."""
        q, a, b, cones, _ = self.assemble()
        buf = io.StringIO()
        buf.write(f"VARIABLES {q.shape[0]}\nOBJECTIVE\n")
        for i, c in enumerate(q):
            if c != 0.0:
                buf.write(f"{i} {c:.17g}\n")
        coo = a.tocoo()
        buf.write(f"A {a.shape[0]} {a.shape[1]} {coo.nnz}\n")
        for i, j, v in zip(coo.row, coo.col, coo.data):
            buf.write(f"{i} {j} {v:.17g}\n")
        buf.write("B\n")
        buf.write("\n".join(f"{v:.17g}" for v in b) + "\n")
        buf.write("CONES\n")
        for cone in self.cones:
            buf.write(f"{cone.kind} {cone.dim}\n")
        return buf.getvalue()
