"""Standard-form mixed-cone programs and solver-independent certificates.

A program is

    maximize    c' x
    subject to  A x = b
                G x + s = h,   s in K

where K is an ordered product of nonnegative-orthant, second-order, and small
(side <= 4) PSD cones that partitions the slack vector exactly.  PSD slacks
are stored in scaled-vector form (svec) with off-diagonal entries multiplied
by sqrt(2) so that Euclidean inner products equal trace inner products.

``kkt_residuals`` recomputes primal/dual residuals and the duality gap from
the raw program data only, so it can certify any candidate point without
reference to solver internals.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

NONNEG = "nonneg"
SOC = "soc"
PSD = "psd"


@dataclass(frozen=True)
class Cone:
    """One cone block: kind is 'nonneg', 'soc', or 'psd' (dim = side for psd)."""

    kind: str
    dim: int

    def __post_init__(self):
        if self.kind not in (NONNEG, SOC, PSD):
            raise ValueError(f"unknown cone kind {self.kind!r}")
        if self.dim < 1:
            raise ValueError("cone dimension must be >= 1")
        if self.kind == PSD and self.dim > 4:
            raise ValueError("PSD blocks are limited to side <= 4")

    @property
    def size(self) -> int:
        """Length of this block inside the slack vector."""
        if self.kind == PSD:
            return self.dim * (self.dim + 1) // 2
        return self.dim


def svec(m: np.ndarray) -> np.ndarray:
    """Scaled upper-triangular vectorization with sqrt(2) off-diagonals."""
    p = m.shape[0]
    out = []
    for i in range(p):
        out.append(m[i, i])
        for j in range(i + 1, p):
            out.append(np.sqrt(2.0) * m[i, j])
    return np.array(out)


def smat(v: np.ndarray, side: int) -> np.ndarray:
    """Inverse of :func:`svec`."""
    m = np.zeros((side, side))
    k = 0
    for i in range(side):
        m[i, i] = v[k]
        k += 1
        for j in range(i + 1, side):
            m[i, j] = m[j, i] = v[k] / np.sqrt(2.0)
            k += 1
    return m


@dataclass
class ConeProgram:
    """Conic program in the standard form documented in the module docstring."""

    c: np.ndarray
    g: np.ndarray
    h: np.ndarray
    cones: list[Cone]
    a_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    warm_start: np.ndarray | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.g = np.atleast_2d(np.asarray(self.g, dtype=float))
        self.h = np.asarray(self.h, dtype=float)
        n = self.c.shape[0]
        if self.a_eq is None:
            self.a_eq = np.zeros((0, n))
            self.b_eq = np.zeros(0)
        self.a_eq = np.atleast_2d(np.asarray(self.a_eq, dtype=float))
        self.b_eq = np.asarray(self.b_eq, dtype=float)
        if self.g.shape[1] != n or self.a_eq.shape[1] != n:
            raise ValueError("constraint matrices must match the variable dimension")
        if self.g.shape[0] != self.h.shape[0]:
            raise ValueError("G and h must have matching row counts")
        if self.a_eq.shape[0] != self.b_eq.shape[0]:
            raise ValueError("A and b must have matching row counts")
        if sum(cone.size for cone in self.cones) != self.h.shape[0]:
            raise ValueError("cone dimensions must partition the slack vector")
        for arr in (self.c, self.g, self.h, self.a_eq, self.b_eq):
            if not np.all(np.isfinite(arr)):
                raise ValueError("program data must be finite")

    @property
    def n_vars(self) -> int:
        return self.c.shape[0]

    @property
    def n_slacks(self) -> int:
        return self.h.shape[0]


@dataclass
class ConeSolution:
    """Primal/dual answer: status is Optimal | Infeasible | Unbounded | MaxIterations.

    For Optimal returns, (x, y, z) satisfy c = A'y + G'z with z in K, and
    ``objective`` is the attained maximum c'x.  For Infeasible/Unbounded the
    dual/primal improving ray is stored in (y, z) / (x, s).
    """

    status: str
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    s: np.ndarray
    objective: float
    primal_residual: float
    dual_residual: float
    gap: float
    iterations: int


def _cone_blocks(cones: list[Cone]):
    start = 0
    for cone in cones:
        yield cone, start, start + cone.size
        start += cone.size


def cone_distance(v: np.ndarray, cones: list[Cone]) -> float:
    """Max violation of cone membership over all blocks (0 when v in K)."""
    worst = 0.0
    for cone, lo, hi in _cone_blocks(cones):
        blk = v[lo:hi]
        if cone.kind == NONNEG:
            worst = max(worst, float(-blk.min(initial=0.0)))
        elif cone.kind == SOC:
            worst = max(worst, float(np.linalg.norm(blk[1:]) - blk[0]))
        else:
            eig = np.linalg.eigvalsh(smat(blk, cone.dim))
            worst = max(worst, float(-eig[0]))
    return max(worst, 0.0)


def kkt_residuals(prog: ConeProgram, sol: ConeSolution):
    """Relative primal/dual residuals and duality gap of a candidate point.

    Computed from the program data alone: primal feasibility of x, dual
    stationarity c = A'y + G'z with z in K, and the gap
    |b'y + h'z - c'x| / max(1, |c'x|).
    """
    x, y, z = sol.x, sol.y, sol.z
    s = prog.h - prog.g @ x
    eq = 0.0
    if prog.a_eq.shape[0]:
        eq = float(np.linalg.norm(prog.a_eq @ x - prog.b_eq)) / (1.0 + float(np.linalg.norm(prog.b_eq)))
    cone_viol = cone_distance(s, prog.cones) / (1.0 + float(np.linalg.norm(prog.h)))
    primal = max(eq, cone_viol)

    stat = prog.a_eq.T @ y + prog.g.T @ z - prog.c
    dual = float(np.linalg.norm(stat)) / (1.0 + float(np.linalg.norm(prog.c)))
    dual = max(dual, cone_distance(z, prog.cones) / (1.0 + float(np.linalg.norm(prog.c))))

    pobj = float(prog.c @ x)
    dobj = float(prog.b_eq @ y + prog.h @ z)
    gap = abs(dobj - pobj) / max(1.0, abs(pobj))
    return primal, dual, gap


def format_program(prog: ConeProgram) -> str:
    """Plain-text dump for offline cross-checking against external solvers.

    Layout (whitespace separated, one section per line group)::

        conic-program v1
        vars <n> eqs <m> slacks <k>
        cones <kind:dim> ...          # psd dim is the matrix side
        c <n floats>
        A <m rows of n floats>        # omitted when m = 0
        b <m floats>                  # omitted when m = 0
        G <k rows of n floats>
        h <k floats>

    The program maximizes c'x subject to Ax = b and h - Gx in the cone
    product; floats are printed with repr-level precision.
    """
    lines = ["conic-program v1",
             f"vars {prog.n_vars} eqs {prog.a_eq.shape[0]} slacks {prog.n_slacks}",
             "cones " + " ".join(f"{c.kind}:{c.dim}" for c in prog.cones),
             "c " + " ".join(repr(float(v)) for v in prog.c)]
    if prog.a_eq.shape[0]:
        for row in prog.a_eq:
            lines.append("A " + " ".join(repr(float(v)) for v in row))
        lines.append("b " + " ".join(repr(float(v)) for v in prog.b_eq))
    for row in prog.g:
        lines.append("G " + " ".join(repr(float(v)) for v in row))
    lines.append("h " + " ".join(repr(float(v)) for v in prog.h))
    return "\n".join(lines) + "\n"
