"""P1 Galerkin discretisation of -Laplace(u) = f with homogeneous Dirichlet data.

The element stiffness uses the gradient outer-product formula on the exact
vertex coordinates (converted once to binary64).  Loads, ``||f||^2`` and the
oscillation use the symmetric 6-point degree-4 rule on triangles.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, cg

from .errors import DegenerateElement, NoConvergence
from .forest import FIXTURES
from .triangulation import MeshArrays, Triangulation

# symmetric 6-point rule, exact for polynomials of degree <= 4 (barycentric points)
_A1, _B1 = 0.445948490915964886318329, 0.108103018168070227363342
_A2, _B2 = 0.091576213509770743459572, 0.816847572980458513080856
_W1, _W2 = 0.223381589678011465944, 0.109951743655321867389
QUAD_BARY = np.array([
    [_A1, _A1, _B1], [_A1, _B1, _A1], [_B1, _A1, _A1],
    [_A2, _A2, _B2], [_A2, _B2, _A2], [_B2, _A2, _A2],
])
QUAD_W = np.array([_W1, _W1, _W1, _W2, _W2, _W2])
QUAD_W = QUAD_W / QUAD_W.sum()


@dataclass(frozen=True)
class SourceField:
    """Right-hand side ``f`` with optional closed-form extras.

    ``evaluator`` takes arrays ``x, y`` and returns ``f`` values.  When
    ``constant`` is set, element norms use the exact value instead of
    quadrature.  ``exact_grad`` (if known) returns the gradient of the exact
    solution, used for the H1 error.
    """

    name: str
    evaluator: Callable[[np.ndarray, np.ndarray], np.ndarray]
    quadrature_degree: int = 4
    constant: float | None = None
    exact_grad: Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]] | None = None
    exact_energy: float | None = None  # |u|_{H1}^2 of the exact solution

    def __call__(self, x, y):
        return np.broadcast_to(np.asarray(self.evaluator(np.asarray(x), np.asarray(y)), dtype=float),
                               np.shape(x))


def constant_source(c: float, name: str | None = None) -> SourceField:
    return SourceField(name or f"const{c:g}", lambda x, y: np.full(np.shape(x), float(c)), constant=float(c))


def _sin_f(x, y):
    return 2.0 * math.pi ** 2 * np.sin(math.pi * x) * np.sin(math.pi * y)


def _sin_grad(x, y):
    return (math.pi * np.cos(math.pi * x) * np.sin(math.pi * y),
            math.pi * np.sin(math.pi * x) * np.cos(math.pi * y))


SQUARE_SIN = SourceField("sin", _sin_f, exact_grad=_sin_grad, exact_energy=math.pi ** 2 / 2)


@dataclass(frozen=True)
class Problem:
    name: str
    mesh_text: str
    source: SourceField


CATALOG: dict[str, Problem] = {
    "square-ones": Problem("square-ones", FIXTURES["unit2"], constant_source(1.0, "ones")),
    "square-sin": Problem("square-sin", FIXTURES["unit2"], SQUARE_SIN),
    "lshape-ones": Problem("lshape-ones", FIXTURES["lshape"], constant_source(1.0, "ones")),
    "square-zero": Problem("square-zero", FIXTURES["unit2"], constant_source(0.0, "zero")),
}


# ------------------------------------------------------------ element data
@dataclass
class ElementData:
    area: np.ndarray          # (nt,)
    grads: np.ndarray         # (nt, 3, 2) barycentric gradients
    qpts: np.ndarray          # (nt, 6, 2)
    fq: np.ndarray            # (nt, 6) source at quadrature points
    f_norm2: np.ndarray       # ||f||^2_{L2(T)}
    f_mean: np.ndarray        # element mean of f


def element_data(mesh: MeshArrays, f: SourceField) -> ElementData:
    p = mesh.xy[mesh.tri_local]                       # (nt, 3, 2)
    area = mesh.area
    if np.any(area <= 0):
        raise DegenerateElement(f"{int(np.sum(area <= 0))} elements with zero area")
    # barycentric gradients: grad(lambda_i) = rot(p_{i+2} - p_{i+1}) / (2|T|)
    d = np.roll(p, -2, axis=1) - np.roll(p, -1, axis=1)   # p_{i+2} - p_{i+1}
    cr = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - \
         (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0])
    grads = np.stack([-d[:, :, 1], d[:, :, 0]], axis=2) / cr[:, None, None]
    qpts = np.einsum("qk,tkd->tqd", QUAD_BARY, p)
    if f.constant is not None:
        fq = np.full(qpts.shape[:2], f.constant)
        f_norm2 = f.constant ** 2 * area
        f_mean = np.full(len(area), f.constant)
    else:
        fq = f(qpts[..., 0], qpts[..., 1])
        f_norm2 = area * (fq ** 2 @ QUAD_W)
        f_mean = fq @ QUAD_W
    return ElementData(area, grads, qpts, fq, f_norm2, f_mean)


# ---------------------------------------------------------------- state
@dataclass
class FemState:
    tri: Triangulation
    source: SourceField
    elements: ElementData
    stiffness_full: sp.csr_matrix
    load_full: np.ndarray
    dofs: np.ndarray                 # local node indices of the unknowns
    stiffness: sp.csr_matrix         # restricted to dofs
    load: np.ndarray
    u: np.ndarray | None = None      # coefficients on dofs
    solver_residual: float = math.nan
    iterations: int = 0
    _u_full: np.ndarray | None = field(default=None, repr=False)

    @property
    def mesh(self) -> MeshArrays:
        return self.tri.mesh

    @property
    def n_dofs(self) -> int:
        return len(self.dofs)

    @property
    def u_full(self) -> np.ndarray:
        """Nodal values on all mesh nodes (zero on the boundary)."""
        if self._u_full is None:
            if self.u is None:
                raise ValueError("state not solved")
            full = np.zeros(len(self.mesh.nodes))
            full[self.dofs] = self.u
            self._u_full = full
        return self._u_full

    def element_gradients(self) -> np.ndarray:
        """Constant gradient of u_T on each element, shape (nt, 2)."""
        uf = self.u_full[self.mesh.tri_local]          # (nt, 3)
        return np.einsum("tk,tkd->td", uf, self.elements.grads)


def assemble(tri: Triangulation, f: SourceField) -> FemState:
    mesh = tri.mesh
    el = element_data(mesh, f)
    nn = len(mesh.nodes)
    ke = el.area[:, None, None] * np.einsum("tid,tjd->tij", el.grads, el.grads)
    rows = np.repeat(mesh.tri_local, 3, axis=1).ravel()
    cols = np.tile(mesh.tri_local, (1, 3)).ravel()
    K = sp.coo_matrix((ke.ravel(), (rows, cols)), shape=(nn, nn)).tocsr()
    K.sum_duplicates()
    # load: sum_q w_q |T| f(x_q) lambda_i(x_q)
    fe = el.area[:, None] * np.einsum("tq,q,qi->ti", el.fq, QUAD_W, QUAD_BARY)
    b = np.bincount(mesh.tri_local.ravel(), weights=fe.ravel(), minlength=nn)
    dofs = np.flatnonzero(~mesh.boundary_node)
    A = K[dofs][:, dofs].tocsr()
    return FemState(tri, f, el, K, b, dofs, A, b[dofs].copy())


def solve_cg(state: FemState, cg_tol: float = 1e-12, x0: np.ndarray | None = None,
             max_iters: int | None = None) -> FemState:
    """Jacobi-preconditioned CG; relative residual <= cg_tol or NoConvergence."""
    n = state.n_dofs
    state._u_full = None
    if n == 0:
        state.u = np.zeros(0)
        state.solver_residual = 0.0
        state.iterations = 0
        return state
    b = state.load
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        state.u = np.zeros(n)
        state.solver_residual = 0.0
        state.iterations = 0
        return state
    A = state.stiffness
    dinv = 1.0 / A.diagonal()
    M = LinearOperator((n, n), matvec=lambda r: dinv * r, dtype=float)
    max_iters = max_iters if max_iters is not None else 20 * n
    count = [0]

    def cb(_):
        count[0] += 1

    x, info = cg(A, b, x0=x0, rtol=cg_tol, atol=0.0, maxiter=max_iters, M=M, callback=cb)
    res = float(np.linalg.norm(b - A @ x)) / bnorm
    # the recursive residual that scipy monitors drifts below the true one by
    # an order of magnitude on large graded meshes; a true residual three
    # orders above the tolerance means the tolerance was out of reach
    if (res > cg_tol * 1.0001 and info != 0) or res > 1000 * cg_tol:
        raise NoConvergence(max_iters, res)
    state.u = x
    state.solver_residual = res
    state.iterations = count[0]
    return state


def solve(tri: Triangulation, f: SourceField, cg_tol: float = 1e-12,
          x0: np.ndarray | None = None) -> FemState:
    return solve_cg(assemble(tri, f), cg_tol, x0=x0)


# ---------------------------------------------------------------- energies
@dataclass(frozen=True)
class EnergyReport:
    J: float
    H: float
    G: float
    osc2: float


def dirichlet_energy(state: FemState) -> float:
    u = state.u
    if u is None:
        raise ValueError("state not solved")
    if len(u) == 0:
        return 0.0
    return float(0.5 * u @ (state.stiffness @ u) - state.load @ u)


def h_term(state: FemState, subset: np.ndarray | None = None) -> float:
    """Sum of h_T^2 ||f||^2_T with h_T = |T|^(1/2); ``subset`` masks leaves."""
    el = state.elements
    vals = el.area * el.f_norm2
    return float(vals.sum() if subset is None else vals[subset].sum())


def h_term_diff(coarse: FemState, fine: Triangulation) -> float:
    """H restricted to the leaves of the coarse mesh refined in ``fine``."""
    mask = _refined_mask(coarse.tri, fine)
    return h_term(coarse, mask)


def _refined_mask(coarse: Triangulation, fine: Triangulation) -> np.ndarray:
    keep = set(fine.leaves)
    return np.fromiter((t not in keep for t in coarse.leaves), dtype=bool, count=len(coarse.leaves))


def oscillation(state: FemState, subset: np.ndarray | None = None) -> float:
    el = state.elements
    if state.source.constant is not None:
        return 0.0
    dev2 = ((el.fq - el.f_mean[:, None]) ** 2) @ QUAD_W
    vals = el.area * el.area * dev2
    return float(vals.sum() if subset is None else vals[subset].sum())


def total_energy(state: FemState) -> EnergyReport:
    J = dirichlet_energy(state)
    H = h_term(state)
    return EnergyReport(J, H, J + H, oscillation(state))


# ------------------------------------------------------ nested comparisons
def prolong(coarse: FemState, fine: Triangulation) -> np.ndarray:
    """Nodal values of u_coarse on the nodes of a refinement ``fine``.

    A fine node that is not a coarse node is the midpoint of the refinement
    edge of the triangle that created it; u_coarse is affine there, so its
    value is the mean of the two endpoint values.  Creation order guarantees
    the endpoints are handled first.
    """
    forest = fine.forest
    if coarse.tri.forest is not forest:
        from .errors import NotNested
        raise NotNested("the two triangulations live in different forests")
    cm = coarse.mesh
    vals: dict[int, float] = dict(zip(cm.nodes.tolist(), coarse.u_full.tolist()))
    fnodes = fine.mesh.nodes.tolist()
    for v in fnodes:  # ascending ids
        if v in vals:
            continue
        t = forest.vcreator[v]
        if t < 0:
            raise ValueError("fine triangulation does not refine the coarse one")
        a, b = forest.p1[t], forest.p2[t]
        vals[v] = 0.5 * (vals[a] + vals[b])
    return np.array([vals[v] for v in fnodes])


def h1_distance2(coarse: FemState, fine: FemState) -> float:
    """|u_coarse - u_fine|^2_{H1} for nested triangulations."""
    if not coarse.tri.population <= fine.tri.population:
        from .errors import NotNested
        raise NotNested("coarse triangulation is not below the fine one")
    d = fine.u_full - prolong(coarse, fine.tri)
    return float(d @ (fine.stiffness_full @ d))


def energy_diff_identity(coarse: FemState, fine: FemState) -> tuple[float, float]:
    """``(J(T) - J(T*), |u_T - u_T*|^2 / 2)`` computed independently."""
    if not coarse.tri.population <= fine.tri.population:
        from .errors import NotNested
        raise NotNested("coarse triangulation is not below the fine one")
    lhs = dirichlet_energy(coarse) - dirichlet_energy(fine)
    rhs = 0.5 * h1_distance2(coarse, fine)
    return lhs, rhs


def h1_error2(state: FemState) -> float | None:
    """|u - u_T|^2_{H1} by quadrature when the exact gradient is known."""
    f = state.source
    if f.exact_grad is None:
        if f.constant == 0.0:
            g = state.element_gradients()
            return float(np.sum(state.elements.area * np.sum(g * g, axis=1)))
        return None
    el = state.elements
    gx, gy = f.exact_grad(el.qpts[..., 0], el.qpts[..., 1])
    g = state.element_gradients()
    err = (gx - g[:, 0:1]) ** 2 + (gy - g[:, 1:2]) ** 2
    return float(np.sum(el.area * (err @ QUAD_W)))
