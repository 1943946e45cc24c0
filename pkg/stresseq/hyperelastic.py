"""Neo-Hookean material law, saddle-point assembly and the Newton load-stepping solver."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from stresseq.femspace import QuadratureRule, TaylorHoodSpace, p2_gradients, p2_reference
from stresseq.mesh import Mesh
from stresseq.models import BoundarySide, ErrorCode, NewtonReport, SolverError

log = logging.getLogger(__name__)

DET_FLOOR = 1e-8


@dataclass(frozen=True)
class MaterialParams:
    mu: float = 1.0
    lam: float = math.inf

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"mu must be > 0 (got {self.mu})")
        if not self.lam > 0:
            raise ValueError(f"lambda must be > 0 or inf (got {self.lam})")

    @property
    def incompressible(self) -> bool:
        return math.isinf(self.lam)

    @property
    def inv_lam(self) -> float:
        return 0.0 if self.incompressible else 1.0 / self.lam


@dataclass
class KinematicState:
    """Deformation quantities at a batch of points; arrays broadcast over leading axes."""

    F: np.ndarray
    B: np.ndarray
    det: np.ndarray
    inv_t: np.ndarray

    @classmethod
    def from_gradient(cls, grad_u: np.ndarray) -> KinematicState:
        F = np.eye(2) + grad_u
        return cls.from_deformation(F)

    @classmethod
    def from_deformation(cls, F: np.ndarray) -> KinematicState:
        F = np.asarray(F, dtype=float)
        det = F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]
        cof = np.stack(
            [np.stack([F[..., 1, 1], -F[..., 1, 0]], -1), np.stack([-F[..., 0, 1], F[..., 0, 0]], -1)],
            axis=-2,
        )
        with np.errstate(divide="ignore", invalid="ignore"):
            inv_t = cof / det[..., None, None]
        return cls(F=F, B=F @ np.swapaxes(F, -1, -2), det=det, inv_t=inv_t)

    @property
    def inv(self) -> np.ndarray:
        return np.swapaxes(self.inv_t, -1, -2)


def _require_positive(det: np.ndarray, what: str = "det F") -> None:
    det = np.asarray(det)
    if np.any(~(det > 0)):
        flat = int(np.argmin(np.where(np.isnan(det), -np.inf, det).ravel()))
        where = np.unravel_index(flat, det.shape) if det.ndim else ()
        raise SolverError(
            ErrorCode.NONPOSITIVE_DET,
            f"{what} <= 0 at index {tuple(int(i) for i in where)}",
            {"index": [int(i) for i in where], "value": float(det.ravel()[flat])},
        )


def energy_nh(B: np.ndarray, params: MaterialParams) -> np.ndarray:
    """Stored energy 1/2 (mu tr B + lam/2 det B - (mu + lam/2) ln det B)."""
    if params.incompressible:
        raise ValueError("the stored energy needs a finite lambda")
    B = np.asarray(B, dtype=float)
    det_b = B[..., 0, 0] * B[..., 1, 1] - B[..., 0, 1] * B[..., 1, 0]
    _require_positive(det_b, "det B")
    mu, lam = params.mu, params.lam
    return 0.5 * (mu * np.trace(B, axis1=-2, axis2=-1) + 0.5 * lam * det_b - (mu + 0.5 * lam) * np.log(det_b))


def piola_stress(F: np.ndarray, params: MaterialParams) -> np.ndarray:
    """First Piola-Kirchhoff stress from the displacement-only form of the law."""
    if params.incompressible:
        raise ValueError("the displacement-only stress needs a finite lambda; use piola_stress_pressure")
    state = KinematicState.from_deformation(F)
    _require_positive(state.det)
    det_b = state.det**2
    coef = 0.5 * params.lam * (det_b - 1.0) - params.mu
    return params.mu * state.F + coef[..., None, None] * state.inv_t


def piola_stress_pressure(F: np.ndarray, p: np.ndarray | float, params: MaterialParams) -> np.ndarray:
    """First Piola-Kirchhoff stress in terms of displacement and pressure."""
    state = KinematicState.from_deformation(F)
    _require_positive(state.det)
    p = np.asarray(p, dtype=float)
    coef = p * (1.0 + 0.5 * p * params.inv_lam) - params.mu
    return params.mu * state.F + coef[..., None, None] * state.inv_t


@dataclass
class DisplacementPressureField:
    """Taylor-Hood coefficients (u, p) with the load and material they were solved for."""

    space: TaylorHoodSpace
    u: np.ndarray
    p: np.ndarray
    params: MaterialParams = field(default_factory=MaterialParams)
    gamma: float = 0.0
    history: NewtonReport | None = None

    @classmethod
    def zero(cls, space: TaylorHoodSpace, params: MaterialParams, gamma: float = 0.0) -> DisplacementPressureField:
        return cls(space, np.zeros(space.num_u), np.zeros(space.num_p), params, gamma)

    @property
    def mesh(self) -> Mesh:
        return self.space.mesh

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.u, self.p])

    def with_vector(self, x: np.ndarray) -> DisplacementPressureField:
        n = self.space.num_u
        return DisplacementPressureField(self.space, x[:n].copy(), x[n:].copy(), self.params, self.gamma, self.history)

    def element_u(self) -> np.ndarray:
        """(nt, 6, 2) nodal displacements per element."""
        return self.u.reshape(-1, 2)[self.space.elem_nodes]

    def vertex_displacements(self) -> np.ndarray:
        return self.u.reshape(-1, 2)[: self.mesh.num_vertices]

    def at_points(self, bary: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """u (nt, nq, 2), grad u (nt, nq, 2, 2) and p (nt, nq) at barycentric points of every element.

        ``bary`` is either shared (nq, 3) or per element (nt, nq, 3).
        """
        nodal = self.element_u()
        p_nodal = self.p[self.mesh.triangles]
        if bary.ndim == 2:
            values, _ = p2_reference(bary)
            grads = p2_gradients(self.mesh, bary)
            u = np.einsum("qa,tac->tqc", values, nodal)
            p = np.einsum("qk,tk->tq", bary, p_nodal)
        else:
            nt, nq = bary.shape[:2]
            values, dvals = p2_reference(bary.reshape(-1, 3))
            values = values.reshape(nt, nq, 6)
            grads = np.einsum("tqak,tkd->tqad", dvals.reshape(nt, nq, 6, 3), self.mesh.grad_bary)
            u = np.einsum("tqa,tac->tqc", values, nodal)
            p = np.einsum("tqk,tk->tq", bary, p_nodal)
        grad_u = np.einsum("tac,tqad->tqcd", nodal, grads)
        return u, grad_u, p

    def at(self, element: int, bary: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """u, grad u and p at barycentric points of a single element."""
        bary = np.atleast_2d(bary)
        values, dvals = p2_reference(bary)
        grads = dvals @ self.mesh.grad_bary[element]
        nodal = self.element_u()[element]
        u = values @ nodal
        grad_u = np.einsum("ac,qad->qcd", nodal, grads)
        p = bary @ self.p[self.mesh.triangles[element]]
        return u, grad_u, p

    def quadrature_state(self, rule: QuadratureRule) -> tuple[KinematicState, np.ndarray]:
        _, grad_u, p = self.at_points(rule.points)
        return KinematicState.from_gradient(grad_u), p

    def stress(self, rule: QuadratureRule) -> np.ndarray:
        """P(u_h, p_h) at the rule's points, (nt, nq, 2, 2)."""
        _, grad_u, p = self.at_points(rule.points)
        return piola_stress_pressure(np.eye(2) + grad_u, p, self.params)

    def stress_at(self, element: int, bary: np.ndarray) -> np.ndarray:
        _, grad_u, p = self.at(element, bary)
        return piola_stress_pressure(np.eye(2) + grad_u, p, self.params)

    def min_det(self, rule: QuadratureRule) -> float:
        state, _ = self.quadrature_state(rule)
        return float(state.det.min())


def boundary_traction(mesh: Mesh, edge: int, gamma: float) -> np.ndarray:
    """Prescribed traction on a Neumann edge: (0, gamma) on the right segment, zero elsewhere."""
    if BoundarySide(int(mesh.edge_side[edge])) is BoundarySide.RIGHT:
        return np.array([0.0, gamma])
    return np.zeros(2)


def neumann_load(space: TaylorHoodSpace, gamma: float) -> np.ndarray:
    """Load vector <g, v> over the Neumann boundary (exact for the constant traction)."""
    load = np.zeros(space.num_dofs)
    mesh = space.mesh
    nodal = np.array([1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0])
    for e in mesh.edges_on(BoundarySide.RIGHT):
        nodes = np.array(space.edge_nodes(int(e)))
        g = boundary_traction(mesh, int(e), gamma)
        for c in range(2):
            np.add.at(load, 2 * nodes + c, g[c] * mesh.lengths[e] * nodal)
    return load


def assemble_system(
    fld: DisplacementPressureField,
    params: MaterialParams,
    gamma: float,
    rule: QuadratureRule | None = None,
) -> tuple[np.ndarray, sp.csr_matrix]:
    """Residual and consistent tangent of the mixed problem at the current iterate.

    Rows: (P, grad v) - <g, v> for the displacement tests, then
    (det F - 1 - p / lambda, q) for the pressure tests.
    """
    rule = rule or QuadratureRule.triangle(8)
    space = fld.space
    mesh = space.mesh
    nt = mesh.num_elems

    _, grad_u, p = fld.at_points(rule.points)
    state = KinematicState.from_gradient(grad_u)
    bad = np.flatnonzero(~(state.det > 0).all(axis=1))
    if bad.size:
        raise SolverError(
            ErrorCode.NONPOSITIVE_DET,
            f"det F <= 0 in element {int(bad[0])}",
            {"element": int(bad[0]), "min_det": float(state.det[bad[0]].min())},
        )
    w = rule.physical_weights(mesh)
    g = p2_gradients(mesh, rule.points)  # (nt, nq, 6, 2)
    lbar = rule.points  # P1 pressure basis
    inv = state.inv
    c2 = p * (1.0 + 0.5 * p * params.inv_lam) - params.mu
    stress = params.mu * state.F + c2[..., None, None] * state.inv_t

    # A[a, c] = grad N_a . Finv[:, c]
    A = np.einsum("tqaj,tqjc->tqac", g, inv)

    r_u = np.einsum("tq,tqcj,tqaj->tac", w, stress, g).reshape(nt, 12)
    r_p = np.einsum("tq,tq,qb->tb", w, state.det - 1.0 - p * params.inv_lam, lbar)

    gg = np.einsum("tqaj,tqbj->tqab", g, g)
    k_uu = params.mu * np.einsum("tq,tqab,ce->tacbe", w, gg, np.eye(2))
    k_uu -= np.einsum("tq,tqbc,tqae->tacbe", w * c2, A, A)
    k_up = np.einsum("tq,qb,tqac->tacb", w * (1.0 + p * params.inv_lam), lbar, A)
    k_pu = np.einsum("tq,qb,tqac->tbac", w * state.det, lbar, A)
    k_pp = -params.inv_lam * np.einsum("tq,qb,qc->tbc", w, lbar, lbar)

    ke = np.zeros((nt, 15, 15))
    ke[:, :12, :12] = k_uu.reshape(nt, 12, 12)
    ke[:, :12, 12:] = k_up.reshape(nt, 12, 3)
    ke[:, 12:, :12] = k_pu.reshape(nt, 3, 12)
    ke[:, 12:, 12:] = k_pp

    dofs = space.elem_dofs
    n = space.num_dofs
    residual = np.bincount(dofs.ravel(), weights=np.hstack([r_u, r_p]).ravel(), minlength=n)
    residual -= neumann_load(space, gamma)
    rows = np.repeat(dofs, 15, axis=1).ravel()
    cols = np.tile(dofs, (1, 15)).ravel()
    tangent = sp.coo_matrix((ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    return residual, tangent


class _StepFailed(Exception):
    def __init__(self, reason: str, history: list[float]):
        super().__init__(reason)
        self.history = history


def _solve_linear(tangent: sp.csr_matrix, rhs: np.ndarray) -> np.ndarray:
    try:
        lu = spla.splu(tangent.tocsc())
    except RuntimeError as exc:
        raise SolverError(ErrorCode.LINEAR_SOLVE_FAILED, str(exc)) from exc
    delta = lu.solve(rhs)
    if not np.all(np.isfinite(delta)):
        raise SolverError(ErrorCode.LINEAR_SOLVE_FAILED, "factorization produced non-finite values")
    return delta


def _newton_load_step(
    fld: DisplacementPressureField,
    load: float,
    target: float,
    rule: QuadratureRule,
    tol: float,
    max_iter: int,
    max_damping: int,
) -> tuple[DisplacementPressureField, int, list[float]]:
    free = fld.space.free_dofs
    params = fld.params
    history: list[float] = []
    limit = tol * (1.0 + abs(target))
    for it in range(max_iter + 1):
        residual, tangent = assemble_system(fld, params, load, rule)
        norm = float(np.max(np.abs(residual[free]))) if free.size else 0.0
        history.append(norm)
        log.debug("load %.4g iteration %d residual %.3e", load, it, norm)
        if norm <= limit:
            return _polish(fld, load, rule, residual, tangent, norm), it, history
        if not np.isfinite(norm) or it == max_iter:
            break
        delta = np.zeros(fld.space.num_dofs)
        delta[free] = _solve_linear(tangent[free][:, free], -residual[free])
        x0 = fld.as_vector()
        alpha = 1.0
        for _ in range(max_damping + 1):
            trial = fld.with_vector(x0 + alpha * delta)
            if trial.min_det(rule) > DET_FLOOR:
                break
            alpha *= 0.5
        else:
            raise _StepFailed(f"det F stayed below {DET_FLOOR} after {max_damping} halvings", history)
        if alpha < 1.0:
            log.debug("damped Newton update alpha=%.3g", alpha)
        fld = trial
    raise _StepFailed(f"no convergence in {max_iter} iterations", history)


def _polish(fld, load, rule, residual, tangent, norm):
    """One more Newton update once converged, kept only if the residual drops."""
    free = fld.space.free_dofs
    if norm == 0.0 or not free.size:
        return fld
    delta = np.zeros(fld.space.num_dofs)
    delta[free] = _solve_linear(tangent[free][:, free], -residual[free])
    trial = fld.with_vector(fld.as_vector() + delta)
    if trial.min_det(rule) <= DET_FLOOR:
        return fld
    new_residual, _ = assemble_system(trial, fld.params, load, rule)
    return trial if np.max(np.abs(new_residual[free])) < norm else fld


def solve_newton(
    mesh: Mesh,
    params: MaterialParams,
    gamma: float,
    schedule: list[float] | None = None,
    *,
    tol: float = 1e-10,
    max_iter: int = 30,
    max_bisections: int = 3,
    max_damping: int = 10,
    quad_degree: int = 8,
) -> DisplacementPressureField:
    """Solve the mixed Neo-Hookean problem by Newton's method with load stepping.

    A load step that fails is bisected by inserting the midpoint load, at most
    ``max_bisections`` times over the whole run.
    """
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0 (got {gamma})")
    if schedule is None:
        schedule = [gamma * k / 4 for k in range(1, 5)] if gamma > 0 else [0.0]
    if any(b < a for a, b in zip(schedule, schedule[1:])) or not math.isclose(schedule[-1], gamma):
        raise ValueError(f"schedule must increase to gamma={gamma} (got {schedule})")

    space = TaylorHoodSpace(mesh)
    rule = QuadratureRule.triangle(quad_degree)
    fld = DisplacementPressureField.zero(space, params, gamma)
    report = NewtonReport(gamma=gamma)
    pending = list(schedule)
    reached = 0.0
    while pending:
        load = pending[0]
        try:
            fld, iterations, history = _newton_load_step(fld, load, gamma, rule, tol, max_iter, max_damping)
        except _StepFailed as exc:
            if report.bisections >= max_bisections:
                raise SolverError(
                    ErrorCode.NEWTON_DIVERGED,
                    f"load step {load:.6g} failed after {report.bisections} bisections: {exc}",
                    {"load": load, "history": exc.history},
                ) from None
            report.bisections += 1
            midpoint = 0.5 * (reached + load)
            log.warning("Load step %.6g failed (%s); retrying from %.6g", load, exc, midpoint)
            pending.insert(0, midpoint)
            continue
        pending.pop(0)
        reached = load
        report.load_steps.append(load)
        report.iterations.append(iterations)
        report.residuals.append(history)
        log.info("Load %.6g converged in %d iterations (residual %.3e)", load, iterations, history[-1])

    fld.gamma = gamma
    fld.history = report
    return fld
