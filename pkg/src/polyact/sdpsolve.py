"""Dense primal-dual interior-point solver for LMI-form SDPs.

The moment relaxation is the linear matrix inequality program

    minimize    c . x
    subject to  S_b(x) = C_b + sum_j x_j A_{b,j}  >= 0   (PSD, per block b)

whose x is the truncated moment vector with the constant entry substituted
out.  The Lagrangian dual is

    maximize   -sum_b <C_b, Z_b>
    subject to  sum_b <A_{b,j}, Z_b> = c_j,   Z_b >= 0,

so at optimality the primal value is the moment bound and the dual value is
the matching sum-of-squares bound; weak duality keeps dual <= primal.

The method is infeasible-start Mehrotra predictor-corrector path following
with the standard symmetrized (HKM) search direction.  Each iteration forms
the Schur complement H[i, j] = sum_b tr(A_i Sinv_b A_j Z_b), which is
symmetric positive definite for positive definite iterates, factors it once,
and solves for the predictor and corrector directions.  Sized for dense
desk-scale relaxations (moment blocks up to a few hundred rows); larger
programs should go through the SDPA export to an external solver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .momentsdp import MomentRelaxation

STATUS_OPTIMAL = "Optimal"
STATUS_MAX_ITERATIONS = "MaxIterations"
STATUS_NUMERICAL_FAILURE = "NumericalFailure"
STATUS_INFEASIBLE = "Infeasible"


@dataclass
class SolverOptions:
    gap_tol: float = 1e-8
    feas_tol: float = 1e-8
    max_iters: int = 200
    step_fraction: float = 0.98
    initial_point_scale: float | None = None
    record_trace: bool = True

    def __post_init__(self):
        if self.gap_tol <= 0 or self.feas_tol <= 0:
            raise ValueError("tolerances must be positive")
        if not 0 < self.step_fraction < 1:
            raise ValueError("step_fraction must lie in (0, 1)")


@dataclass
class SdpSolution:
    w: np.ndarray  # full moment vector, w[0] = 1 restored
    primal_obj: float  # moment bound
    dual_obj: float  # sum-of-squares bound
    status: str
    iterations: int
    residuals: tuple  # (primal feasibility, dual feasibility, relative gap)
    trace: list = field(default_factory=list, repr=False)


class _CompiledBlock:
    """One PSD block in solver form: dense constant + sparse coefficient map."""

    __slots__ = ("size", "label", "C", "P", "PT", "groups")

    def __init__(self, size, label, C, P, var_ids, starts, rows, cols, vals):
        self.size = size
        self.label = label
        self.C = C
        self.P = P
        self.PT = P.T.tocsr()
        # Group variables by coefficient-matrix sparsity count so the Schur
        # complement can run one batched matmul per group instead of one
        # small matmul per variable.
        counts = np.diff(starts)
        self.groups = []
        if len(var_ids):
            max_rows = max(8, 12_000_000 // max(1, size * size))
            for t in np.unique(counts):
                members = np.nonzero(counts == t)[0]
                for lo in range(0, len(members), max_rows):
                    sel = members[lo : lo + max_rows]
                    take = (starts[sel][:, None] + np.arange(t)[None, :]).ravel()
                    self.groups.append(
                        (
                            var_ids[sel],
                            rows[take].reshape(len(sel), t),
                            cols[take].reshape(len(sel), t),
                            vals[take].reshape(len(sel), t),
                        )
                    )

    def apply(self, x: np.ndarray) -> np.ndarray:
        """sum_j x_j A_j as a dense symmetric matrix."""
        return (self.PT @ x).reshape(self.size, self.size)

    def gather(self, M: np.ndarray) -> np.ndarray:
        """<A_j, M> for every variable j (M need not be symmetric)."""
        return self.P @ M.ravel()


def compile_blocks(relax: MomentRelaxation):
    """Flatten relaxation blocks into solver arrays and scale each block.

    Every block's data (constant part and coefficients) is divided by its
    max-abs entry, which leaves the feasible set and objective unchanged but
    evens out the badly ranged coefficients of composed network polynomials.
    """
    m = relax.num_moments - 1
    compiled = []
    for block in relax.blocks:
        s = block.size
        C = np.zeros((s, s))
        var_l, row_l, col_l, val_l = [], [], [], []
        for (a, b), functional in block.cells.items():
            for idx, coef in functional.items():
                if coef == 0.0:
                    continue
                if idx == 0:
                    C[a, b] += coef
                    if a != b:
                        C[b, a] += coef
                else:
                    var_l.append(idx - 1)
                    row_l.append(a)
                    col_l.append(b)
                    val_l.append(coef)
                    if a != b:
                        var_l.append(idx - 1)
                        row_l.append(b)
                        col_l.append(a)
                        val_l.append(coef)
        var = np.asarray(var_l, dtype=np.int64)
        row = np.asarray(row_l, dtype=np.int64)
        col = np.asarray(col_l, dtype=np.int64)
        val = np.asarray(val_l, dtype=float)

        scale = max(np.max(np.abs(C)) if C.size else 0.0, np.max(np.abs(val)) if val.size else 0.0)
        if scale <= 0:
            scale = 1.0
        C /= scale
        val = val / scale

        order = np.argsort(var, kind="stable")
        var, row, col, val = var[order], row[order], col[order], val[order]
        var_ids = np.unique(var)
        starts = np.searchsorted(var, np.concatenate([var_ids, [m + 1]]))

        P = sp.csr_matrix((val, (var, row * s + col)), shape=(m, s * s))
        compiled.append(_CompiledBlock(s, block.label, C, P, var_ids, starts, row, col, val))

    c = np.zeros(m)
    c[relax.objective_index - 1] = 1.0
    return compiled, c


def _chol(M: np.ndarray):
    return sla.cholesky(M, lower=True, check_finite=False)


def _sym(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def _max_step(L: np.ndarray, dX: np.ndarray) -> float:
    """Largest alpha with X + alpha*dX PSD, given L = chol(X)."""
    W = sla.solve_triangular(L, dX, lower=True, check_finite=False)
    W = sla.solve_triangular(L, W.T, lower=True, check_finite=False)
    lam_min = float(np.min(sla.eigvalsh(_sym(W), check_finite=False)))
    if lam_min >= -1e-14:
        return 1e20
    return -1.0 / lam_min


_SMALL_BLOCK = 24


class _SmallBlockBundle:
    """Merged Schur-complement path for all blocks of modest size.

    Each small block contributes P_b K_b P_b^T with the explicit operator
    K_b[(a,b),(c,d)] = Sinv_b[b,c] Z_b[d,a] (only s^2 x s^2 entries).  The
    per-block P matrices are concatenated once so the dense m x m
    accumulation happens in a single pass per iteration.
    """

    def __init__(self, blocks):
        self.indices = [i for i, b in enumerate(blocks) if b.size <= _SMALL_BLOCK]
        members = [blocks[i] for i in self.indices]
        if not members:
            self.P_cat = None
            return
        self.P_cat = sp.hstack([b.P for b in members], format="csr")
        self.PT_dense = [b.PT.toarray() for b in members]
        self.sizes = [b.size for b in members]
        self.W = np.empty((sum(s * s for s in self.sizes), self.P_cat.shape[0]))

    def contribution(self, Sinvs, Zs):
        offset = 0
        for pos, (i, s) in enumerate(zip(self.indices, self.sizes)):
            K = np.einsum("bc,da->abcd", Sinvs[i], Zs[i]).reshape(s * s, s * s)
            np.matmul(K, self.PT_dense[pos], out=self.W[offset : offset + s * s])
            offset += s * s
        return self.P_cat @ self.W


def _schur_complement(blocks, Sinvs, Zs, m: int, small: "_SmallBlockBundle") -> np.ndarray:
    H = np.zeros((m, m))
    for blk, Sinv, Z in zip(blocks, Sinvs, Zs):
        s = blk.size
        if s <= _SMALL_BLOCK:
            continue
        for ids, rows, cols, vals in blk.groups:
            g, t = rows.shape
            # U[j] = Sinv A_j Z built from the entries of A_j: each entry
            # (r, c, v) contributes v * Sinv[:, r] outer Z[c, :].
            SR = (Sinv[:, rows] * vals).transpose(1, 0, 2)  # (g, s, t)
            ZG = Z[cols, :]  # (g, t, s)
            U = np.matmul(SR, ZG).reshape(g, s * s)
            H[:, ids] += blk.P @ np.ascontiguousarray(U.T)
    if small.P_cat is not None:
        H += small.contribution(Sinvs, Zs)
    return _sym(H)


def solve_sdp(relax: MomentRelaxation, opts: SolverOptions | None = None) -> SdpSolution:
    """Solve the moment relaxation to the requested tolerances.

    Returns the optimal moment vector (with the constant entry restored),
    the moment bound (primal objective), and the sum-of-squares bound (dual
    objective).  Non-optimal statuses return the best iterate found.
    """
    opts = opts or SolverOptions()
    blocks, c = compile_blocks(relax)
    m = len(c)
    dims = [b.size for b in blocks]
    total_dim = sum(dims)
    small = _SmallBlockBundle(blocks)

    if opts.initial_point_scale is not None:
        eta = float(opts.initial_point_scale)
    else:
        eta = 10.0 * max(1.0, max(np.max(np.abs(b.C)) if b.C.size else 0.0 for b in blocks))
        eta = max(eta, math.sqrt(max(dims)))

    x = np.zeros(m)
    S = [eta * np.eye(s) for s in dims]
    Z = [eta * np.eye(s) for s in dims]

    trace: list = []
    best = None
    best_score = np.inf
    best_iter = 0
    status = STATUS_MAX_ITERATIONS
    iterations = 0
    stalls = 0
    mu0 = None
    mu_history: list = []
    c_norm = 1.0 + float(np.linalg.norm(c))

    for it in range(1, opts.max_iters + 1):
        iterations = it
        Rp = [blk.C + blk.apply(x) - Sb for blk, Sb in zip(blocks, S)]
        rd = c - sum(blk.gather(Zb) for blk, Zb in zip(blocks, Z))
        pobj = float(c @ x)
        dobj = -sum(float(np.tensordot(blk.C, Zb)) for blk, Zb in zip(blocks, Z))
        gap = sum(float(np.tensordot(Sb, Zb)) for Sb, Zb in zip(S, Z))
        mu = gap / total_dim
        pinf = max(
            float(np.linalg.norm(R)) / (1.0 + float(np.linalg.norm(blk.C)))
            for R, blk in zip(Rp, blocks)
        )
        dinf = float(np.linalg.norm(rd)) / c_norm
        relgap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))

        if opts.record_trace:
            trace.append(
                {
                    "iter": it,
                    "primal_obj": pobj,
                    "dual_obj": dobj,
                    "mu": mu,
                    "primal_infeas": pinf,
                    "dual_infeas": dinf,
                    "rel_gap": relgap,
                    "dual_infeas_norm": float(np.linalg.norm(rd)),
                    "x_norm": float(np.linalg.norm(x)),
                    "rp_norm": sum(float(np.linalg.norm(R)) for R in Rp),
                    "z_norm": sum(float(np.linalg.norm(Zb)) for Zb in Z),
                }
            )

        score = max(pinf, dinf, relgap)
        if score < best_score:
            best_score = score
            best_iter = it
            best = (x.copy(), pobj, dobj, (pinf, dinf, relgap))

        if pinf <= opts.feas_tol and dinf <= opts.feas_tol and relgap <= opts.gap_tol:
            status = STATUS_OPTIMAL
            best = (x.copy(), pobj, dobj, (pinf, dinf, relgap))
            break

        if abs(dobj) > 1e14 and dinf <= opts.feas_tol:
            status = STATUS_INFEASIBLE
            break

        # Degenerate problems eventually fall off the central path; once the
        # barrier parameter collapses, or neither the residual score nor the
        # barrier parameter has moved for a while, the remaining iterations
        # only oscillate, so return the best iterate instead.
        mu0 = mu if mu0 is None else mu0
        mu_history.append(mu)
        if mu < 1e-16 * mu0:
            break
        if (
            it - best_iter >= 30
            and len(mu_history) > 30
            and mu > 0.9 * mu_history[-30]
        ):
            break

        try:
            Ls = [_chol(Sb) for Sb in S]
            Lz = [_chol(Zb) for Zb in Z]
            Sinvs = [
                sla.cho_solve((L, True), np.eye(s), check_finite=False)
                for L, s in zip(Ls, dims)
            ]
        except np.linalg.LinAlgError:
            status = STATUS_NUMERICAL_FAILURE
            break

        H = _schur_complement(blocks, Sinvs, Z, m, small)
        Lh = None
        ridge = 0.0
        for attempt in range(6):
            try:
                Lh = _chol(H + ridge * np.eye(m) if ridge else H)
                break
            except np.linalg.LinAlgError:
                base = max(np.trace(H) / m, 1e-10)
                ridge = base * (1e-12 * 10.0 ** (2 * attempt))
        if Lh is None:
            status = STATUS_NUMERICAL_FAILURE
            break

        RpZ = [R @ Zb for R, Zb in zip(Rp, Z)]

        # Predictor: aim at mu = 0 with no second-order correction.
        q = -c + sum(
            blk.gather(-Sinv @ RZ) for blk, Sinv, RZ in zip(blocks, Sinvs, RpZ)
        )
        dx_aff = sla.cho_solve((Lh, True), q, check_finite=False)
        dS_aff = [blk.apply(dx_aff) + R for blk, R in zip(blocks, Rp)]
        dZ_aff = [
            _sym(-Zb - Sinv @ (dS @ Zb))
            for Zb, Sinv, dS in zip(Z, Sinvs, dS_aff)
        ]
        ap_aff = min(1.0, min(_max_step(L, dS) for L, dS in zip(Ls, dS_aff)))
        ad_aff = min(1.0, min(_max_step(L, dZ) for L, dZ in zip(Lz, dZ_aff)))
        gap_aff = sum(
            float(np.tensordot(Sb + ap_aff * dS, Zb + ad_aff * dZ))
            for Sb, dS, Zb, dZ in zip(S, dS_aff, Z, dZ_aff)
        )
        mu_aff = max(gap_aff, 0.0) / total_dim
        sigma = min(1.0, max(0.0, (mu_aff / mu) ** 3)) if mu > 0 else 0.0
        # While the dual residual is still large, keep some centering so a
        # nearly exact affine step cannot crash the barrier parameter and
        # strand the iterate on the boundary.
        if dinf > opts.feas_tol:
            sigma = max(sigma, 0.1)

        # Corrector: recentre to sigma*mu and absorb the second-order term.
        T = [
            sigma * mu * np.eye(s) - dS @ dZ
            for s, dS, dZ in zip(dims, dS_aff, dZ_aff)
        ]
        q = -c + sum(
            blk.gather(Sinv @ (Tb - RZ))
            for blk, Sinv, Tb, RZ in zip(blocks, Sinvs, T, RpZ)
        )
        dx = sla.cho_solve((Lh, True), q, check_finite=False)
        dS = [blk.apply(dx) + R for blk, R in zip(blocks, Rp)]
        dZ = [
            _sym(Sinv @ Tb - Zb - Sinv @ (dSb @ Zb))
            for Sinv, Tb, Zb, dSb in zip(Sinvs, T, Z, dS)
        ]

        alpha_p = min(1.0, opts.step_fraction * min(_max_step(L, d) for L, d in zip(Ls, dS)))
        alpha_d = min(1.0, opts.step_fraction * min(_max_step(L, d) for L, d in zip(Lz, dZ)))

        if max(alpha_p, alpha_d) < 1e-10:
            stalls += 1
            if stalls >= 3:
                status = STATUS_NUMERICAL_FAILURE
                break
        else:
            stalls = 0

        if opts.record_trace and trace:
            trace[-1]["alpha_p"] = alpha_p
            trace[-1]["alpha_d"] = alpha_d
            trace[-1]["sigma"] = sigma

        x = x + alpha_p * dx
        S = [Sb + alpha_p * d for Sb, d in zip(S, dS)]
        Z = [Zb + alpha_d * d for Zb, d in zip(Z, dZ)]

    x_best, pobj, dobj, residuals = best
    w = np.concatenate([[1.0], x_best])
    return SdpSolution(
        w=w,
        primal_obj=pobj,
        dual_obj=dobj,
        status=status,
        iterations=iterations,
        residuals=residuals,
        trace=trace,
    )


@dataclass
class FeasibilityReport:
    objective: float
    min_eigenvalues: list  # (block label, min eigenvalue)

    @property
    def worst(self) -> float:
        return min(v for _, v in self.min_eigenvalues)


def verify_solution(relax: MomentRelaxation, sol_w: Sequence[float]) -> FeasibilityReport:
    """Recompute every block at a moment vector, independent of the solver.

    Reports the minimum eigenvalue per block and the objective entry, which
    is all a reader needs to audit a claimed solution.
    """
    w = np.asarray(sol_w, dtype=float)
    if w.shape != (relax.num_moments,):
        raise ValueError(f"moment vector has shape {w.shape}, expected ({relax.num_moments},)")
    eigs = []
    for block in relax.blocks:
        M = block.evaluate(w)
        eigs.append((block.label, float(np.min(sla.eigvalsh(M, check_finite=False)))))
    return FeasibilityReport(objective=float(w[relax.objective_index]), min_eigenvalues=eigs)
