"""Moment relaxation of a polynomial program as an LMI-form SDP.

At relaxation order k the decision vector is the truncated moment sequence w,
one entry per monomial of degree <= 2k in the z-variables, with w_0 (the
constant's entry) pinned to 1.  Feasibility is expressed through symmetric
blocks whose cells are linear functionals of w:

  * the moment matrix, indexed by monomials of degree <= k, with
    cell (a, b) reading w at exponent alpha_a + alpha_b;
  * one localizing matrix per constraint polynomial p, indexed by monomials
    of degree <= k - ceil(deg(p)/2), with cell (a, b) reading
    sum_gamma p_gamma * w at exponent alpha_a + alpha_b + gamma.

Minimizing the entry of w attached to the objective variable over all w that
keep every block positive semidefinite is the relaxation solved by
`sdpsolve`; the `export_sdpa` writer emits the same program in the standard
SDPA sparse text format for cross-checking against external solvers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .polyring import MonomialBasis, Polynomial, basis, basis_size
from .popbuild import PopInstance


class TmsIndex:
    """Position lookup for truncated moment sequences of degree 2k."""

    __slots__ = ("n", "order", "basis")

    def __init__(self, n: int, order: int):
        self.n = n
        self.order = order
        self.basis = basis(n, 2 * order)

    def __len__(self) -> int:
        return len(self.basis)

    def position(self, power) -> int:
        return self.basis.position(power)

    def degree_one_positions(self) -> list[int]:
        # Graded-lex puts the constant at 0 and e_1..e_n at 1..n.
        return list(range(1, self.n + 1))


@dataclass
class LinearMatrixBlock:
    """Symmetric matrix whose upper-triangle cells are linear in w.

    cells maps (a, b) with a <= b to a dict {w_index: coefficient}.
    """

    size: int
    label: str
    cells: dict = field(repr=False)

    def evaluate(self, w: np.ndarray) -> np.ndarray:
        """Assemble the dense symmetric matrix at a full moment vector."""
        m = np.zeros((self.size, self.size))
        for (a, b), functional in self.cells.items():
            value = sum(coef * w[idx] for idx, coef in functional.items())
            m[a, b] = value
            m[b, a] = value
        return m


@dataclass
class MomentRelaxation:
    """LMI-form SDP over the truncated moment sequence of degree 2k."""

    n: int
    order: int
    min_order: int
    tms: TmsIndex
    objective_index: int
    blocks: list

    @property
    def num_moments(self) -> int:
        return len(self.tms)

    def block_sizes(self) -> list[int]:
        return [b.size for b in self.blocks]


def moment_block(n: int, k: int, idx: TmsIndex, label: str = "moment") -> LinearMatrixBlock:
    """Moment matrix block of order k: cell (a, b) reads w_{alpha_a + alpha_b}."""
    if k < 0:
        raise ValueError("order must be >= 0")
    rows = basis(n, k)
    cells = {}
    for a in range(len(rows)):
        pa = rows[a]
        for b in range(a, len(rows)):
            pb = rows[b]
            key = tuple(x + y for x, y in zip(pa, pb))
            cells[(a, b)] = {idx.position(key): 1.0}
    return LinearMatrixBlock(size=len(rows), label=label, cells=cells)


def localizing_block(
    p: Polynomial, n: int, k: int, idx: TmsIndex, label: str = "localizing"
) -> LinearMatrixBlock:
    """Localizing matrix of p at order k.

    Row/column monomials have degree at most k1 = k - ceil(deg(p)/2); cell
    (a, b) reads sum_gamma p_gamma * w_{alpha_a + alpha_b + gamma}.  With
    p = 1 this reduces to the moment block of the same order.
    """
    half = (p.degree + 1) // 2
    if k < half:
        raise ValueError(f"order k={k} too small for constraint of degree {p.degree}")
    k1 = k - half
    rows = basis(n, k1)
    cells = {}
    for a in range(len(rows)):
        pa = rows[a]
        for b in range(a, len(rows)):
            pb = rows[b]
            functional: dict = {}
            for gamma, coef in p.terms.items():
                key = tuple(x + y + g for x, y, g in zip(pa, pb, gamma))
                pos = idx.position(key)
                functional[pos] = functional.get(pos, 0.0) + coef
            cells[(a, b)] = functional
    return LinearMatrixBlock(size=len(rows), label=label, cells=cells)


def assemble_relaxation(pop: PopInstance, k: int) -> MomentRelaxation:
    """Order-k moment relaxation: one moment block plus one localizing block
    per constraint, objective = minimize the moment of the bound variable."""
    k0 = pop.min_order
    if k < k0:
        raise ValueError(f"relaxation order {k} below minimum order {k0}")
    idx = TmsIndex(pop.n, k)
    blocks = [moment_block(pop.n, k, idx)]
    for (j, sign), g in zip(pop.labels, pop.constraints):
        blocks.append(localizing_block(g, pop.n, k, idx, label=f"g[{j}{sign}]"))
    e_last = tuple([0] * (pop.n - 1) + [1])
    return MomentRelaxation(
        n=pop.n,
        order=k,
        min_order=k0,
        tms=idx,
        objective_index=idx.position(e_last),
        blocks=blocks,
    )


def dirac_moments(idx: TmsIndex, point: Sequence[float]) -> np.ndarray:
    """Moment vector of the point mass at the given point: w_alpha = point**alpha."""
    z = np.asarray(point, dtype=float)
    if z.shape != (idx.n,):
        raise ValueError(f"point has shape {z.shape}, expected ({idx.n},)")
    w = np.empty(len(idx))
    for i, power in enumerate(idx.basis):
        value = 1.0
        for zi, e in zip(z, power):
            if e:
                value *= zi**e
        w[i] = value
    return w


def export_sdpa(relax: MomentRelaxation) -> str:
    """Serialize as SDPA sparse format (.dat-s).

    The pinned w_0 is eliminated by substitution: entries reading w_0 become
    the constant matrix F_0 (with SDPA's sign convention X = sum x_i F_i - F_0)
    and the remaining moments are the primal variables x_1..x_m in tms order.
    Deterministic output; coefficients printed with 17 significant digits.
    """
    m = relax.num_moments - 1
    lines = [
        f'"polyact moment relaxation: n={relax.n} k={relax.order} k0={relax.min_order}"',
        '"blocks: ' + ", ".join(b.label for b in relax.blocks) + '"',
        f"{m} = mDIM",
        f"{len(relax.blocks)} = nBLOCK",
        " ".join(str(b.size) for b in relax.blocks) + " = bLOCKsTRUCT",
    ]
    cvec = ["0"] * m
    cvec[relax.objective_index - 1] = "1"
    lines.append(" ".join(cvec))

    entries = []
    for bnum, block in enumerate(relax.blocks, start=1):
        for (a, b) in sorted(block.cells):
            for idx in sorted(block.cells[(a, b)]):
                coef = block.cells[(a, b)][idx]
                if coef == 0.0:
                    continue
                if idx == 0:
                    # Constant part; F_0 enters with opposite sign.
                    entries.append((0, bnum, a + 1, b + 1, -coef))
                else:
                    entries.append((idx, bnum, a + 1, b + 1, coef))
    entries.sort(key=lambda e: (e[0], e[1], e[2], e[3]))
    for k_idx, bnum, i, j, v in entries:
        lines.append(f"{k_idx} {bnum} {i} {j} {v:.17g}")
    return "\n".join(lines) + "\n"
