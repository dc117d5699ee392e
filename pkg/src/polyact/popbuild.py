"""Epigraph polynomial optimization problem built from a network and data.

Training minimizes the sup-norm of the sample-averaged residual.  Introducing
a bound variable theta for that norm and stacking z = (coefficients, theta)
turns training into a polynomial program with linear objective:

    minimize    z_n  (= theta)
    subject to  z_n + r_j(z) >= 0   and   z_n - r_j(z) >= 0,   j = 1..m_out

where r_j is the j-th component of the averaged residual, a polynomial in the
coefficient variables only.  Each output component contributes one (+, -)
constraint pair, in increasing j, so downstream block layouts are stable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .netmodel import NetworkSpec, TrainingSet, check_coefficients, numeric_forward, symbolic_forward
from .polyring import Polynomial, format_polynomial


@dataclass(frozen=True)
class ResidualSystem:
    """Averaged residual polynomials, embedded into the full z-space.

    The polynomials depend only on the coefficient variables z_1..z_{n-1};
    the bound variable z_n never appears in them.
    """

    n: int
    components: tuple

    def evaluate_at_coeffs(self, coeffs: Sequence[float]) -> np.ndarray:
        z = np.concatenate([np.asarray(coeffs, float), [0.0]])
        return np.array([p.evaluate(z) for p in self.components])


@dataclass(frozen=True)
class PopInstance:
    """Polynomial program min z_n over the residual epigraph."""

    n: int
    objective: Polynomial
    constraints: tuple
    labels: tuple  # per-constraint (output component j, '+' or '-')
    var_names: tuple

    @property
    def num_constraints(self) -> int:
        return len(self.constraints)

    @property
    def constraint_degree(self) -> int:
        return max(max(1, g.degree) for g in self.constraints)

    @property
    def min_order(self) -> int:
        """Smallest admissible relaxation order, ceil(deg(g) / 2)."""
        return (self.constraint_degree + 1) // 2

    def residual_components(self) -> list[Polynomial]:
        """Recover r_j = (g_{2j-1} - g_{2j}) / 2 for the (+,-) pairs."""
        out = []
        for j in range(0, len(self.constraints) - 1, 2):
            if self.labels[j][1] != "+" or self.labels[j + 1][1] != "-":
                continue
            out.append(0.5 * (self.constraints[j] - self.constraints[j + 1]))
        return out

    def loss_at(self, coeffs: Sequence[float]) -> float:
        """Sup-norm of the averaged residual at the given coefficients."""
        z = np.concatenate([np.asarray(coeffs, float), [0.0]])
        return max(abs(p.evaluate(z)) for p in self.residual_components())

    def minimal_feasible_bound(self, coeffs: Sequence[float]) -> float:
        """Smallest bound-variable value keeping every constraint nonnegative
        at the given coefficients; the objective a candidate point achieves.

        Constraints must be affine in the bound variable (true for the
        epigraph pairs and any added linear constraints); pure bound-variable
        box terms are handled as an upper cap.  Returns +inf when no
        feasible value exists.
        """
        z0 = np.concatenate([np.asarray(coeffs, float), [0.0]])
        z1 = z0.copy()
        z1[-1] = 1.0
        lo, hi = -np.inf, np.inf
        for g in self.constraints:
            theta_degree = max((p[-1] for p in g.terms), default=0)
            if theta_degree == 0:
                if g.evaluate(z0) < 0:
                    return np.inf
                continue
            if theta_degree == 1:
                a = g.evaluate(z0)
                b = g.evaluate(z1) - a
                if abs(b) < 1e-15:
                    if a < 0:
                        return np.inf
                    continue
                if b > 0:
                    lo = max(lo, -a / b)
                else:
                    hi = min(hi, -a / b)
            elif theta_degree == 2 and len(g.terms) <= 2:
                # box term R^2 - theta^2: caps |theta| at R
                const = g.coefficient((0,) * self.n)
                quad = g.coefficient((0,) * (self.n - 1) + (2,))
                if quad < 0 and const > 0:
                    r = float(np.sqrt(-const / quad))
                    lo, hi = max(lo, -r), min(hi, r)
                else:
                    raise ValueError("unsupported bound-variable dependence")
            else:
                raise ValueError("unsupported bound-variable dependence")
        return lo if lo <= hi + 1e-12 else np.inf

    def summary(self) -> str:
        lines = [
            f"variables: {', '.join(self.var_names)}  (n = {self.n})",
            f"objective: {self.var_names[-1]}",
            f"min relaxation order: {self.min_order}",
            "constraints:",
        ]
        for (j, sign), g in zip(self.labels, self.constraints):
            lines.append(f"  g[{j}{sign}]: {format_polynomial(g, self.var_names)} >= 0")
        return "\n".join(lines)


def averaged_residual(net: NetworkSpec, data: TrainingSet) -> ResidualSystem:
    """Mean of the symbolic forward maps minus the mean output."""
    if data.xs.shape[1] != net.dims[0] or data.ys.shape[1] != net.dims[-1]:
        raise ValueError(
            f"data shapes {data.xs.shape[1]}/{data.ys.shape[1]} do not match "
            f"network dims {net.dims[0]}/{net.dims[-1]}"
        )
    n_c = net.coeff_length
    n = n_c + 1
    n_samples = len(data)
    mean_out = [Polynomial.zero(n_c) for _ in range(net.dims[-1])]
    for x in data.xs:
        for j, p in enumerate(symbolic_forward(net, x)):
            mean_out[j] = mean_out[j] + p
    y_bar = data.ys.mean(axis=0)
    scale = 1.0 / n_samples
    components = tuple(
        (scale * mean_out[j] - y_bar[j]).embed(n) for j in range(net.dims[-1])
    )
    return ResidualSystem(n=n, components=components)


def build_pop(net: NetworkSpec, data: TrainingSet) -> PopInstance:
    """Wrap each averaged-residual component into its (+,-) constraint pair."""
    residual = averaged_residual(net, data)
    n = residual.n
    theta = Polynomial.variable(n, n - 1)
    constraints = []
    labels = []
    for j, r in enumerate(residual.components, start=1):
        constraints.append(theta + r)
        labels.append((j, "+"))
        constraints.append(theta - r)
        labels.append((j, "-"))
    var_names = _var_names(net)
    return PopInstance(
        n=n,
        objective=theta,
        constraints=tuple(constraints),
        labels=tuple(labels),
        var_names=var_names,
    )


def add_box_constraints(pop: PopInstance, radius: float) -> PopInstance:
    """Append R^2 - z_i^2 >= 0 for every variable.

    An extension beyond the core formulation: useful when noisy data leaves
    the feasible set unbounded and the relaxation weakly attained.
    """
    if radius <= 0:
        raise ValueError("box radius must be positive")
    constraints = list(pop.constraints)
    labels = list(pop.labels)
    for i in range(pop.n):
        z_i = Polynomial.variable(pop.n, i)
        constraints.append(radius**2 - z_i * z_i)
        labels.append((i, "box"))
    return PopInstance(
        n=pop.n,
        objective=pop.objective,
        constraints=tuple(constraints),
        labels=tuple(labels),
        var_names=pop.var_names,
    )


def loss_eval(net: NetworkSpec, data: TrainingSet, coeffs: Sequence[float]) -> float:
    """Sup-norm of the averaged numeric residual; the quantity being minimized."""
    c = check_coefficients(net, coeffs)
    residual = np.zeros(net.dims[-1])
    for x, y in zip(data.xs, data.ys):
        residual += numeric_forward(net, c, x) - y
    residual /= len(data)
    return float(np.max(np.abs(residual)))


def _var_names(net: NetworkSpec) -> tuple:
    return tuple(net.coeff_labels()) + ("theta",)
