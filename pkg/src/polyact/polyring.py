"""Sparse multivariate polynomials with a fixed graded-lex monomial order.

A polynomial in n variables is stored as a dict mapping exponent tuples to
float coefficients:

    z1**2 + 2*z1*z2 - 5   (n=2)  ->  {(2, 0): 1.0, (1, 1): 2.0, (0, 0): -5.0}

The zero polynomial is the empty dict.  Coefficients whose magnitude falls
below DROP_TOL after arithmetic are dropped, so term maps stay canonical and
float noise from repeated composition cannot accumulate into spurious terms.

Monomial order is graded lexicographic: ascending total degree, ties broken
so that for each degree the variable powers appear in the order produced by
itertools.combinations_with_replacement, e.g. for n=2, d=2:

    (0,0), (1,0), (0,1), (2,0), (1,1), (0,2)

This order makes the degree-d' basis a prefix of the degree-d basis for
d' <= d, which downstream code relies on when it nests moment matrices.
"""

from __future__ import annotations

import math
from itertools import combinations_with_replacement
from typing import Iterable, Mapping, Sequence

import numpy as np

# Coefficients smaller than this are treated as exact zeros after arithmetic.
DROP_TOL = 1e-14

Power = tuple


class Polynomial:
    """Immutable sparse polynomial over a fixed number of variables."""

    __slots__ = ("n", "terms")

    def __init__(self, n: int, terms: Mapping[Power, float] | None = None):
        if n < 1:
            raise ValueError(f"variable count must be >= 1, got {n}")
        clean = {}
        if terms:
            for power, coef in terms.items():
                if len(power) != n:
                    raise ValueError(f"power {power} has wrong length for n={n}")
                if abs(coef) >= DROP_TOL:
                    clean[tuple(power)] = float(coef)
        self.n = n
        self.terms = clean

    # -- constructors ------------------------------------------------------

    @classmethod
    def zero(cls, n: int) -> "Polynomial":
        return cls(n, {})

    @classmethod
    def constant(cls, n: int, value: float) -> "Polynomial":
        return cls(n, {(0,) * n: value})

    @classmethod
    def variable(cls, n: int, index: int) -> "Polynomial":
        """The polynomial z_index (0-based index)."""
        if not 0 <= index < n:
            raise ValueError(f"variable index {index} out of range for n={n}")
        power = [0] * n
        power[index] = 1
        return cls(n, {tuple(power): 1.0})

    # -- basic queries -----------------------------------------------------

    @property
    def degree(self) -> int:
        """Total degree; 0 for the zero polynomial by convention."""
        if not self.terms:
            return 0
        return max(sum(p) for p in self.terms)

    def is_zero(self) -> bool:
        return not self.terms

    def coefficient(self, power: Power) -> float:
        return self.terms.get(tuple(power), 0.0)

    # -- arithmetic ---------------------------------------------------------

    def _coerce(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            if other.n != self.n:
                raise ValueError(f"variable count mismatch: {self.n} vs {other.n}")
            return other
        return Polynomial.constant(self.n, float(other))

    def __add__(self, other) -> "Polynomial":
        other = self._coerce(other)
        out = dict(self.terms)
        for power, coef in other.terms.items():
            out[power] = out.get(power, 0.0) + coef
        return Polynomial(self.n, out)

    __radd__ = __add__

    def __neg__(self) -> "Polynomial":
        return Polynomial(self.n, {p: -c for p, c in self.terms.items()})

    def __sub__(self, other) -> "Polynomial":
        return self + (-self._coerce(other))

    def __rsub__(self, other) -> "Polynomial":
        return self._coerce(other) + (-self)

    def __mul__(self, other) -> "Polynomial":
        if not isinstance(other, Polynomial):
            a = float(other)
            return Polynomial(self.n, {p: a * c for p, c in self.terms.items()})
        if other.n != self.n:
            raise ValueError(f"variable count mismatch: {self.n} vs {other.n}")
        out: dict = {}
        for p1, c1 in self.terms.items():
            for p2, c2 in other.terms.items():
                key = tuple(a + b for a, b in zip(p1, p2))
                out[key] = out.get(key, 0.0) + c1 * c2
        return Polynomial(self.n, out)

    __rmul__ = __mul__

    def __pow__(self, exponent: int) -> "Polynomial":
        if not isinstance(exponent, int) or exponent < 0:
            raise ValueError("exponent must be a nonnegative integer")
        result = Polynomial.constant(self.n, 1.0)
        base = self
        e = exponent
        while e:
            if e & 1:
                result = result * base
            base = base * base if e > 1 else base
            e >>= 1
        return result

    def __eq__(self, other) -> bool:
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.n == other.n and self.terms == other.terms

    def __hash__(self):
        return hash((self.n, frozenset(self.terms.items())))

    # -- evaluation and reshaping -------------------------------------------

    def __call__(self, z: Sequence[float]) -> float:
        return self.evaluate(z)

    def evaluate(self, z: Sequence[float]) -> float:
        """Evaluate at a point, sum of coef * z**power over stored terms."""
        z = np.asarray(z, dtype=float)
        if z.shape != (self.n,):
            raise ValueError(f"point has shape {z.shape}, expected ({self.n},)")
        total = 0.0
        for power, coef in self.terms.items():
            value = coef
            for zi, e in zip(z, power):
                if e:
                    value *= zi**e
            total += value
        return total

    def embed(self, n_new: int) -> "Polynomial":
        """Reinterpret in a larger variable space; new variables get power 0."""
        if n_new < self.n:
            raise ValueError(f"cannot embed n={self.n} into n={n_new}")
        pad = (0,) * (n_new - self.n)
        return Polynomial(n_new, {p + pad: c for p, c in self.terms.items()})

    def partial(self, index: int) -> "Polynomial":
        """Partial derivative with respect to variable `index`."""
        if not 0 <= index < self.n:
            raise ValueError(f"variable index {index} out of range for n={self.n}")
        out: dict = {}
        for power, coef in self.terms.items():
            e = power[index]
            if e == 0:
                continue
            key = power[:index] + (e - 1,) + power[index + 1 :]
            out[key] = out.get(key, 0.0) + e * coef
        return Polynomial(self.n, out)

    def __repr__(self) -> str:
        names = [f"z{i + 1}" for i in range(self.n)]
        return f"Polynomial({self.n}, {format_polynomial(self, names)})"


class MonomialBasis:
    """All exponent tuples with total degree <= d over n variables, graded-lex.

    The list for degree d' < d is exactly a prefix of the list for degree d,
    and position(alpha) gives the index of a power in O(1).
    """

    __slots__ = ("n", "d", "powers", "_index")

    def __init__(self, n: int, d: int):
        if n < 1 or d < 0:
            raise ValueError(f"invalid basis parameters n={n}, d={d}")
        powers = []
        for deg in range(d + 1):
            for combo in combinations_with_replacement(range(n), deg):
                power = [0] * n
                for var in combo:
                    power[var] += 1
                powers.append(tuple(power))
        self.n = n
        self.d = d
        self.powers = powers
        self._index = {p: i for i, p in enumerate(powers)}

    def __len__(self) -> int:
        return len(self.powers)

    def __iter__(self):
        return iter(self.powers)

    def __getitem__(self, i: int) -> Power:
        return self.powers[i]

    def position(self, power: Power) -> int:
        try:
            return self._index[tuple(power)]
        except KeyError:
            raise KeyError(f"power {power} not in basis(n={self.n}, d={self.d})")

    def __contains__(self, power: Power) -> bool:
        return tuple(power) in self._index


def basis(n: int, d: int) -> MonomialBasis:
    """Graded-lex monomial basis of degree <= d in n variables."""
    return MonomialBasis(n, d)


def basis_size(n: int, d: int) -> int:
    return math.comb(n + d, d)


def compose_affine(coeffs: Sequence, args: Iterable[Polynomial]) -> list[Polynomial]:
    """Apply the univariate polynomial sum(coeffs[j] * t**j) componentwise.

    `coeffs` is given highest degree first, (c_d, ..., c_1, c_0).  Entries may
    be plain numbers or Polynomials over the same variable space as `args`,
    which is how symbolic activation coefficients enter the network map.
    """
    coeffs = list(coeffs)
    if not coeffs:
        raise ValueError("empty coefficient list")
    args = list(args)
    if not args:
        raise ValueError("empty argument list")
    n = args[0].n
    out = []
    for arg in args:
        if arg.n != n:
            raise ValueError("arguments live in different variable spaces")
        # Horner in the argument polynomial.
        acc = Polynomial.constant(n, 0.0)
        for c in coeffs:
            term = c if isinstance(c, Polynomial) else Polynomial.constant(n, float(c))
            acc = acc * arg + term
        out.append(acc)
    return out


def format_polynomial(p: Polynomial, names: Sequence[str]) -> str:
    """Render terms in graded-lex order, e.g. '3*c21 + 29*c12*c21 - 52'."""
    if len(names) != p.n:
        raise ValueError("need one name per variable")
    if p.is_zero():
        return "0"

    def sort_key(power):
        return (sum(power), tuple(-e for e in power))

    pieces = []
    for power, coef in sorted(p.terms.items(), key=lambda kv: sort_key(kv[0])):
        factors = []
        for name, e in zip(names, power):
            if e == 1:
                factors.append(name)
            elif e > 1:
                factors.append(f"{name}^{e}")
        mag = abs(coef)
        mag_str = f"{mag:g}"
        if factors:
            body = "*".join(factors) if mag == 1.0 else "*".join([mag_str] + factors)
        else:
            body = mag_str
        sign = "-" if coef < 0 else "+"
        pieces.append((sign, body))

    first_sign, first_body = pieces[0]
    text = ("-" if first_sign == "-" else "") + first_body
    for sign, body in pieces[1:]:
        text += f" {sign} {body}"
    return text
