"""
Truncated power series in two variables (Y1, Y2).

A ``Jet2`` of degree cap ``d`` keeps the coefficients of every monomial
``Y1**(j-i) * Y2**i`` with ``0 <= i <= j <= d`` in one flat array ordered
by total degree ``j`` and, inside a degree, by the ``Y2`` power ``i``::

    [c(0,0), c(1,0), c(1,1), c(2,0), c(2,1), c(2,2), ...]

Jets of different caps never mix; use ``with_cap`` to move between caps.
All values are immutable.
"""
from collections import namedtuple
import functools
import math

import numpy as np
from common import ContractViolationError, DomainError


def monomial_count(degree_cap: int) -> int:
    return (degree_cap + 1) * (degree_cap + 2) // 2


def monomial_index(j: int, i: int) -> int:
    return j * (j + 1) // 2 + i


@functools.lru_cache(maxsize=None)
def exponents(degree_cap: int):
    """Return the (Y1 power, Y2 power) arrays matching the flat layout."""
    p1, p2 = [], []
    for j in range(degree_cap + 1):
        for i in range(j + 1):
            p1.append(j - i)
            p2.append(i)
    p1, p2 = np.array(p1, dtype=int), np.array(p2, dtype=int)
    p1.setflags(write=False)
    p2.setflags(write=False)
    return p1, p2


class Jet2:
    """Truncated bivariate power series"""

    __slots__ = ("degree_cap", "coeffs")

    def __init__(self, degree_cap: int, coeffs=None) -> None:
        if degree_cap < 0:
            raise DomainError(f"Jet2 - negative degree cap {degree_cap}")
        size = monomial_count(degree_cap)
        if coeffs is None:
            data = np.zeros(size)
        else:
            data = np.array(coeffs, dtype=float)
        if data.shape != (size,):
            raise ContractViolationError(
                f"Jet2 - cap {degree_cap} needs {size} coefficients, got {data.shape}"
            )
        if not np.all(np.isfinite(data)):
            raise ContractViolationError("Jet2 - coefficients must be finite")
        data.setflags(write=False)
        self.degree_cap = degree_cap
        self.coeffs = data

    @classmethod
    def zero(cls, degree_cap: int) -> "Jet2":
        return cls(degree_cap)

    @classmethod
    def constant(cls, degree_cap: int, value: float) -> "Jet2":
        data = np.zeros(monomial_count(degree_cap))
        data[0] = value
        return cls(degree_cap, data)

    @classmethod
    def variable(cls, degree_cap: int, which: int) -> "Jet2":
        """Y1 for which=1, Y2 for which=2."""
        if degree_cap < 1:
            raise DomainError("Jet2 - a variable needs degree cap >= 1")
        return cls.from_terms(degree_cap, {(1, 0) if which == 1 else (0, 1): 1.0})

    @classmethod
    def from_terms(cls, degree_cap: int, terms: dict) -> "Jet2":
        """Build from {(Y1 power, Y2 power): coefficient}."""
        data = np.zeros(monomial_count(degree_cap))
        for (p1, p2), value in terms.items():
            if p1 < 0 or p2 < 0 or p1 + p2 > degree_cap:
                raise ContractViolationError(
                    f"Jet2 - monomial ({p1}, {p2}) outside cap {degree_cap}"
                )
            data[monomial_index(p1 + p2, p2)] += value
        return cls(degree_cap, data)

    @classmethod
    def from_grid(cls, degree_cap: int, grid) -> "Jet2":
        """Inverse of ``grid``; entries above total degree ``degree_cap`` are dropped."""
        p1, p2 = exponents(degree_cap)
        return cls(degree_cap, np.asarray(grid, dtype=float)[p1, p2])

    def grid(self) -> np.ndarray:
        """Square array g with g[p1, p2] the coefficient of Y1**p1 * Y2**p2."""
        p1, p2 = exponents(self.degree_cap)
        out = np.zeros((self.degree_cap + 1, self.degree_cap + 1))
        out[p1, p2] = self.coeffs
        return out

    def coefficient(self, p1: int, p2: int) -> float:
        if p1 < 0 or p2 < 0 or p1 + p2 > self.degree_cap:
            raise DomainError(
                f"Jet2 - monomial ({p1}, {p2}) outside cap {self.degree_cap}"
            )
        return float(self.coeffs[monomial_index(p1 + p2, p2)])

    @property
    def constant_term(self) -> float:
        return float(self.coeffs[0])

    def degree_block(self, j: int) -> np.ndarray:
        """Coefficients of total degree j, indexed by the Y2 power."""
        start = monomial_index(j, 0)
        return self.coeffs[start : start + j + 1]

    def terms(self):
        p1, p2 = exponents(self.degree_cap)
        for k in np.flatnonzero(self.coeffs):
            yield int(p1[k]), int(p2[k]), float(self.coeffs[k])

    def with_cap(self, degree_cap: int) -> "Jet2":
        size = monomial_count(degree_cap)
        data = np.zeros(size)
        keep = min(size, self.coeffs.size)
        data[:keep] = self.coeffs[:keep]
        return Jet2(degree_cap, data)

    def scale_degrees(self, factors) -> "Jet2":
        """Multiply every degree-j coefficient by factors[j]."""
        factors = np.asarray(factors, dtype=float)
        if factors.shape != (self.degree_cap + 1,):
            raise ContractViolationError("Jet2 - one factor per degree is required")
        p1, p2 = exponents(self.degree_cap)
        return Jet2(self.degree_cap, self.coeffs * factors[p1 + p2])

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.coeffs)))

    def __add__(self, other):
        if isinstance(other, Jet2):
            return jet_add(self, other)
        return Jet2(self.degree_cap, self.coeffs + np.eye(1, self.coeffs.size)[0] * other)

    __radd__ = __add__

    def __neg__(self):
        return Jet2(self.degree_cap, -self.coeffs)

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, other):
        if isinstance(other, Jet2):
            return jet_mul(self, other)
        return Jet2(self.degree_cap, self.coeffs * float(other))

    __rmul__ = __mul__

    def __call__(self, y1, y2):
        return jet_eval(self, y1, y2)

    def __repr__(self) -> str:
        return f"Jet2(degree_cap={self.degree_cap}, coeffs={self.coeffs.tolist()})"


class JetPair(namedtuple("JetPair", ["y1", "y2"])):
    """The (Ybar1, Ybar2) components of a map restricted to the tangent plane"""

    __slots__ = ()

    def __new__(cls, y1: Jet2, y2: Jet2):
        if y1.degree_cap != y2.degree_cap:
            raise ContractViolationError(
                f"JetPair - caps differ: {y1.degree_cap} vs {y2.degree_cap}"
            )
        return super().__new__(cls, y1, y2)

    @classmethod
    def identity(cls, degree_cap: int) -> "JetPair":
        return cls(Jet2.variable(degree_cap, 1), Jet2.variable(degree_cap, 2))

    @classmethod
    def zero(cls, degree_cap: int) -> "JetPair":
        return cls(Jet2.zero(degree_cap), Jet2.zero(degree_cap))

    @property
    def degree_cap(self) -> int:
        return self.y1.degree_cap

    def rotate(self, theta: float) -> "JetPair":
        c, s = math.cos(theta), math.sin(theta)
        return JetPair(
            Jet2(self.degree_cap, c * self.y1.coeffs - s * self.y2.coeffs),
            Jet2(self.degree_cap, s * self.y1.coeffs + c * self.y2.coeffs),
        )

    def linear_map(self, matrix) -> "JetPair":
        """Apply a 2x2 matrix to the pair of components."""
        m = np.asarray(matrix, dtype=float)
        return JetPair(
            Jet2(self.degree_cap, m[0, 0] * self.y1.coeffs + m[0, 1] * self.y2.coeffs),
            Jet2(self.degree_cap, m[1, 0] * self.y1.coeffs + m[1, 1] * self.y2.coeffs),
        )

    def with_cap(self, degree_cap: int) -> "JetPair":
        return JetPair(self.y1.with_cap(degree_cap), self.y2.with_cap(degree_cap))

    def scale_degrees(self, factors) -> "JetPair":
        return JetPair(self.y1.scale_degrees(factors), self.y2.scale_degrees(factors))

    def max_abs(self) -> float:
        return max(self.y1.max_abs(), self.y2.max_abs())

    def jacobian(self) -> np.ndarray:
        return np.array(
            [
                [self.y1.coefficient(1, 0), self.y1.coefficient(0, 1)],
                [self.y2.coefficient(1, 0), self.y2.coefficient(0, 1)],
            ]
        )

    def evaluate(self, y1, y2):
        return jet_eval(self.y1, y1, y2), jet_eval(self.y2, y1, y2)


def _check_caps(a: Jet2, b: Jet2, operation: str) -> None:
    if a.degree_cap != b.degree_cap:
        raise ContractViolationError(
            f"{operation} - degree caps differ: {a.degree_cap} vs {b.degree_cap}"
        )


def jet_add(a: Jet2, b: Jet2) -> Jet2:
    _check_caps(a, b, "jet_add")
    return Jet2(a.degree_cap, a.coeffs + b.coeffs)


def jet_mul(a: Jet2, b: Jet2) -> Jet2:
    _check_caps(a, b, "jet_mul")
    cap = a.degree_cap
    right = b.grid()
    out = np.zeros_like(right)
    for p1, p2, value in a.terms():
        out[p1:, p2:] += value * right[: cap + 1 - p1, : cap + 1 - p2]
    return Jet2.from_grid(cap, out)


def jet_compose(outer: Jet2, inner: JetPair, shift_ok: bool = False) -> Jet2:
    """
    outer(inner.y1, inner.y2), truncated at the common cap.

    Inner constant terms make the truncation lose information unless ``outer``
    is a genuine polynomial; pass ``shift_ok=True`` to substitute anyway.
    """
    _check_caps(outer, inner.y1, "jet_compose")
    if not shift_ok and (inner.y1.constant_term != 0.0 or inner.y2.constant_term != 0.0):
        raise DomainError(
            "jet_compose - inner pair has a constant term; truncation would be invalid"
        )
    cap = outer.degree_cap
    powers = [Jet2.constant(cap, 1.0)]
    for _ in range(cap):
        powers.append(jet_mul(powers[-1], inner.y2))
    table = outer.grid()
    result = Jet2.zero(cap)
    for p1 in range(cap, -1, -1):
        column = np.zeros(monomial_count(cap))
        for p2 in range(cap + 1 - p1):
            if table[p1, p2] != 0.0:
                column += table[p1, p2] * powers[p2].coeffs
        result = Jet2(cap, jet_mul(result, inner.y1).coeffs + column)
    return result


def compose_pair(outer: JetPair, inner: JetPair, shift_ok: bool = False) -> JetPair:
    return JetPair(
        jet_compose(outer.y1, inner, shift_ok), jet_compose(outer.y2, inner, shift_ok)
    )


def jet_partial(a: Jet2, i: int, j: int) -> float:
    """Mixed partial d^(i+j) / dY1^i dY2^j at the origin."""
    if i < 0 or j < 0 or i + j > a.degree_cap:
        raise DomainError(
            f"jet_partial - order ({i}, {j}) exceeds degree cap {a.degree_cap}"
        )
    return math.factorial(i) * math.factorial(j) * a.coefficient(i, j)


def jet_eval(a: Jet2, y1, y2):
    return np.polynomial.polynomial.polyval2d(y1, y2, a.grid())
