from collections import namedtuple
from enum import Enum, auto

import numpy as np
from common import ContractViolationError, DomainError, NotATangencyError
from jets.jets import JetPair
from model.model import GlobalMapModel, make_model, replace_blocks

DEFAULT_TOLERANCE = 1e-9
RANK_STEP = 1e-7
RANK_THRESHOLD = 1e-8

SplittingChart = namedtuple("SplittingChart", ["n", "count"])


class IndexKind(Enum):
    INDEX = auto()
    FLAT = auto()


class TangencyIndex(namedtuple("TangencyIndex", ["kind", "n", "m"])):
    """
    Order n and suborder m of a corank-2 tangency, or Flat.

    Indices compare lexicographically on (n, m); Flat sits above every index.
    """

    __slots__ = ()

    @classmethod
    def index(cls, n: int, m: int) -> "TangencyIndex":
        if n < 1 or not 0 <= m <= n + 1:
            raise DomainError(f"TangencyIndex - invalid index ({n}, {m})")
        return cls(IndexKind.INDEX, n, m)

    @classmethod
    def flat(cls) -> "TangencyIndex":
        return cls(IndexKind.FLAT, None, None)

    @property
    def is_flat(self) -> bool:
        return self.kind is IndexKind.FLAT

    def _key(self):
        return (1, 0, 0) if self.is_flat else (0, self.n, self.m)

    def __lt__(self, other):
        return self._key() < other._key()

    def __le__(self, other):
        return self._key() <= other._key()

    def __gt__(self, other):
        return self._key() > other._key()

    def __ge__(self, other):
        return self._key() >= other._key()

    def __str__(self) -> str:
        return "Flat" if self.is_flat else f"({self.n}, {self.m})"


def tangency_index(
    jp: JetPair, tol: float = DEFAULT_TOLERANCE, scale: float = None
) -> TangencyIndex:
    """
    Read the index off a tangent jet pair.

    Coefficients are compared after dividing by the largest coefficient of
    the pair, or by ``scale`` when that is larger. A coefficient counts as
    nonzero when either component exceeds ``tol`` at that monomial.
    """
    if tol <= 0:
        raise DomainError(f"tangency_index - tol must be positive, got {tol}")
    magnitude = max(jp.max_abs(), scale or 0.0)
    if magnitude == 0.0:
        return TangencyIndex.flat()

    for j in range(jp.degree_cap + 1):
        block = np.maximum(
            np.abs(jp.y1.degree_block(j)), np.abs(jp.y2.degree_block(j))
        )
        hits = np.flatnonzero(block / magnitude > tol)
        if hits.size == 0:
            continue
        if j == 0:
            raise NotATangencyError(
                "tangency_index - constant term at the base point, not a tangency"
            )
        if j == 1:
            raise NotATangencyError(
                "tangency_index - linear terms at the base point, not a corank-2 tangency"
            )
        return TangencyIndex.index(j - 1, int(hits[0]))
    return TangencyIndex.flat()


def splitting_count(n: int) -> int:
    if n < 1:
        raise DomainError(f"splitting_count - n must be >= 1, got {n}")
    return n * n + 3 * n + 2


def splitting_chart(n: int) -> SplittingChart:
    return SplittingChart(n, splitting_count(n))


def apply_split(gm: GlobalMapModel, dmu, dnu) -> GlobalMapModel:
    dmu = np.asarray(dmu, dtype=float)
    dnu = np.asarray(dnu, dtype=float)
    if dmu.shape != gm.mu.shape or dnu.shape != gm.nu.shape:
        raise ContractViolationError(
            f"apply_split - deltas must have shape {gm.mu.shape}, "
            f"got {dmu.shape} and {dnu.shape}"
        )
    return replace_blocks(gm, mu=gm.mu + dmu, nu=gm.nu + dnu)


def apply_subsplit(gm: GlobalMapModel, d_lead_a, d_lead_b) -> GlobalMapModel:
    """Shift the degree-(n+1) coefficients A_i, B_i."""
    d_lead_a = np.asarray(d_lead_a, dtype=float)
    d_lead_b = np.asarray(d_lead_b, dtype=float)
    if d_lead_a.shape != gm.lead_a.shape or d_lead_b.shape != gm.lead_b.shape:
        raise ContractViolationError(
            f"apply_subsplit - deltas must have shape {gm.lead_a.shape}, "
            f"got {d_lead_a.shape} and {d_lead_b.shape}"
        )
    return replace_blocks(gm, lead_a=gm.lead_a + d_lead_a, lead_b=gm.lead_b + d_lead_b)


def canonical_family(eps):
    """Every splitting functional gets its own parameter."""
    half = len(eps) // 2
    return eps[:half], eps[half:]


def split_rank(n: int, family=None) -> int:
    """Rank of d(mu, nu)/d(eps) at eps = 0, by forward differences."""
    family = family or canonical_family
    count = splitting_count(n)
    lead = np.zeros(n + 2)
    lead[0] = 1.0
    base = make_model(n, lead, np.zeros(n + 2))

    def coefficients(eps):
        dmu, dnu = family(eps)
        split = apply_split(base, dmu, dnu)
        return np.concatenate([split.mu, split.nu])

    origin = coefficients(np.zeros(count))
    jacobian = np.empty((count, count))
    for column in range(count):
        eps = np.zeros(count)
        eps[column] = RANK_STEP
        jacobian[:, column] = (coefficients(eps) - origin) / RANK_STEP
    singular_values = np.linalg.svd(jacobian, compute_uv=False)
    return int(np.sum(singular_values > RANK_THRESHOLD))


def split_rank_check(n: int, family=None) -> bool:
    return split_rank(n, family) == splitting_count(n)
