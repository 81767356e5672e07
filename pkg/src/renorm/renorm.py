"""
First-return maps T_k = T1 o T0^k near an order-n corank-2 tangency.

In the shifted variables Y = y_k - y_minus the return map of a desk model is

    Ybar = gamma^k R(k psi) (J(Y) + drift_k)

with J the tangent jet of the global map. drift_k already holds the y_minus
shift as -gamma^(-k) R(-k psi) y_minus, see ``parameter_drift``. Both
rescaling schemes shrink Y by gamma^(-s k / n) (s = 1 keeps the lead block,
s = 2 keeps only the degree <= n polynomial) and absorb the parameters into
(M, N).
"""
from collections import namedtuple
from concurrent.futures import ThreadPoolExecutor
from enum import Enum, auto
import logging
import math
import os

import numpy as np
from common import (
    ContractViolationError,
    DegenerateKError,
    DomainError,
    IllPosedError,
    worker_count,
)
from jets.jets import Jet2, JetPair, exponents, monomial_count
from model.model import (
    global_tangent_jet,
    replace_blocks,
    rotation,
    row_blocks,
    validate_genericity,
)

CONVERGENCE_GRID = 41
FIT_GRID = 21
MONOTONE_SLACK = 1.1
LOG_UNDERFLOW = math.log(1e-300)
LOG_OVERFLOW = math.log(1e300)

FirstReturn = namedtuple("FirstReturn", ["k", "jet", "effective", "aux"])
RenormalizedMap = namedtuple("RenormalizedMap", ["k", "scheme", "jet", "aux_norm"])
ConvergenceRow = namedtuple("ConvergenceRow", ["k", "sup_error", "aux_norm"])
UniversalFit = namedtuple("UniversalFit", ["k", "M", "N", "fit_error", "total_error"])


class SchemeVariant(Enum):
    ORDER_FORM = auto()
    FULL_POLYNOMIAL_FORM = auto()


class RescalingScheme(namedtuple("RescalingScheme", ["variant", "n"])):
    """
    Coordinate and parameter rescaling of the first-return map.

    ORDER_FORM keeps the rotated lead coefficients in the limit,
    FULL_POLYNOMIAL_FORM sends them to zero and leaves an arbitrary
    degree-n polynomial pair.
    """

    __slots__ = ()

    @classmethod
    def order_form(cls, n: int) -> "RescalingScheme":
        return cls(SchemeVariant.ORDER_FORM, _checked_order(n))

    @classmethod
    def full_polynomial_form(cls, n: int) -> "RescalingScheme":
        return cls(SchemeVariant.FULL_POLYNOMIAL_FORM, _checked_order(n))

    @property
    def exponent(self) -> int:
        return 1 if self.variant is SchemeVariant.ORDER_FORM else 2

    @staticmethod
    def delta(k: int) -> float:
        return k**-0.5

    def coordinate_exponents(self, k: int, degree_cap: int) -> np.ndarray:
        """Power of gamma multiplying each degree-j coefficient of Ybar."""
        return np.array(
            [self.exponent * k * (1 - j) / self.n for j in range(degree_cap + 1)]
        )

    def parameter_exponents(self, k: int) -> np.ndarray:
        """Power of gamma taking rotated (mu, nu) to (M, N), one per monomial."""
        p1, p2 = exponents(self.n)
        return k * (1.0 - self.exponent * (p1 + p2 - 1) / self.n)


def _checked_order(n: int) -> int:
    if n < 1:
        raise DomainError(f"RescalingScheme - n must be >= 1, got {n}")
    return int(n)


def _check_k(k: int, operation: str) -> None:
    if k < 1:
        raise DomainError(f"{operation} - k must be >= 1, got {k}")


def _check_scheme(gm, scheme: RescalingScheme, operation: str) -> None:
    if gm.order_cap != scheme.n:
        raise ContractViolationError(
            f"{operation} - scheme order {scheme.n} does not match the model's "
            f"order {gm.order_cap}"
        )


def _power(base: float, exponent: float, operation: str, name: str) -> float:
    log_value = exponent * math.log(base)
    if not LOG_UNDERFLOW <= log_value <= LOG_OVERFLOW:
        raise DegenerateKError(
            f"{operation} - {name} leaves the double range (log {log_value:.1f})"
        )
    return base**exponent


def disk_grid(size: int):
    """Points of a size x size grid on [-1, 1]^2 inside the closed unit disk."""
    axis = np.linspace(-1.0, 1.0, size)
    y1, y2 = np.meshgrid(axis, axis)
    inside = y1**2 + y2**2 <= 1.0 + 1e-12
    return y1[inside], y2[inside]


def sup_distance(first: JetPair, second: JetPair, grid) -> float:
    y1, y2 = grid
    d1, d2 = JetPair(first.y1 - second.y1, first.y2 - second.y2).evaluate(y1, y2)
    return float(np.max(np.hypot(d1, d2)))


def remainder_constant(gm, spec, k: int) -> np.ndarray:
    """What x_plus contributes to the y rows after k turns."""
    _, ry, _, _ = row_blocks(gm)
    return spec.lam**k * gm.a[ry] @ rotation(k * spec.phi) @ gm.x_plus


def parameter_drift(gm, spec, k: int, include_remainder: bool = True):
    """
    Constants the return map adds to (mu_00, nu_00).

    The y_minus part is gamma^-k R(-k psi) y_minus with a minus sign; the
    remainder is the lam^k channel through x_plus.
    """
    _check_k(k, "parameter_drift")
    gamma_inv = _power(spec.gamma, -k, "parameter_drift", "gamma^-k")
    drift = -gamma_inv * (rotation(-k * spec.psi) @ gm.y_minus)
    if include_remainder:
        drift = drift + remainder_constant(gm, spec, k)
    return float(drift[0]), float(drift[1])


def rotated_lead_arrays(gm, spec, k: int):
    c, s = math.cos(k * spec.psi), math.sin(k * spec.psi)
    return c * gm.lead_a - s * gm.lead_b, s * gm.lead_a + c * gm.lead_b


def first_return_jet(gm, spec, k: int) -> FirstReturn:
    _check_k(k, "first_return_jet")
    report = validate_genericity(gm)
    if not report.passed:
        raise ContractViolationError(
            f"first_return_jet - model fails genericity: {', '.join(report.failures)}"
        )
    gamma_k = _power(spec.gamma, k, "first_return_jet", "gamma^k")
    drift = parameter_drift(gm, spec, k)
    tangent = global_tangent_jet(gm)
    effective = JetPair(tangent.y1 + drift[0], tangent.y2 + drift[1])
    rotated = effective.rotate(k * spec.psi)
    jet = JetPair(rotated.y1 * gamma_k, rotated.y2 * gamma_k)
    # x, u and v rows are linear in Y once their constants are shifted away
    return FirstReturn(k, jet, effective, np.array(gm.b))


def rescale(jp: JetPair, spec, k: int, scheme: RescalingScheme, aux=None) -> RenormalizedMap:
    _check_k(k, "rescale")
    if jp.degree_cap != scheme.n + 1:
        raise ContractViolationError(
            f"rescale - jet cap {jp.degree_cap} does not fit scheme order {scheme.n}"
        )
    factors = [
        _power(spec.gamma, e, "rescale", f"degree-{j} factor")
        for j, e in enumerate(scheme.coordinate_exponents(k, jp.degree_cap))
    ]
    try:
        jet = jp.scale_degrees(factors)
    except ContractViolationError as e:
        raise DegenerateKError(f"rescale - rescaled coefficients overflow at k={k}") from e

    aux_norm = 0.0
    if aux is not None and np.size(aux):
        y1, y2 = disk_grid(CONVERGENCE_GRID)
        # X = gamma^(-sk/n) / delta_k * X_new cancels the Y scaling up to delta_k
        values = np.asarray(aux, dtype=float) @ np.vstack([y1, y2])
        aux_norm = scheme.delta(k) * float(np.max(np.abs(values)))
    return RenormalizedMap(k, scheme, jet, aux_norm)


def _coefficients(values, size: int, name: str) -> np.ndarray:
    array = np.asarray(values, dtype=float)
    if array.shape != (size,):
        raise ContractViolationError(
            f"limit_form - {name} needs shape ({size},), got {array.shape}"
        )
    return array


def limit_form(scheme: RescalingScheme, M, N, A_tilde=None, B_tilde=None) -> JetPair:
    n = scheme.n
    size = monomial_count(n)
    M, N = _coefficients(M, size, "M"), _coefficients(N, size, "N")
    if scheme.variant is SchemeVariant.ORDER_FORM:
        if A_tilde is None or B_tilde is None:
            raise ContractViolationError("limit_form - the order form needs the lead arrays")
        lead_a = _coefficients(A_tilde, n + 2, "A_tilde")
        lead_b = _coefficients(B_tilde, n + 2, "B_tilde")
    else:
        lead_a = lead_b = np.zeros(n + 2)
    return JetPair(
        Jet2(n + 1, np.concatenate([M, lead_a])), Jet2(n + 1, np.concatenate([N, lead_b]))
    )


def scaled_parameters(gm, spec, k: int, scheme: RescalingScheme, include_remainder=False):
    """(M, N) of the model's own mu, nu at this k."""
    _check_scheme(gm, scheme, "scaled_parameters")
    drift = parameter_drift(gm, spec, k, include_remainder)
    mu, nu = np.array(gm.mu), np.array(gm.nu)
    mu[0] += drift[0]
    nu[0] += drift[1]
    c, s = math.cos(k * spec.psi), math.sin(k * spec.psi)
    factors = np.array(
        [
            _power(spec.gamma, e, "scaled_parameters", "parameter factor")
            for e in scheme.parameter_exponents(k)
        ]
    )
    return (c * mu - s * nu) * factors, (s * mu + c * nu) * factors


def recover_parameters(
    gm, spec, k: int, scheme: RescalingScheme, M, N, include_remainder=True
):
    """Raw (mu, nu) whose return map rescales to (M, N) at this k."""
    _check_scheme(gm, scheme, "recover_parameters")
    size = monomial_count(scheme.n)
    M, N = _coefficients(M, size, "M"), _coefficients(N, size, "N")
    factors = np.array(
        [
            _power(spec.gamma, -e, "recover_parameters", "parameter factor")
            for e in scheme.parameter_exponents(k)
        ]
    )
    mu_t, nu_t = M * factors, N * factors
    c, s = math.cos(k * spec.psi), math.sin(k * spec.psi)
    mu, nu = c * mu_t + s * nu_t, -s * mu_t + c * nu_t
    drift = parameter_drift(gm, spec, k, include_remainder)
    mu[0] -= drift[0]
    nu[0] -= drift[1]
    return mu, nu


def convergence_row(gm, spec, scheme: RescalingScheme, k: int) -> ConvergenceRow:
    _check_scheme(gm, scheme, "convergence_report")
    first_return = first_return_jet(gm, spec, k)
    renormalized = rescale(first_return.jet, spec, k, scheme, first_return.aux)
    M, N = scaled_parameters(gm, spec, k, scheme)
    limit = limit_form(scheme, M, N, *rotated_lead_arrays(gm, spec, k))
    error = sup_distance(renormalized.jet, limit, disk_grid(CONVERGENCE_GRID))
    return ConvergenceRow(k, error, renormalized.aux_norm)


def _sample(target, y1, y2):
    values = target(y1, y2)
    z1 = np.broadcast_to(np.asarray(values[0], dtype=float), y1.shape)
    z2 = np.broadcast_to(np.asarray(values[1], dtype=float), y1.shape)
    if not (np.all(np.isfinite(z1)) and np.all(np.isfinite(z2))):
        raise DomainError("universal_approx - target must be finite on the closed unit disk")
    return z1, z2


def fit_polynomial(target, n: int, size: int = FIT_GRID):
    """Least-squares degree-n pair on the disk grid; returns (M, N, sup residual)."""
    y1, y2 = disk_grid(size)
    z1, z2 = _sample(target, y1, y2)
    p1, p2 = exponents(n)
    design = y1[:, None] ** p1 * y2[:, None] ** p2
    if np.linalg.matrix_rank(design) < p1.size:
        raise IllPosedError(
            f"universal_approx - degree {n} fit is rank deficient on a {size}x{size} grid"
        )
    rhs = np.column_stack([z1, z2])
    coefficients = np.linalg.lstsq(design, rhs, rcond=None)[0]
    residual = design @ coefficients - rhs
    return (
        coefficients[:, 0],
        coefficients[:, 1],
        float(np.max(np.hypot(residual[:, 0], residual[:, 1]))),
    )


class Renormalizer:
    """Convergence sweeps and universal approximation by renormalized returns"""

    def __init__(self) -> None:
        self.logger = logging.getLogger(self.__class__.__name__)
        self.logger.setLevel(os.environ.get("LOGGING", logging.DEBUG))

    def convergence_report(self, gm, spec, scheme: RescalingScheme, k_list):
        k_list = [int(k) for k in k_list]
        if not k_list:
            raise DomainError("convergence_report - k_list is empty")
        if any(later <= earlier for earlier, later in zip(k_list, k_list[1:])):
            raise DomainError(f"convergence_report - k_list must increase, got {k_list}")
        self.logger.info(f"Convergence sweep over k={k_list} ({scheme.variant.name}, n={scheme.n})")

        with ThreadPoolExecutor(max_workers=worker_count()) as pool:
            rows = list(pool.map(lambda k: convergence_row(gm, spec, scheme, k), k_list))

        for earlier, later in zip(rows, rows[1:]):
            if later.sup_error > MONOTONE_SLACK * earlier.sup_error:
                self.logger.warning(
                    f"k={later.k}: sup error {later.sup_error:.3e} grew from "
                    f"{earlier.sup_error:.3e} at k={earlier.k}"
                )
        for row in rows:
            self.logger.debug(f"k={row.k}: sup error {row.sup_error:.3e}, aux {row.aux_norm:.3e}")
        return rows

    def universal_approx(self, target, n: int, gm, spec, k: int) -> UniversalFit:
        _check_k(k, "universal_approx")
        scheme = RescalingScheme.full_polynomial_form(n)
        _check_scheme(gm, scheme, "universal_approx")
        M, N, fit_error = fit_polynomial(target, n)
        self.logger.debug(f"Degree {n} fit error {fit_error:.3e}")

        mu, nu = recover_parameters(gm, spec, k, scheme, M, N)
        first_return = first_return_jet(replace_blocks(gm, mu=mu, nu=nu), spec, k)
        renormalized = rescale(first_return.jet, spec, k, scheme, first_return.aux)

        y1, y2 = disk_grid(FIT_GRID)
        z1, z2 = _sample(target, y1, y2)
        r1, r2 = renormalized.jet.evaluate(y1, y2)
        total_error = float(np.max(np.hypot(r1 - z1, r2 - z2)))
        self.logger.info(
            f"k={k}: fit error {fit_error:.3e}, total error {total_error:.3e}, "
            f"aux {renormalized.aux_norm:.3e}"
        )
        return UniversalFit(k, M, N, fit_error, total_error)
