"""
Index raising for corank-2 homoclinic tangencies at one bi-focus orbit.

Two tangencies of equal index (n, m) are glued through k turns around the
orbit. The unknowns are solved in scaled variables::

    mu_bar_10 = lam^(k/(n+2)) * gamma^(-k(n+1)/(n+2)) * M
    p_1i      = lam^(k(n+1)/(n+2)) * gamma^(-k/(n+2)) * P_1i
    p_00      = lam^k * P_00

where (mu_bar, nu_bar) = R(k psi)(mu, nu) are the rotated coefficients of the
first global map and p, q the coefficients of the second one. In these
variables the system is independent of k up to the rotated constants.
"""
from collections import namedtuple
from concurrent.futures import ThreadPoolExecutor
import logging
import math
import os

import numpy as np
from common import (
    BranchFlipError,
    ContractViolationError,
    DegenerateKError,
    DivergenceError,
    DomainError,
    RaiseRecord,
    SearchExhaustedError,
    worker_count,
)
from jets.jets import Jet2, JetPair, compose_pair, monomial_count
from model.model import (
    b_row_blocks,
    dimensions,
    global_tangent_jet,
    make_model,
    rotation,
    row_blocks,
    validate_genericity,
    validate_spectrum,
)
from tangency.tangency import (
    IndexKind,
    TangencyIndex,
    apply_split,
    apply_subsplit,
    tangency_index,
)

DEFAULT_K_RANGE = (5, 400)
DEFAULT_K_COUNT = 20
DENOMINATOR_FLOOR = 1e-6
NEWTON_ITERATIONS = 50
NEWTON_STEP = 1e-7
NEWTON_TOLERANCE = 1e-11
DIVERGENCE_WINDOW = 5
ACCEPT_RESIDUAL = 1e-10
PIN_FRACTION = 1e-2
PIN_TOLERANCE = 1e-9
ANGLE_BOUND = 50
ANGLE_TOLERANCE = 1e-9
LOG_UNDERFLOW = math.log(1e-300)
LOG_OVERFLOW = math.log(1e300)

RotatedLead = namedtuple("RotatedLead", ["k", "A_tilde", "B_tilde", "S"])
ClosedForm = namedtuple("ClosedForm", ["M", "N", "P", "Q"])
UnscaledParameters = namedtuple("UnscaledParameters", ["mu_bar", "nu_bar", "p", "q"])
RaiseSolution = namedtuple(
    "RaiseSolution", ["k", "M", "N", "P", "Q", "residual", "unscaled", "iterations"]
)
RaisedModel = namedtuple("RaisedModel", ["model", "index", "solution", "record", "pinned"])
TangencyItem = namedtuple("TangencyItem", ["model", "index"])
TangencyBag = namedtuple("TangencyBag", ["items", "spectrum"])


class KSequence(namedtuple("KSequence", ["even", "odd"])):
    """Admissible k values, split by the sign of the rotated suborder pair"""

    __slots__ = ()

    def all(self):
        return sorted(set(self.even) | set(self.odd))


def angles_independent(
    phi: float, psi: float, bound: int = ANGLE_BOUND, tol: float = ANGLE_TOLERANCE
) -> bool:
    """True if no k1*phi + k2*psi with 0 < |k1| + |k2|, |k_i| <= bound is a multiple of 2 pi."""
    k1, k2 = np.meshgrid(np.arange(-bound, bound + 1), np.arange(-bound, bound + 1))
    nontrivial = (k1 != 0) | (k2 != 0)
    angles = k1 * phi + k2 * psi
    distance = np.abs(np.remainder(angles + math.pi, 2 * math.pi) - math.pi)
    return bool(np.all(distance[nontrivial] > tol))


def required_count(N: int) -> int:
    if N < 1:
        raise DomainError(f"required_count - N must be >= 1, got {N}")
    return 2 ** ((N - 1) * (N + 4) // 2)


def _check_k(k: int, operation: str) -> None:
    if k < 1:
        raise DomainError(f"{operation} - k must be >= 1, got {k}")


def rotated_lead(gm1, gm2, spec, k: int) -> RotatedLead:
    _check_k(k, "rotated_lead")
    lead = rotation(k * spec.psi) @ np.vstack([gm1.lead_a, gm1.lead_b])
    _, ry, _, _ = row_blocks(gm2)
    bx, _, _ = b_row_blocks(gm1)
    s = gm2.a[ry] @ rotation(k * spec.phi) @ gm1.b[bx]
    return RotatedLead(k, lead[0], lead[1], (s[0, 0], s[0, 1], s[1, 0], s[1, 1]))


def s_determinant_identity(rl: RotatedLead, gm1, gm2):
    s1, s2, s3, s4 = rl.S
    _, ry, _, _ = row_blocks(gm2)
    bx, _, _ = b_row_blocks(gm1)
    return s1 * s4 - s2 * s3, float(np.linalg.det(gm2.a[ry]) * np.linalg.det(gm1.b[bx]))


def suborder_pair(gm2, m: int):
    """(D_m, E_m) of the second map."""
    return float(gm2.lead_a[m]), float(gm2.lead_b[m])


def select_k_sequence(
    gm1,
    gm2,
    spec,
    m: int,
    count: int = DEFAULT_K_COUNT,
    k_min: int = DEFAULT_K_RANGE[0],
    k_max: int = DEFAULT_K_RANGE[1],
    branch: str = "both",
) -> KSequence:
    if not 1 <= k_min < k_max:
        raise DomainError(f"select_k_sequence - invalid k range [{k_min}, {k_max}]")
    if branch not in ("both", "even", "odd"):
        raise DomainError(f"select_k_sequence - unknown branch '{branch}'")
    d, e = suborder_pair(gm2, m)
    if d == 0.0 and e == 0.0:
        raise ContractViolationError(
            f"select_k_sequence - D_{m} and E_{m} of the second map both vanish"
        )
    want_even = branch in ("both", "even")
    want_odd = branch in ("both", "odd")

    even, odd = [], []
    near_miss, best_score = None, -math.inf
    for k in range(k_min, k_max + 1):
        rl = rotated_lead(gm1, gm2, spec, k)
        s1, s2, s3, s4 = rl.S
        a, b = rl.A_tilde[m], rl.B_tilde[m]
        for wanted, sign in ((want_even, 1.0), (want_odd, -1.0)):
            score = min(sign * a, sign * b)
            if wanted and score > best_score:
                near_miss, best_score = (k, float(a), float(b)), score
        eta = DENOMINATOR_FLOOR * max(abs(s) for s in rl.S) * max(abs(d), abs(e))
        if abs(s2 * e - s4 * d) <= eta or abs(s1 * e - s3 * d) <= eta:
            continue
        if want_even and a > 0 and b > 0 and len(even) < count:
            even.append(k)
        elif want_odd and a < 0 and b < 0 and len(odd) < count:
            odd.append(k)
        if (not want_even or len(even) >= count) and (not want_odd or len(odd) >= count):
            break

    if not even and not odd:
        raise SearchExhaustedError(
            f"select_k_sequence - no admissible k on the {branch} branch in "
            f"[{k_min}, {k_max}]",
            near_miss=near_miss,
        )
    return KSequence(even, odd)


def solve_raise_closed_form(rl: RotatedLead, D: float, E: float, n: int, m: int) -> ClosedForm:
    """
    Eliminate the scaled system

        S1 / M * A + S2 / N * B + D * M^(n+1-m) N^m = 0
        S3 / M * A + S4 / N * B + E * M^(n+1-m) N^m = 0

    with P_1i, Q_1i read off the linear rows. A, B are the rotated suborder
    coefficients at m.
    """
    s1, s2, s3, s4 = rl.S
    a, b = float(rl.A_tilde[m]), float(rl.B_tilde[m])
    alpha, beta = s1 * E - s3 * D, s2 * E - s4 * D
    if s1 * s4 - s2 * s3 == 0.0:
        raise ContractViolationError("solve_raise_closed_form - S1 S4 - S2 S3 vanishes")
    if alpha == 0.0 or beta == 0.0:
        raise ContractViolationError(
            "solve_raise_closed_form - S1 E - S3 D and S2 E - S4 D must be nonzero"
        )
    if a == 0.0 or b == 0.0:
        raise ContractViolationError(
            f"solve_raise_closed_form - rotated lead pair ({a}, {b}) has a zero entry"
        )

    c = -b * beta / (a * alpha)
    if D != 0.0:
        radicand = -(s1 * c * a + s2 * b) / (c ** (m + 1) * D)
    elif E != 0.0:
        radicand = -(s3 * c * a + s4 * b) / (c ** (m + 1) * E)
    else:
        raise ContractViolationError("solve_raise_closed_form - D and E both vanish")
    root = n + 2
    if radicand == 0.0:
        raise ContractViolationError("solve_raise_closed_form - zero radicand")
    if root % 2 == 0 and radicand < 0.0:
        raise BranchFlipError(
            f"solve_raise_closed_form - negative radicand {radicand} under an even root"
        )
    m10 = math.copysign(abs(radicand) ** (1.0 / root), radicand)
    n11 = c * m10
    return ClosedForm(m10, n11, (0.0, s1 / m10, s2 / n11), (0.0, s3 / m10, s4 / n11))


def closed_form_residual(rl: RotatedLead, D, E, n, m, M, N):
    """Both lines of the eliminated system multiplied through by M N."""
    s1, s2, s3, s4 = rl.S
    a, b = rl.A_tilde[m], rl.B_tilde[m]
    nonlinear = M ** (n + 2 - m) * N ** (m + 1)
    return (
        s1 * a * N + s2 * b * M + D * nonlinear,
        s3 * a * N + s4 * b * M + E * nonlinear,
    )


def printed_closed_form(rl: RotatedLead, D, E, n, m):
    """Product form magnitudes (|M|, |N|); equal to the elimination result up to sign."""
    s1, s2, s3, s4 = rl.S
    a, b = rl.A_tilde[m], rl.B_tilde[m]
    alpha, beta = s1 * E - s3 * D, s2 * E - s4 * D
    s_tilde_1 = (s2 * s3 - s1 * s4) * alpha**m / beta ** (m + 1)
    s_tilde_2 = -beta / alpha
    root = 1.0 / (n + 2)
    magnitude_m = abs(a ** (m + 1) / b**m * s_tilde_1) ** root
    magnitude_n = abs(s_tilde_2) * abs(b ** (n + 2 - m) / a ** (n + 1 - m) * s_tilde_1) ** root
    return magnitude_m, magnitude_n


def _unscaled(value: float, log_scale: float, name: str) -> float:
    if value == 0.0:
        return 0.0
    log_magnitude = math.log(abs(value)) + log_scale
    if not LOG_UNDERFLOW <= log_magnitude <= LOG_OVERFLOW:
        raise DegenerateKError(
            f"unscale - {name} leaves the double range (log magnitude "
            f"{log_magnitude:.1f}); k is admissible but numerically degenerate"
        )
    return math.copysign(math.exp(log_magnitude), value)


def unscale(spec, k: int, n: int, y_minus_hat, M, N, P, Q) -> UnscaledParameters:
    """Recover mu_bar, nu_bar, p, q in log space."""
    log_lam, log_gamma = math.log(spec.lam), math.log(spec.gamma)
    log_mu = k * (log_lam - (n + 1) * log_gamma) / (n + 2)
    log_p = k * ((n + 1) * log_lam - log_gamma) / (n + 2)
    size = monomial_count(n)
    mu_bar, nu_bar, p, q = (np.zeros(size) for _ in range(4))
    # constants cancel y_minus of the second map after k turns
    mu_bar[0] = _unscaled(float(y_minus_hat[0]), -k * log_gamma, "mu_bar_00")
    nu_bar[0] = _unscaled(float(y_minus_hat[1]), -k * log_gamma, "nu_bar_00")
    mu_bar[1] = _unscaled(M, log_mu, "mu_bar_10")
    nu_bar[2] = _unscaled(N, log_mu, "nu_bar_11")
    for target, values, name in ((p, P, "p"), (q, Q, "q")):
        target[0] = _unscaled(values[0], k * log_lam, f"{name}_00")
        target[1] = _unscaled(values[1], log_p, f"{name}_10")
        target[2] = _unscaled(values[2], log_p, f"{name}_11")
    return UnscaledParameters(mu_bar, nu_bar, p, q)


def apply_raise_parameters(gm1, gm2, spec, k: int, unscaled: UnscaledParameters):
    """Split both maps so they carry the solved coefficients."""
    r = rotation(-k * spec.psi)
    mu = r[0, 0] * unscaled.mu_bar + r[0, 1] * unscaled.nu_bar
    nu = r[1, 0] * unscaled.mu_bar + r[1, 1] * unscaled.nu_bar
    split1 = apply_split(gm1, mu - gm1.mu, nu - gm1.nu)
    split2 = apply_split(gm2, unscaled.p - gm2.mu, unscaled.q - gm2.nu)
    return split1, split2


def x_channel(gm1, gm2, spec, k: int):
    """Constant and linear part carried by x through T0^k into the second map's y rows."""
    _check_k(k, "x_channel")
    _, ry, _, _ = row_blocks(gm2)
    bx, _, _ = b_row_blocks(gm1)
    transfer = spec.lam**k * gm2.a[ry] @ rotation(k * spec.phi)
    return transfer @ gm1.x_plus, transfer @ gm1.b[bx]


def _check_pair(gm1, gm2, operation: str) -> None:
    if gm1.order_cap != gm2.order_cap:
        raise ContractViolationError(
            f"{operation} - order caps differ: {gm1.order_cap} vs {gm2.order_cap}"
        )
    if dimensions(gm1) != dimensions(gm2):
        raise ContractViolationError(
            f"{operation} - non-leading dimensions differ: "
            f"{dimensions(gm1)} vs {dimensions(gm2)}"
        )


def compose_with_parameters(gm1, spec, k: int, gm2, unscaled: UnscaledParameters) -> JetPair:
    """Tangent jet of T1_hat o T0^k o T1 in the variables Y of the first map."""
    _check_k(k, "compose_new_global")
    _check_pair(gm1, gm2, "compose_new_global")
    cap = gm1.order_cap + 2
    split1, split2 = apply_raise_parameters(gm1, gm2, spec, k, unscaled)

    gamma_k = spec.gamma**k
    if not math.isfinite(gamma_k):
        raise DegenerateKError(f"compose_new_global - gamma^{k} overflows")
    image = global_tangent_jet(split1).with_cap(cap).rotate(k * spec.psi)
    landing = gamma_k * np.array([image.y1.constant_term, image.y2.constant_term])
    tolerance = 1e-12 * max(1.0, float(np.max(np.abs(gm2.y_minus))))
    if np.max(np.abs(landing - gm2.y_minus)) > tolerance:
        raise DomainError(
            "compose_new_global - first map does not land on the second map's y_minus"
        )
    z1, z2 = image.y1 * gamma_k, image.y2 * gamma_k
    inner = JetPair(z1 - z1.constant_term, z2 - z2.constant_term)

    composite = compose_pair(global_tangent_jet(split2).with_cap(cap), inner)
    const, linear = x_channel(gm1, gm2, spec, k)
    return JetPair(
        composite.y1
        + Jet2.from_terms(
            cap, {(0, 0): const[0], (1, 0): linear[0, 0], (0, 1): linear[0, 1]}
        ),
        composite.y2
        + Jet2.from_terms(
            cap, {(0, 0): const[1], (1, 0): linear[1, 0], (0, 1): linear[1, 1]}
        ),
    )


def compose_new_global(gm1, spec, k: int, gm2, sol: RaiseSolution) -> JetPair:
    return compose_with_parameters(gm1, spec, k, gm2, sol.unscaled)


class RaiseSystem:
    """
    The square system in x = (M10, N11, P00, P10, P11, Q00, Q10, Q11).

    Rows are the constant, linear and suborder-m coefficients of the
    composite jet, each divided by its natural magnitude at this k.
    Coefficients of degree 2..n and suborders below m vanish identically.
    """

    def __init__(self, gm1, gm2, spec, k: int) -> None:
        _check_pair(gm1, gm2, "raise system")
        index = tangency_index(global_tangent_jet(gm1))
        if index.is_flat:
            raise ContractViolationError("raise system - first map is flat")
        self.gm1, self.gm2, self.spec, self.k = gm1, gm2, spec, k
        self.n, self.m = index.n, index.m
        self.rl = rotated_lead(gm1, gm2, spec, k)
        self.d, self.e = suborder_pair(gm2, self.m)

        n, m = self.n, self.m
        const, _ = x_channel(gm1, gm2, spec, k)
        s_max = max(abs(s) for s in self.rl.S)
        lead_max = max(abs(self.rl.A_tilde[m]), abs(self.rl.B_tilde[m]))
        self.linear_scale = max(spec.lam**k * s_max, float(np.max(np.abs(const))))
        self.suborder_scale = (
            (spec.lam * spec.gamma) ** (k * (n + 1) / (n + 2))
            * max(abs(self.d), abs(self.e)) ** (1.0 / (n + 2))
            * (s_max * lead_max) ** ((n + 1) / (n + 2))
        )
        if self.linear_scale == 0.0 or self.suborder_scale == 0.0:
            raise DegenerateKError(f"raise system - row scales vanish at k={k}")
        self.scales = np.array([self.linear_scale] * 6 + [self.suborder_scale] * 2)

    def negated_lead(self) -> RotatedLead:
        # the composite balances lam^k S against p gamma^k mu_bar with opposite sign
        return self.rl._replace(S=tuple(-s for s in self.rl.S))

    def closed_form(self) -> np.ndarray:
        closed = solve_raise_closed_form(self.negated_lead(), self.d, self.e, self.n, self.m)
        return np.array([closed.M, closed.N, *closed.P, *closed.Q])

    @staticmethod
    def pack(sol: RaiseSolution) -> np.ndarray:
        return np.array([sol.M[1], sol.N[2], *sol.P, *sol.Q], dtype=float)

    def unscaled(self, x) -> UnscaledParameters:
        return unscale(
            self.spec, self.k, self.n, self.gm2.y_minus, x[0], x[1], x[2:5], x[5:8]
        )

    def composite(self, x) -> JetPair:
        return compose_with_parameters(self.gm1, self.spec, self.k, self.gm2, self.unscaled(x))

    def rows(self, x):
        """Normalized target rows, or None once the parameters leave the double range."""
        try:
            jp = self.composite(x)
        except (ContractViolationError, DegenerateKError, FloatingPointError):
            return None
        n, m = self.n, self.m
        raw = np.array(
            [
                jp.y1.coefficient(0, 0),
                jp.y2.coefficient(0, 0),
                jp.y1.coefficient(1, 0),
                jp.y1.coefficient(0, 1),
                jp.y2.coefficient(1, 0),
                jp.y2.coefficient(0, 1),
                jp.y1.coefficient(n + 1 - m, m),
                jp.y2.coefficient(n + 1 - m, m),
            ]
        )
        return raw / self.scales

    def target_residual(self, jp: JetPair) -> float:
        """Largest normalized coefficient through suborder (n, m)."""
        n, m = self.n, self.m
        low = monomial_count(n)
        below = max(np.max(np.abs(jp.y1.coeffs[:low])), np.max(np.abs(jp.y2.coeffs[:low])))
        at = max(
            np.max(np.abs(jp.y1.degree_block(n + 1)[: m + 1])),
            np.max(np.abs(jp.y2.degree_block(n + 1)[: m + 1])),
        )
        return float(max(below / self.linear_scale, at / self.suborder_scale))

    def solution(self, x, iterations: int) -> RaiseSolution:
        size = monomial_count(self.n)
        big_m, big_n = np.zeros(size), np.zeros(size)
        big_m[1], big_n[2] = x[0], x[1]
        return RaiseSolution(
            k=self.k,
            M=big_m,
            N=big_n,
            P=tuple(float(v) for v in x[2:5]),
            Q=tuple(float(v) for v in x[5:8]),
            residual=self.target_residual(self.composite(x)),
            unscaled=self.unscaled(x),
            iterations=iterations,
        )


def initial_solution(gm1, gm2, spec, k: int) -> RaiseSolution:
    system = RaiseSystem(gm1, gm2, spec, k)
    return system.solution(system.closed_form(), 0)


def _forward_jacobian(system: RaiseSystem, x, rows):
    jacobian = np.empty((rows.size, x.size))
    for j in range(x.size):
        h = NEWTON_STEP * max(1.0, abs(x[j]))
        shifted = x.copy()
        shifted[j] += h
        moved = system.rows(shifted)
        if moved is None:
            return None
        jacobian[:, j] = (moved - rows) / h
    return jacobian


def newton_polish(gm1, spec, k: int, gm2, sol: RaiseSolution) -> RaiseSolution:
    system = RaiseSystem(gm1, gm2, spec, k)
    x = system.pack(sol)
    rows = system.rows(x)
    if rows is None:
        raise DivergenceError("newton_polish - starting point leaves the double range")
    residual = float(np.max(np.abs(rows)))
    if residual <= NEWTON_TOLERANCE:
        return system.solution(x, 0)

    best_x, best_residual = x, residual
    increases = 0
    for iteration in range(1, NEWTON_ITERATIONS + 1):
        jacobian = _forward_jacobian(system, x, rows)
        candidate_rows = None
        if jacobian is not None:
            candidate = x + np.linalg.lstsq(jacobian, -rows, rcond=None)[0]
            candidate_rows = system.rows(candidate)
        if candidate_rows is None or not np.all(np.isfinite(candidate_rows)):
            raise DivergenceError(
                f"newton_polish - iterate {iteration} leaves the double range",
                best=system.solution(best_x, iteration),
            )
        candidate_residual = float(np.max(np.abs(candidate_rows)))
        increases = increases + 1 if candidate_residual >= residual else 0
        x, rows, residual = candidate, candidate_rows, candidate_residual
        if residual < best_residual:
            best_x, best_residual = x, residual
        if residual <= NEWTON_TOLERANCE:
            return system.solution(x, iteration)
        if increases >= DIVERGENCE_WINDOW:
            raise DivergenceError(
                f"newton_polish - residual grew for {increases} consecutive steps",
                best=system.solution(best_x, iteration),
            )
    return system.solution(best_x, NEWTON_ITERATIONS)


def chained_blocks(split1, split2, spec, k: int) -> dict:
    """Linear blocks and base points of T1_hat o T0^k o T1 at the first map's base point."""
    _check_pair(split1, split2, "chained_blocks")
    rx, ry, ru, rv = row_blocks(split1)
    bx, bu, bv = b_row_blocks(split1)
    p, q = dimensions(split1)
    if len(spec.unstable_nonleading) != q:
        raise ContractViolationError(
            f"chained_blocks - spectrum has {len(spec.unstable_nonleading)} unstable "
            f"non-leading moduli, models have {q}"
        )
    local_x = spec.lam**k * rotation(k * spec.phi)
    local_y = spec.gamma**k * rotation(k * spec.psi)
    head = slice(0, 4 + p)
    # rows x, y, u of the second map acting on Y_hat; the y rows are the jet's linear part
    second_y = np.vstack(
        [split2.b[bx], global_tangent_jet(split2).jacobian(), split2.b[bu]]
    )

    def chain(from_x, from_y):
        return split2.a[head] @ local_x @ from_x + second_y @ local_y @ from_y

    first_y_jacobian = global_tangent_jet(split1).jacobian()
    through_y = chain(split1.b[bx], first_y_jacobian)
    decay = np.diag(np.asarray(spec.unstable_nonleading, dtype=float) ** (-k))
    return dict(
        x_plus=split2.x_plus + split2.a[rx] @ local_x @ split1.x_plus,
        u_plus=split2.u_plus + split2.a[ru] @ local_x @ split1.x_plus,
        y_minus=split1.y_minus,
        v_minus=split1.v_minus,
        a=np.vstack([chain(split1.a[rx], split1.a[ry]), split1.a[rv]]),
        b=np.vstack([through_y[0:2], through_y[4 : 4 + p], split1.b[bv]]),
        c=np.vstack([chain(split1.c[rx], split1.c[ry]), split1.c[rv]]),
        d=np.vstack([split2.d[head], split1.d[rv] @ decay @ split2.d[rv]]),
    )


def assemble_raised_model(system: RaiseSystem, sol: RaiseSolution):
    """New model with the solved targets set to zero; returns (model, index, pinned)."""
    n, m = system.n, system.m
    composite = system.composite(system.pack(sol))
    if m <= n:
        cap, target, block = n, m + 1, n + 1
    else:
        cap, target, block = n + 1, 0, n + 2
    lead_a = np.array(composite.y1.degree_block(block))
    lead_b = np.array(composite.y2.degree_block(block))
    if block == n + 1:
        lead_a[: m + 1] = 0.0
        lead_b[: m + 1] = 0.0

    magnitude = float(max(np.max(np.abs(lead_a)), np.max(np.abs(lead_b))))
    pinned = max(abs(lead_a[target]), abs(lead_b[target])) <= PIN_TOLERANCE * magnitude

    split1, split2 = apply_raise_parameters(
        system.gm1, system.gm2, system.spec, system.k, sol.unscaled
    )
    model = make_model(
        cap,
        lead_a,
        lead_b,
        allow_flat=True,
        **chained_blocks(split1, split2, system.spec, system.k),
    )
    if pinned:
        d_lead_a = np.zeros_like(lead_a)
        d_lead_a[target] = PIN_FRACTION * (magnitude or system.suborder_scale)
        model = apply_subsplit(model, d_lead_a, np.zeros_like(lead_b))
    return model, tangency_index(global_tangent_jet(model)), pinned


def raise_with_k(gm1, gm2, spec, k: int) -> RaisedModel:
    system = RaiseSystem(gm1, gm2, spec, k)
    start = system.solution(system.closed_form(), 0)
    polished = newton_polish(gm1, spec, k, gm2, start)
    model, index, pinned = assemble_raised_model(system, polished)
    record = RaiseRecord(k, start.residual, polished.residual, index.n, index.m)
    return RaisedModel(model, index, polished, record, pinned)


def make_bag(models, spec) -> TangencyBag:
    items = []
    for gm in models:
        report = validate_genericity(gm)
        if not report.passed:
            raise ContractViolationError(
                f"make_bag - model fails genericity: {', '.join(report.failures)}"
            )
        items.append(TangencyItem(gm, tangency_index(global_tangent_jet(gm))))
    return TangencyBag(items, spec)


class Raiser:
    """Raise tangency indices by gluing pairs of tangencies"""

    def __init__(self) -> None:
        self.logger = logging.getLogger(self.__class__.__name__)
        self.logger.setLevel(os.environ.get("LOGGING", logging.DEBUG))

    def _screen(self, spec) -> None:
        validate_spectrum(spec)
        if not angles_independent(spec.phi, spec.psi):
            raise DomainError("raise - phi and psi fail the rational independence screen")

    def _common_index(self, gm1, gm2) -> TangencyIndex:
        first = tangency_index(global_tangent_jet(gm1))
        second = tangency_index(global_tangent_jet(gm2))
        if first != second:
            raise ContractViolationError(
                f"raise_suborder - indices differ: {first} vs {second}"
            )
        if first.is_flat:
            raise ContractViolationError("raise_suborder - both tangencies are flat")
        if first.n != gm1.order_cap or first.n != gm2.order_cap:
            raise ContractViolationError(
                f"raise_suborder - order {first.n} differs from the models' order cap"
            )
        for gm in (gm1, gm2):
            report = validate_genericity(gm)
            if not report.passed:
                raise ContractViolationError(
                    f"raise_suborder - model fails genericity: {', '.join(report.failures)}"
                )
        return first

    def raise_suborder(self, gm1, gm2, spec, k_range=DEFAULT_K_RANGE, journal=None):
        self._screen(spec)
        index = self._common_index(gm1, gm2)
        candidates = select_k_sequence(gm1, gm2, spec, index.m, DEFAULT_K_COUNT, *k_range).all()
        self.logger.debug(f"{len(candidates)} admissible k values for index {index}")

        for k in candidates:
            try:
                raised = raise_with_k(gm1, gm2, spec, k)
            except BranchFlipError as e:
                self.logger.warning(f"k={k}: {e}; trying the next k")
                continue
            except (DegenerateKError, DivergenceError) as e:
                self.logger.warning(f"k={k}: {e.__class__.__name__} {e}; trying the next k")
                continue
            if raised.solution.residual > ACCEPT_RESIDUAL:
                self.logger.debug(f"k={k}: residual {raised.solution.residual:.3e} too large")
                continue
            report = validate_genericity(raised.model)
            if not report.passed:
                self.logger.warning(
                    f"k={k}: raised model fails genericity ({', '.join(report.failures)}); "
                    "trying the next k"
                )
                continue
            if raised.pinned:
                self.logger.warning(f"k={k}: pinned the index to {raised.index} with a subsplit")
            if journal is not None:
                journal.append(raised.record)
            self.logger.info(
                f"k={k}: raised {index} to {raised.index} "
                f"(residual {raised.record.residual_pre:.3e} -> {raised.record.residual_post:.3e})"
            )
            return raised.model, raised.index
        raise SearchExhaustedError(
            f"raise_suborder - no k in [{k_range[0]}, {k_range[1]}] raised {index}",
            near_miss=candidates[0] if candidates else None,
        )

    def _raise_pair(self, pair, spec, k_range):
        journal = []
        model, index = self.raise_suborder(pair[0], pair[1], spec, k_range, journal)
        return model, index, journal

    def raise_order(self, bag: TangencyBag, k_range=DEFAULT_K_RANGE, journal=None):
        if not bag.items:
            raise ContractViolationError("raise_order - empty bag")
        first = bag.items[0].index
        if first.is_flat or any(item.index != (IndexKind.INDEX, first.n, 0) for item in bag.items):
            raise ContractViolationError("raise_order - all tangencies must share an index (n, 0)")
        n = first.n
        expected = 2 ** (n + 2)
        if len(bag.items) != expected:
            raise ContractViolationError(
                f"raise_order - expected {expected} tangencies of index ({n}, 0), "
                f"got {len(bag.items)}"
            )
        self.logger.info(f"Raising {expected} tangencies of order {n}")

        models = [item.model for item in bag.items]
        index = bag.items[0].index
        with ThreadPoolExecutor(max_workers=worker_count()) as pool:
            for step in range(1, n + 3):
                pairs = list(zip(models[0::2], models[1::2]))
                results = list(
                    pool.map(lambda pair: self._raise_pair(pair, bag.spectrum, k_range), pairs)
                )
                models = [model for model, _, _ in results]
                index = results[0][1]
                if journal is not None:
                    for _, _, records in results:
                        journal.extend(records)
                self.logger.info(f"Step {step}: {len(models)} tangencies of index {index}")
        return models[0], index

    def build_order_N(self, bag: TangencyBag, N: int, k_range=DEFAULT_K_RANGE, journal=None):
        expected = required_count(N)
        if len(bag.items) != expected:
            raise ContractViolationError(
                f"build_order_N - required_count({N})={expected}, got {len(bag.items)}"
            )
        if any(item.index != TangencyIndex.index(1, 0) for item in bag.items):
            raise ContractViolationError("build_order_N - all tangencies must have index (1, 0)")

        items = list(bag.items)
        for order in range(1, N):
            size = 2 ** (order + 2)
            items = [
                TangencyItem(
                    *self.raise_order(
                        TangencyBag(items[start : start + size], bag.spectrum), k_range, journal
                    )
                )
                for start in range(0, len(items), size)
            ]
            self.logger.info(f"Reached order {order + 1} with {len(items)} tangencies")
        return items[0].model, items[0].index
