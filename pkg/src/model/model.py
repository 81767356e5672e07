"""
Desk models of a bi-focus periodic orbit and its homoclinic global maps.

The local map T0^k is kept in cross form with zero remainders::

    x_k = lam^k R(k phi) x_0          y_0 = gamma^-k R(-k psi) y_k

and a global map T1 is the polynomial written out coordinate block by
coordinate block (rows x1, x2, y1, y2, u..., v...), with every term
beyond the written ones set to zero.
"""
from collections import namedtuple
import json
import math

import numpy as np
from common import ContractViolationError, ConvergenceError, DomainError
from jets.jets import Jet2, JetPair, monomial_count

FIXED_POINT_ITERATIONS = 100
FIXED_POINT_TOLERANCE = 1e-12
GENERICITY_THRESHOLD = 1e-9

BiFocusSpectrum = namedtuple(
    "BiFocusSpectrum",
    [
        "lam",
        "gamma",
        "phi",
        "psi",
        "lambda_hat",
        "gamma_hat",
        "stable_nonleading",
        "unstable_nonleading",
    ],
)
PhasePoint = namedtuple("PhasePoint", ["x", "y", "u", "v"])
CrossImage = namedtuple("CrossImage", ["xk", "y0", "uk", "v0"])
GlobalMapModel = namedtuple(
    "GlobalMapModel",
    [
        "order_cap",
        "x_plus",
        "u_plus",
        "y_minus",
        "v_minus",
        "a",
        "b",
        "c",
        "d",
        "mu",
        "nu",
        "lead_a",
        "lead_b",
    ],
)
GenericityReport = namedtuple(
    "GenericityReport",
    ["det_a34", "det_b12", "det_d6", "det_transverse", "passed", "failures"],
)

MODEL_KEYS = set(GlobalMapModel._fields)
SPECTRUM_KEYS = set(BiFocusSpectrum._fields)


def rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def reference_spectrum() -> BiFocusSpectrum:
    return BiFocusSpectrum(
        lam=0.3,
        gamma=2.0,
        phi=1.0,
        psi=math.sqrt(2.0),
        lambda_hat=0.2,
        gamma_hat=3.0,
        stable_nonleading=(0.1,),
        unstable_nonleading=(3.0,),
    )


def _angle_is_degenerate(theta: float) -> bool:
    reduced = math.remainder(theta, math.pi)
    return abs(reduced) < 1e-12


def validate_spectrum(spec: BiFocusSpectrum) -> BiFocusSpectrum:
    """Check the spectral bounds; the angle independence screen lives with the raiser."""
    problems = []
    if not 0.0 < spec.lam < 1.0:
        problems.append(f"lam={spec.lam} not in (0, 1)")
    if not spec.gamma > 1.0:
        problems.append(f"gamma={spec.gamma} not > 1")
    if not spec.lam * spec.gamma < 1.0:
        problems.append("lam * gamma must be < 1")
    if not 0.0 < spec.lambda_hat < spec.lam:
        problems.append("lambda_hat must lie in (0, lam)")
    if not spec.gamma < spec.gamma_hat < spec.gamma**2:
        problems.append("gamma_hat must lie in (gamma, gamma**2)")
    if any(not 0.0 <= abs(m) < spec.lam for m in spec.stable_nonleading):
        problems.append("stable non-leading moduli must be below lam")
    if any(not abs(m) > spec.gamma for m in spec.unstable_nonleading):
        problems.append("unstable non-leading moduli must exceed gamma")
    if _angle_is_degenerate(spec.phi) or _angle_is_degenerate(spec.psi):
        problems.append("phi and psi must avoid 0 and pi")
    if problems:
        raise DomainError("validate_spectrum - " + "; ".join(problems))
    return spec


def local_cross_apply(
    spec: BiFocusSpectrum, k: int, x0, yk, u0, vk, linear_nonleading: bool = False
) -> CrossImage:
    """
    T0^k in cross form. Non-leading coordinates vanish unless
    ``linear_nonleading`` asks for their diagonal linear part.
    """
    if k < 1:
        raise DomainError(f"local_cross_apply - k must be >= 1, got {k}")
    xk = spec.lam**k * rotation(k * spec.phi) @ np.asarray(x0, dtype=float)
    y0 = spec.gamma ** (-k) * rotation(-k * spec.psi) @ np.asarray(yk, dtype=float)
    u0 = np.asarray(u0, dtype=float)
    vk = np.asarray(vk, dtype=float)
    if linear_nonleading:
        uk = np.asarray(spec.stable_nonleading, dtype=float) ** k * u0
        v0 = np.asarray(spec.unstable_nonleading, dtype=float) ** (-k) * vk
    else:
        uk, v0 = np.zeros_like(u0), np.zeros_like(vk)
    return CrossImage(xk, y0, uk, v0)


def dimensions(gm: GlobalMapModel):
    return gm.u_plus.size, gm.v_minus.size


def row_blocks(gm: GlobalMapModel):
    """Row slices (x, y, u, v) of the a, c and d blocks."""
    p, q = dimensions(gm)
    return slice(0, 2), slice(2, 4), slice(4, 4 + p), slice(4 + p, 4 + p + q)


def b_row_blocks(gm: GlobalMapModel):
    """Row slices (x, u, v) of the b block, which has no y rows."""
    p, q = dimensions(gm)
    return slice(0, 2), slice(2, 2 + p), slice(2 + p, 2 + p + q)


def _frozen(values, shape, name) -> np.ndarray:
    array = np.array(values, dtype=float).reshape(shape)
    if not np.all(np.isfinite(array)):
        raise ContractViolationError(f"make_model - {name} must be finite")
    array.setflags(write=False)
    return array


def make_model(
    order_cap: int,
    lead_a,
    lead_b,
    x_plus=(0.0, 0.0),
    y_minus=(0.0, 0.0),
    u_plus=(),
    v_minus=(),
    a=None,
    b=None,
    c=None,
    d=None,
    mu=None,
    nu=None,
    allow_flat: bool = False,
) -> GlobalMapModel:
    """
    Assemble a model; missing linear blocks default to zero, with d6 = identity.

    All-zero lead arrays are refused unless ``allow_flat`` is set.
    """
    if order_cap < 1:
        raise DomainError(f"make_model - order cap must be >= 1, got {order_cap}")
    p, q = len(u_plus), len(v_minus)
    rows = 4 + p + q
    lead_size, mu_size = order_cap + 2, monomial_count(order_cap)
    if a is None:
        a = np.zeros((rows, 2))
    if b is None:
        b = np.zeros((2 + p + q, 2))
    if c is None:
        c = np.zeros((rows, p))
    if d is None:
        d = np.zeros((rows, q))
        d[4 + p :, :] = np.eye(q)
    if mu is None:
        mu = np.zeros(mu_size)
    if nu is None:
        nu = np.zeros(mu_size)
    try:
        gm = GlobalMapModel(
            order_cap=int(order_cap),
            x_plus=_frozen(x_plus, (2,), "x_plus"),
            u_plus=_frozen(u_plus, (p,), "u_plus"),
            y_minus=_frozen(y_minus, (2,), "y_minus"),
            v_minus=_frozen(v_minus, (q,), "v_minus"),
            a=_frozen(a, (rows, 2), "a"),
            b=_frozen(b, (2 + p + q, 2), "b"),
            c=_frozen(c, (rows, p), "c"),
            d=_frozen(d, (rows, q), "d"),
            mu=_frozen(mu, (mu_size,), "mu"),
            nu=_frozen(nu, (mu_size,), "nu"),
            lead_a=_frozen(lead_a, (lead_size,), "lead_a"),
            lead_b=_frozen(lead_b, (lead_size,), "lead_b"),
        )
    except ValueError as e:
        raise ContractViolationError(f"make_model - block shape mismatch: {e}") from e
    if not allow_flat and not np.any(gm.lead_a) and not np.any(gm.lead_b):
        raise ContractViolationError("make_model - lead arrays A, B are all zero")
    return gm


def replace_blocks(gm: GlobalMapModel, **changes) -> GlobalMapModel:
    fields = gm._asdict()
    fields.update(changes)
    return make_model(**fields)


def global_tangent_jet(gm: GlobalMapModel) -> JetPair:
    """(ybar1, ybar2) restricted to x = 0, u = 0, vbar = 0 as jets in Y = y - y_minus."""
    cap = gm.order_cap + 1
    return JetPair(
        Jet2(cap, np.concatenate([gm.mu, gm.lead_a])),
        Jet2(cap, np.concatenate([gm.nu, gm.lead_b])),
    )


def model_from_jet(jp: JetPair, template: GlobalMapModel) -> GlobalMapModel:
    """Model whose tangent jet is ``jp``; linear blocks come from ``template``."""
    n = jp.degree_cap - 1
    if n < 1:
        raise DomainError("model_from_jet - the jet needs degree cap >= 2")
    size = monomial_count(n)
    return replace_blocks(
        template,
        order_cap=n,
        mu=jp.y1.coeffs[:size],
        nu=jp.y2.coeffs[:size],
        lead_a=jp.y1.degree_block(n + 1),
        lead_b=jp.y2.degree_block(n + 1),
    )


def global_apply(gm: GlobalMapModel, p: PhasePoint) -> PhasePoint:
    rx, ry, ru, rv = row_blocks(gm)
    bx, bu, bv = b_row_blocks(gm)
    x = np.asarray(p.x, dtype=float)
    u = np.asarray(p.u, dtype=float)
    v = np.asarray(p.v, dtype=float)
    big_y = np.asarray(p.y, dtype=float) - gm.y_minus

    vbar = _solve_v_line(gm, x, big_y, u, v, rv, bv)

    xbar = (
        gm.x_plus
        + gm.a[rx] @ x
        + gm.b[bx] @ big_y
        + gm.c[rx] @ u
        + gm.d[rx] @ vbar
    )
    jp = global_tangent_jet(gm)
    ybar = (
        gm.a[ry] @ x
        + np.array(jp.evaluate(big_y[0], big_y[1]))
        + gm.c[ry] @ u
        + gm.d[ry] @ vbar
    )
    ubar = (
        gm.u_plus
        + gm.a[ru] @ x
        + gm.b[bu] @ big_y
        + gm.c[ru] @ u
        + gm.d[ru] @ vbar
    )
    return PhasePoint(xbar, ybar, ubar, vbar)


def _solve_v_line(gm, x, big_y, u, v, rv, bv) -> np.ndarray:
    """Solve v - v_minus = a6 x + b6 Y + c6 u + d6 vbar for vbar."""
    q = gm.v_minus.size
    vbar = np.zeros(q)
    if q == 0:
        return vbar
    d6 = gm.d[rv]
    scale = 1.0 + float(np.max(np.abs(v)))
    for _ in range(FIXED_POINT_ITERATIONS):
        residual = v - gm.v_minus - (gm.a[rv] @ x + gm.b[bv] @ big_y + gm.c[rv] @ u + d6 @ vbar)
        if np.max(np.abs(residual)) <= FIXED_POINT_TOLERANCE * scale:
            return vbar
        try:
            vbar = vbar + np.linalg.solve(d6, residual)
        except np.linalg.LinAlgError as e:
            raise ConvergenceError(f"global_apply - v-line is singular: {e}") from e
    raise ConvergenceError(
        f"global_apply - v-line did not settle within {FIXED_POINT_ITERATIONS} sweeps"
    )


def _row_bound(matrix: np.ndarray) -> float:
    return float(np.prod(np.linalg.norm(matrix, axis=1)))


def _relative_det(matrix: np.ndarray, bound: float = None):
    if matrix.size == 0:
        return 1.0, True
    det = float(np.linalg.det(matrix))
    if bound is None:
        bound = _row_bound(matrix)
    return det, abs(det) > GENERICITY_THRESHOLD * bound


def validate_genericity(gm: GlobalMapModel) -> GenericityReport:
    """
    Nondegeneracy of the transversal blocks, each relative to its row norms.

    The 4x4 transversality determinant equals det(a34) * det(b12) because
    the y rows carry no linear Y terms, so a12 never enters it; it is
    measured against the row norms of those two blocks.
    """
    rx, ry, _, rv = row_blocks(gm)
    bx, _, bv = b_row_blocks(gm)
    a34, b12, d6 = gm.a[ry], gm.b[bx], gm.d[rv]
    transverse = np.block([[gm.a[rx], b12], [a34, np.zeros((2, 2))]])

    failures = []
    dets = {}
    for name, block, bound in (
        ("det_a34", a34, None),
        ("det_b12", b12, None),
        ("det_d6", d6, None),
        ("det_transverse", transverse, _row_bound(a34) * _row_bound(b12)),
    ):
        dets[name], ok = _relative_det(block, bound)
        if not ok:
            failures.append(name)
    return GenericityReport(passed=not failures, failures=tuple(failures), **dets)


def random_model(
    rng: np.random.Generator,
    order_cap: int,
    p: int = 1,
    q: int = 1,
    couplings: bool = False,
) -> GlobalMapModel:
    """A generic model at a tangency of index (order_cap, 0)."""

    def well_conditioned():
        return rotation(rng.uniform(0, 2 * math.pi)) @ np.diag(rng.uniform(0.5, 1.5, 2))

    rows = 4 + p + q
    a = 0.5 * rng.normal(size=(rows, 2))
    a[2:4] = well_conditioned()
    b = 0.5 * rng.normal(size=(2 + p + q, 2))
    b[0:2] = well_conditioned()
    if couplings:
        c = 0.1 * rng.normal(size=(rows, p))
        d = 0.1 * rng.normal(size=(rows, q))
    else:
        c = np.zeros((rows, p))
        d = np.zeros((rows, q))
    d[4 + p :, :] += np.diag(rng.uniform(0.5, 1.5, q))

    lead_a = 0.5 * rng.normal(size=order_cap + 2)
    lead_b = 0.5 * rng.normal(size=order_cap + 2)
    radius, angle = rng.uniform(0.5, 1.5), rng.uniform(0, 2 * math.pi)
    lead_a[0], lead_b[0] = radius * math.cos(angle), radius * math.sin(angle)

    return make_model(
        order_cap,
        lead_a,
        lead_b,
        x_plus=0.5 * rng.normal(size=2),
        y_minus=0.5 * rng.normal(size=2),
        u_plus=0.5 * rng.normal(size=p),
        v_minus=0.5 * rng.normal(size=q),
        a=a,
        b=b,
        c=c,
        d=d,
    )


def reference_model(order_cap: int = 2) -> GlobalMapModel:
    """Identity transversal blocks, y_minus = 0 and x_plus = (0.5, 0); A_0 = B_1 = 1."""
    a = np.zeros((6, 2))
    a[2:4] = np.eye(2)
    b = np.zeros((4, 2))
    b[0:2] = np.eye(2)
    lead_a = np.zeros(order_cap + 2)
    lead_b = np.zeros(order_cap + 2)
    lead_a[0] = lead_b[1] = 1.0
    return make_model(
        order_cap,
        lead_a,
        lead_b,
        x_plus=(0.5, 0.0),
        u_plus=(0.0,),
        v_minus=(0.0,),
        a=a,
        b=b,
    )


def model_to_dict(gm: GlobalMapModel) -> dict:
    return {
        name: (value if name == "order_cap" else value.tolist())
        for name, value in gm._asdict().items()
    }


def model_from_dict(data: dict) -> GlobalMapModel:
    unknown = set(data) - MODEL_KEYS
    if unknown:
        raise ContractViolationError(f"load_model - unknown keys {sorted(unknown)}")
    missing = {"order_cap", "lead_a", "lead_b"} - set(data)
    if missing:
        raise ContractViolationError(f"load_model - missing keys {sorted(missing)}")
    return make_model(**data)


def dump_model(gm: GlobalMapModel) -> str:
    return json.dumps(model_to_dict(gm), indent=2)


def load_model(text: str) -> GlobalMapModel:
    return model_from_dict(json.loads(text))


def spectrum_from_dict(data: dict) -> BiFocusSpectrum:
    if set(data) != SPECTRUM_KEYS:
        raise ContractViolationError(
            f"spectrum - expected keys {sorted(SPECTRUM_KEYS)}, got {sorted(data)}"
        )
    fields = dict(data)
    fields["stable_nonleading"] = tuple(fields["stable_nonleading"])
    fields["unstable_nonleading"] = tuple(fields["unstable_nonleading"])
    return validate_spectrum(BiFocusSpectrum(**fields))


def spectrum_to_dict(spec: BiFocusSpectrum) -> dict:
    fields = spec._asdict()
    fields["stable_nonleading"] = list(spec.stable_nonleading)
    fields["unstable_nonleading"] = list(spec.unstable_nonleading)
    return fields
