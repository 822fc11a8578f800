"""Vector fields, flow and variational-flow integration, Lipschitz estimates.

All dynamics live on an axis-aligned box in R^d with the Euclidean metric.
The flow map and its derivative are integrated jointly as one augmented ODE
so the tangent data is always consistent with the state trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import solve_ivp

from .errors import DomainError, EscapeError, StiffnessError
from .util import write_csv

_METHOD = "DOP853"

#: Floor applied to Lipschitz constants everywhere downstream, so the chart
#: radius 1/(10 L) stays finite for near-constant fields.
LIPSCHITZ_FLOOR = 1e-2

#: Safety factor applied on top of sampled Jacobian norms.
LIPSCHITZ_SAFETY = 1.05


def effective_lipschitz(L: float) -> float:
    return max(float(L), LIPSCHITZ_FLOOR)


def ivp_options(tol: float) -> dict:
    """Solver tolerances for a requested per-unit-time error target.

    The local tolerance is set a decade below the target so the accumulated
    error over order-one times stays within `tol` (floored at the DOP853
    working limit).
    """
    rtol = max(float(tol) * 0.1, 3e-14)
    return {"rtol": rtol, "atol": rtol * 1e-3}


@dataclass(frozen=True)
class Box:
    """Axis-aligned box [lo_1, hi_1] x ... x [lo_d, hi_d]."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise DomainError("box bounds must be 1-d arrays of equal length")
        if not np.all(hi > lo):
            raise DomainError("box must have positive extent on every axis")

    @property
    def dimension(self) -> int:
        return self.lo.size

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.hi - self.lo))

    def contains(self, x, slack=0.0) -> bool:
        x = np.asarray(x, dtype=float)
        pad = slack * self.diameter
        return bool(np.all(x >= self.lo - pad) and np.all(x <= self.hi + pad))

    def sample(self, rng, n):
        u = rng.random((n, self.dimension))
        return self.lo + u * (self.hi - self.lo)

    def to_json_dict(self):
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}


@dataclass(frozen=True)
class VectorFieldSpec:
    """A named C^1 vector field on a box, with an analytic Jacobian.

    `func` and `jac` accept either a single point (d,) or a stack (n, d)
    when `vectorized` is true.
    """

    name: str
    dimension: int
    params: tuple
    domain: Box
    func: Callable = dc_field(repr=False, compare=False, default=None)
    jac: Callable = dc_field(repr=False, compare=False, default=None)
    kind: str = "custom"
    vectorized: bool = False
    analytic_jacobian: bool = True

    def __post_init__(self):
        if self.dimension < 2:
            raise DomainError("fields must live in dimension >= 2")
        if self.domain.dimension != self.dimension:
            raise DomainError("domain dimension mismatch")

    def singular_speed(self) -> float:
        """Speeds at or below this are treated as singular."""
        return 1e-12 * self.domain.diameter

    def known_singularities(self):
        """Analytic zeros for the builtin kinds (empty tuple if none known)."""
        return _known_singularities(self)

    def to_json_dict(self):
        if self.kind == "custom":
            raise DomainError("custom fields are not serializable")
        return {
            "kind": self.kind,
            "params": list(self.params),
            "domain": self.domain.to_json_dict(),
        }


def _fd_jacobian(func, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    d = x.size
    J = np.empty((d, d))
    for j in range(d):
        step = h * max(1.0, abs(x[j]))
        xp = x.copy()
        xm = x.copy()
        xp[j] += step
        xm[j] -= step
        J[:, j] = (np.asarray(func(xp)) - np.asarray(func(xm))) / (2.0 * step)
    return J


def custom_field(name, dimension, func, domain, jac=None, params=()):
    """Wrap a user-supplied field; a missing Jacobian falls back to central
    differences (lower accuracy, flagged via `analytic_jacobian`)."""
    analytic = jac is not None
    if jac is None:
        jac = lambda x: _fd_jacobian(func, x)  # noqa: E731
    return VectorFieldSpec(
        name=name, dimension=dimension, params=tuple(params), domain=domain,
        func=func, jac=jac, kind="custom", vectorized=False,
        analytic_jacobian=analytic,
    )


# ---------------------------------------------------------------------------
# builtin field kinds


def _linear_field(params, domain):
    A = np.asarray(params, dtype=float)
    if A.ndim == 1:
        d = int(round(np.sqrt(A.size)))
        if d * d != A.size:
            raise DomainError("linear field params must be a square matrix")
        A = A.reshape(d, d)
    d = A.shape[0]
    if domain is None:
        domain = Box(np.full(d, -100.0), np.full(d, 100.0))

    def func(x):
        return np.asarray(x, dtype=float) @ A.T

    def jac(x):
        return A.copy()

    return VectorFieldSpec("linear", d, tuple(A.ravel()), domain, func, jac,
                           kind="linear", vectorized=True)


def _rotation_field(params, domain):
    if params:
        raise DomainError("the rotation field takes no parameters")
    if domain is None:
        domain = Box(np.array([-10.0, -10.0]), np.array([10.0, 10.0]))

    def func(x):
        x = np.asarray(x, dtype=float)
        return np.stack([-x[..., 1], x[..., 0]], axis=-1)

    def jac(x):
        return np.array([[0.0, -1.0], [1.0, 0.0]])

    return VectorFieldSpec("rotation", 2, (), domain, func, jac,
                           kind="rotation", vectorized=True)


def _lorenz_field(params, domain):
    if len(params) != 3:
        raise DomainError("lorenz requires explicit (sigma, rho, beta); no defaults")
    sigma, rho, beta = (float(p) for p in params)
    if domain is None:
        domain = Box(np.array([-30.0, -40.0, -5.0]), np.array([30.0, 40.0, 60.0]))

    def func(x):
        x = np.asarray(x, dtype=float)
        x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
        return np.stack([sigma * (x2 - x1), x1 * (rho - x3) - x2,
                         x1 * x2 - beta * x3], axis=-1)

    def jac(x):
        x = np.asarray(x, dtype=float)
        return np.array([
            [-sigma, sigma, 0.0],
            [rho - x[2], -1.0, -x[0]],
            [x[1], x[0], -beta],
        ])

    return VectorFieldSpec("lorenz", 3, (sigma, rho, beta), domain, func, jac,
                           kind="lorenz", vectorized=True)


def _saddle_suspension_field(params, domain):
    # Planar saddle (rate a expanding, b contracting) driven at constant
    # speed omega in the third coordinate; nonsingular on any box.
    if not params:
        params = (1.0, 1.0, 1.0)
    if len(params) != 3:
        raise DomainError("saddle_suspension takes (a, b, omega)")
    a, b, omega = (float(p) for p in params)
    if omega == 0.0:
        raise DomainError("saddle_suspension needs omega != 0 to stay nonsingular")
    if domain is None:
        domain = Box(np.full(3, -10.0), np.full(3, 10.0))

    def func(x):
        x = np.asarray(x, dtype=float)
        return np.stack([a * x[..., 0], -b * x[..., 1],
                         omega * np.ones_like(x[..., 2])], axis=-1)

    def jac(x):
        return np.diag([a, -b, 0.0])

    return VectorFieldSpec("saddle_suspension", 3, (a, b, omega), domain,
                           func, jac, kind="saddle_suspension", vectorized=True)


FIELD_KINDS = {
    "linear": _linear_field,
    "rotation": _rotation_field,
    "lorenz": _lorenz_field,
    "saddle_suspension": _saddle_suspension_field,
}


def make_field(kind, params=(), domain=None) -> VectorFieldSpec:
    if kind not in FIELD_KINDS:
        raise DomainError(
            f"unknown field kind {kind!r}; registry: {sorted(FIELD_KINDS)}")
    return FIELD_KINDS[kind](tuple(params), domain)


def field_from_json(d) -> VectorFieldSpec:
    dom = d.get("domain")
    box = Box(np.asarray(dom["lo"]), np.asarray(dom["hi"])) if dom else None
    return make_field(d["kind"], tuple(d.get("params", ())), box)


def _known_singularities(field):
    if field.kind == "linear":
        A = np.asarray(field.params, dtype=float).reshape(field.dimension, -1)
        if abs(np.linalg.det(A)) > 1e-12:
            return (np.zeros(field.dimension),)
        return ()
    if field.kind == "rotation":
        return (np.zeros(2),)
    if field.kind == "lorenz":
        sigma, rho, beta = field.params
        sings = [np.zeros(3)]
        if rho > 1.0:
            r = np.sqrt(beta * (rho - 1.0))
            sings.append(np.array([r, r, rho - 1.0]))
            sings.append(np.array([-r, -r, rho - 1.0]))
        return tuple(s for s in sings if field.domain.contains(s))
    if field.kind == "saddle_suspension":
        return ()
    return ()


# ---------------------------------------------------------------------------
# evaluation and integration


def evaluate(field: VectorFieldSpec, x):
    """Field value and Jacobian at a point of the domain."""
    x = np.asarray(x, dtype=float)
    if not field.domain.contains(x, slack=1e-12):
        raise DomainError(f"point {x.tolist()} outside domain of {field.name}")
    return np.asarray(field.func(x), dtype=float), np.asarray(field.jac(x), dtype=float)


def speed(field, x):
    return float(np.linalg.norm(field.func(np.asarray(x, dtype=float))))


def _domain_event(field, offset=0):
    lo, hi = field.domain.lo, field.domain.hi

    def event(t, y):
        x = y[offset:offset + field.dimension]
        return float(min(np.min(x - lo), np.min(hi - x)))

    event.terminal = True
    return event


def _check_solution(sol, what):
    if sol.status == 1:
        texit = float(sol.t_events[0][0]) if sol.t_events and len(sol.t_events[0]) else None
        raise EscapeError(f"orbit left the domain during {what}", exit_time=texit)
    if sol.status != 0:
        raise StiffnessError(f"integrator failed during {what}: {sol.message}")


def _augmented_rhs(field):
    d = field.dimension

    def rhs(t, y):
        x = y[:d]
        Phi = y[d:].reshape(d, d)
        fx = np.asarray(field.func(x), dtype=float)
        J = np.asarray(field.jac(x), dtype=float)
        return np.concatenate([fx, (J @ Phi).ravel()])

    return rhs


def flow(field: VectorFieldSpec, x, t: float, tol: float = 1e-9):
    """Flow a point for time t; returns (state, variational matrix).

    The state and the variational equation are integrated jointly; the local
    error target is `tol` (relative, with a small absolute floor). Orbits
    leaving the domain raise EscapeError with the exit time.
    """
    x = np.asarray(x, dtype=float)
    d = field.dimension
    if not field.domain.contains(x, slack=1e-12):
        raise DomainError(f"initial point {x.tolist()} outside domain")
    if t == 0.0:
        return x.copy(), np.eye(d)
    y0 = np.concatenate([x, np.eye(d).ravel()])
    sol = solve_ivp(_augmented_rhs(field), (0.0, t), y0, method=_METHOD,
                    **ivp_options(tol), events=_domain_event(field),
                    dense_output=False)
    _check_solution(sol, f"flow of {field.name} to t={t}")
    y = sol.y[:, -1]
    return y[:d], y[d:].reshape(d, d)


def flow_points(field, x, times, tol=1e-9):
    """States of the orbit of x at a collection of (possibly signed) times.

    One integration per sign; results are returned in the input order.
    """
    times = np.asarray(times, dtype=float)
    x = np.asarray(x, dtype=float)
    d = field.dimension
    out = np.empty((times.size, d))
    order = np.argsort(times, kind="stable")
    ts = times[order]
    for sign in (-1.0, 1.0):
        mask = ts < 0 if sign < 0 else ts > 0
        if not np.any(mask):
            continue
        tev = ts[mask]
        if sign < 0:
            tev = tev[::-1]
        sol = solve_ivp(lambda t, y: field.func(y), (0.0, float(tev[-1])), x,
                        method=_METHOD, **ivp_options(tol),
                        t_eval=tev, events=_domain_event(field))
        _check_solution(sol, f"orbit sampling of {field.name}")
        vals = sol.y.T
        if sign < 0:
            vals = vals[::-1]
        out[order[mask]] = vals
    if np.any(ts == 0):
        out[order[ts == 0]] = x
    return out


def flow_states_batch(field, points, t, tol=1e-9, t_eval=None):
    """Integrate a stack of initial states over the same time span.

    No domain events are installed (intended for chart-local batches); the
    final states are range-checked instead.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    k, d = points.shape

    if field.vectorized:
        def rhs(s, y):
            return np.asarray(field.func(y.reshape(k, d)), dtype=float).ravel()
    else:
        def rhs(s, y):
            Y = y.reshape(k, d)
            return np.stack([np.asarray(field.func(row), dtype=float)
                             for row in Y]).ravel()

    tev = None
    if t_eval is not None:
        tev = np.asarray(t_eval, dtype=float)
    sol = solve_ivp(rhs, (0.0, float(t)), points.ravel(), method=_METHOD,
                    **ivp_options(tol), t_eval=tev)
    _check_solution(sol, "batched orbit integration")
    states = sol.y.T.reshape(-1, k, d)
    for frame in (states[-1],):
        for row in frame:
            if not field.domain.contains(row, slack=1e-9):
                raise EscapeError("a batched orbit left the domain")
    if t_eval is None:
        return states[-1]
    return states


# ---------------------------------------------------------------------------
# orbit segments


@dataclass(frozen=True)
class OrbitSegment:
    """Time grid, states, speeds and optional variational matrices of one orbit."""

    base: np.ndarray
    times: np.ndarray
    states: np.ndarray
    speeds: np.ndarray
    variational: Optional[np.ndarray] = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        if times.ndim != 1 or times.size < 1 or np.any(np.diff(times) <= 0):
            raise DomainError("orbit times must be strictly increasing")

    @property
    def n_nodes(self):
        return self.times.size

    def step(self):
        dt = np.diff(self.times)
        if dt.size and np.max(np.abs(dt - dt[0])) > 1e-9 * max(1.0, abs(dt[0])):
            raise DomainError("orbit grid is not uniform")
        return float(dt[0]) if dt.size else 0.0

    def validate(self, field, rel=1e-9):
        for i in range(self.n_nodes):
            s = speed(field, self.states[i])
            ref = max(abs(self.speeds[i]), field.singular_speed())
            if abs(s - self.speeds[i]) > rel * ref:
                raise DomainError(f"stored speed at node {i} off by more than {rel}")
        return True

    def slice(self, lo, hi):
        """Sub-segment on node indices [lo, hi) (base point unchanged)."""
        var = None if self.variational is None else self.variational[lo:hi]
        return OrbitSegment(base=self.base, times=self.times[lo:hi],
                            states=self.states[lo:hi], speeds=self.speeds[lo:hi],
                            variational=var)

    def check_variational_cocycle(self, field, i, j, tol=1e-9):
        """Relative defect of Phi_{t_j} vs Phi_{t_j - t_i}(state_i) . Phi_{t_i}."""
        if self.variational is None:
            raise DomainError("orbit carries no variational data")
        _, step_map = flow(field, self.states[i], self.times[j] - self.times[i], tol)
        lhs = self.variational[j]
        rhs = step_map @ self.variational[i]
        return float(np.linalg.norm(lhs - rhs, 2) / max(np.linalg.norm(lhs, 2), 1e-300))

    def to_json_dict(self):
        d = {
            "base": self.base.tolist(),
            "times": self.times.tolist(),
            "states": self.states.tolist(),
            "speeds": self.speeds.tolist(),
        }
        if self.variational is not None:
            # row-major flattening per node
            d["variational"] = [m.ravel().tolist() for m in self.variational]
        return d


def sample_orbit(field, x, times, tol=1e-9, variational=False) -> OrbitSegment:
    """Integrate one orbit and record states/speeds (and optionally Phi_t)."""
    times = np.asarray(times, dtype=float)
    x = np.asarray(x, dtype=float)
    d = field.dimension
    if variational:
        states = np.empty((times.size, d))
        mats = np.empty((times.size, d, d))
        order = np.argsort(times, kind="stable")
        ts = times[order]
        for sign in (-1.0, 1.0):
            mask = ts < 0 if sign < 0 else ts > 0
            if not np.any(mask):
                continue
            tev = ts[mask]
            if sign < 0:
                tev = tev[::-1]
            y0 = np.concatenate([x, np.eye(d).ravel()])
            sol = solve_ivp(_augmented_rhs(field), (0.0, float(tev[-1])), y0,
                            method=_METHOD, **ivp_options(tol),
                            t_eval=tev, events=_domain_event(field))
            _check_solution(sol, "variational orbit sampling")
            vals = sol.y.T
            if sign < 0:
                vals = vals[::-1]
            states[order[mask]] = vals[:, :d]
            mats[order[mask]] = vals[:, d:].reshape(-1, d, d)
        zero = ts == 0
        if np.any(zero):
            states[order[zero]] = x
            mats[order[zero]] = np.eye(d)
        var = mats
    else:
        states = flow_points(field, x, times, tol)
        var = None
    speeds = np.linalg.norm(np.asarray(field.func(states), dtype=float), axis=-1) \
        if field.vectorized else np.array([speed(field, s) for s in states])
    return OrbitSegment(base=x, times=times, states=states, speeds=speeds,
                        variational=var)


def orbit_to_csv(segment: OrbitSegment, path):
    d = segment.states.shape[1]
    header = ["t"] + [f"x_{i+1}" for i in range(d)] + ["speed"]
    rows = [[segment.times[i], *segment.states[i], segment.speeds[i]]
            for i in range(segment.n_nodes)]
    write_csv(path, header, rows)


# ---------------------------------------------------------------------------
# Lipschitz estimation and point sampling


def estimate_lipschitz(field, region: Box, samples: int, seed: int = 0) -> float:
    """Sampled sup of the Jacobian operator norm times a 1.05 safety factor."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if not isinstance(region, Box):
        region = Box(np.asarray(region[0]), np.asarray(region[1]))
    rng = np.random.default_rng(seed)
    pts = region.sample(rng, samples)
    worst = 0.0
    for p in pts:
        J = np.asarray(field.jac(p), dtype=float)
        worst = max(worst, float(np.linalg.norm(J, 2)))
    return LIPSCHITZ_SAFETY * worst


def orbit_bounding_region(segment: OrbitSegment, pad=0.1) -> Box:
    lo = segment.states.min(axis=0)
    hi = segment.states.max(axis=0)
    width = np.maximum(hi - lo, 1e-6)
    return Box(lo - pad * width, hi + pad * width)


def sample_regular_points(field, box: Box, n, seed=0, burn=0.0, tol=1e-9,
                          min_speed=None):
    """Deterministically sample points of the box with non-tiny speed.

    With burn > 0 each seed point is flowed forward first (useful for landing
    near an attractor); candidates that escape or are near-singular are
    discarded.
    """
    rng = np.random.default_rng(seed)
    floor = field.singular_speed() if min_speed is None else min_speed
    out = []
    attempts = 0
    while len(out) < n and attempts < 200 * n:
        attempts += 1
        x = box.sample(rng, 1)[0]
        try:
            if burn > 0.0:
                x = flow_points(field, x, [burn], tol)[0]
        except (EscapeError, StiffnessError):
            continue
        if not field.domain.contains(x):
            continue
        if speed(field, x) <= max(floor, 1e3 * field.singular_speed()):
            continue
        out.append(x)
    if len(out) < n:
        raise DomainError("could not sample enough regular points")
    return np.array(out)
