"""Rescaled tangent-box charts around regular points.

The chart at a regular point x maps the box
    { v + t*X(x) : v normal to X(x), |v| <= r0*|X(x)|, |t| <= r0 }
into the phase space by flowing the normal translate x+v for time t, with
the uniform relative radius r0 = 1/(10 L).  On Euclidean charts the map is
an embedding with |D F - id| <= 1/2, mininorm >= 1/2 and norm <= 2, and its
image contains no singularities; `verify_box_bounds` measures all of this
with finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BoxBoundsError, NotInBoxError, SingularityError
from .fields import effective_lipschitz, flow, flow_states_batch, speed
from .util import orthonormal_complement, unit


def chart_radius(L: float) -> float:
    """Relative chart radius r0 = 1/(10 L_eff)."""
    return 1.0 / (10.0 * effective_lipschitz(L))


@dataclass(frozen=True)
class FlowboxChart:
    field: object
    base: np.ndarray
    L: float
    r0: float
    speed: float
    flow_dir: np.ndarray       # X(x)/|X(x)|
    frame: np.ndarray          # (d, d-1), orthonormal, perpendicular to flow_dir

    @property
    def v_radius(self):
        return self.r0 * self.speed

    def to_json_dict(self):
        return {
            "base": self.base.tolist(),
            "L": self.L,
            "r0": self.r0,
            "speed": self.speed,
            "flow_dir": self.flow_dir.tolist(),
            "frame": self.frame.tolist(),
        }


def make_chart(field, x, L) -> FlowboxChart:
    x = np.asarray(x, dtype=float)
    s = speed(field, x)
    if s <= field.singular_speed():
        raise SingularityError(f"chart base {x.tolist()} is singular")
    e = unit(np.asarray(field.func(x), dtype=float))
    return FlowboxChart(field=field, base=x, L=float(L), r0=chart_radius(L),
                        speed=s, flow_dir=e, frame=orthonormal_complement(e))


def _check_in_box(chart, v, t, slack=1e-9):
    v = np.asarray(v, dtype=float)
    nv = np.linalg.norm(v)
    if nv > chart.v_radius * (1.0 + slack):
        raise BoxBoundsError(
            f"|v|={nv:.3e} exceeds box radius {chart.v_radius:.3e}")
    if abs(t) > chart.r0 * (1.0 + slack):
        raise BoxBoundsError(f"|t|={abs(t):.3e} exceeds r0={chart.r0:.3e}")
    if nv > 0 and abs(np.dot(v, chart.flow_dir)) > 1e-9 * nv:
        raise BoxBoundsError("v is not perpendicular to the flow direction")
    return v


def flowbox_map(chart: FlowboxChart, v, t, tol=1e-9):
    """Chart embedding: flows the normal translate base+v for time t."""
    v = _check_in_box(chart, v, t)
    if t == 0.0:
        return chart.base + v
    state, _ = flow(chart.field, chart.base + v, t, tol)
    return state


def flowbox_invert(chart: FlowboxChart, y, tol=1e-9, max_iter=50,
                   residual_factor=1e-10):
    """Unique chart preimage (v, t) of y, by Newton iteration.

    The v component is the normal-section projection of y.  Points without a
    preimage in the box raise NotInBoxError (non-convergence, or a converged
    preimage falling outside the box bounds).
    """
    y = np.asarray(y, dtype=float)
    d = chart.field.dimension
    dy = y - chart.base
    c = chart.frame.T @ dy
    t = float(np.dot(dy, chart.flow_dir) / chart.speed)
    target = residual_factor * chart.speed
    # generous iteration bounds; the box check below is the real gate
    c = np.clip(c, -2.0 * chart.v_radius, 2.0 * chart.v_radius)
    t = float(np.clip(t, -2.0 * chart.r0, 2.0 * chart.r0))
    for _ in range(max_iter):
        point = chart.base + chart.frame @ c
        state, Phi = flow(chart.field, point, t, tol)
        r = state - y
        if np.linalg.norm(r) <= target:
            break
        J = np.empty((d, d))
        J[:, :d - 1] = Phi @ chart.frame
        J[:, d - 1] = np.asarray(chart.field.func(state), dtype=float)
        try:
            step = np.linalg.solve(J, r)
        except np.linalg.LinAlgError:
            raise NotInBoxError("Newton Jacobian is singular") from None
        c = c - step[:d - 1]
        t = float(t - step[d - 1])
    else:
        raise NotInBoxError(
            f"Newton did not converge in {max_iter} steps (residual "
            f"{np.linalg.norm(r):.3e} > {target:.3e})")
    v = chart.frame @ c
    try:
        _check_in_box(chart, v, t)
    except BoxBoundsError as exc:
        raise NotInBoxError(f"converged preimage outside the box: {exc}") from None
    return v, t


# ---------------------------------------------------------------------------
# derivative-bound verification


@dataclass
class BoxBoundsReport:
    base: np.ndarray
    r0: float
    speed: float
    max_dev_from_id: float
    min_mininorm: float
    max_norm: float
    no_singularity: bool
    bounds_ok: bool
    fd_slack: float
    witnesses: list

    def to_json_dict(self):
        return {
            "base": self.base.tolist(),
            "r0": self.r0,
            "speed": self.speed,
            "max_dev": self.max_dev_from_id,
            "min_mininorm": self.min_mininorm,
            "max_norm": self.max_norm,
            "no_singularity": self.no_singularity,
            "bounds_ok": self.bounds_ok,
            "fd_slack": self.fd_slack,
            "witnesses": self.witnesses,
        }


def _ball_grid(chart, grid):
    """Grid over the tangent box: cube nodes with the normal part radially
    clamped into the ball |v| <= r0*|X(x)|."""
    d = chart.field.dimension
    axis = np.linspace(-1.0, 1.0, grid)
    vs = np.stack(np.meshgrid(*([axis] * (d - 1)), indexing="ij"),
                  axis=-1).reshape(-1, d - 1)
    norms = np.linalg.norm(vs, axis=1)
    scale = np.where(norms > 1.0, 1.0 / np.maximum(norms, 1e-300), 1.0)
    vs = vs * scale[:, None] * chart.v_radius
    ts = axis * chart.r0
    return vs, ts


def verify_box_bounds(chart: FlowboxChart, grid: int, tol=1e-9,
                      fd_slack=1e-3) -> BoxBoundsReport:
    """Finite-difference check of the chart derivative bounds on a grid.

    Central differences with steps 1e-5 * r0 * |X(x)| (normal directions) and
    1e-5 * r0 (time direction). Violations are reported with their witness
    node, never raised.
    """
    if grid < 2:
        raise ValueError("grid must be >= 2")
    field = chart.field
    d = field.dimension
    vs, ts = _ball_grid(chart, grid)
    hv = 1e-5 * chart.v_radius
    ht = 1e-5 * chart.r0
    Q = np.column_stack([chart.frame, chart.flow_dir])
    sing_floor = field.singular_speed()

    max_dev = 0.0
    min_mini = np.inf
    max_norm = 0.0
    no_sing = True
    witnesses = []

    for t in ts:
        # stack per t-node: for every v node the center point plus the
        # 2(d-1) normal-step points, all integrated at once
        pts = []
        for v in vs:
            p0 = chart.base + chart.frame @ v
            pts.append(p0)
            for k in range(d - 1):
                step = hv * chart.frame[:, k]
                pts.append(p0 + step)
                pts.append(p0 - step)
        pts = np.asarray(pts)
        block = 2 * (d - 1) + 1
        if t == 0.0:
            back = flow_states_batch(field, pts, -ht, tol)
            fwd = flow_states_batch(field, pts, ht, tol)
            frames = np.stack([back, pts, fwd])
        else:
            tev = np.array(sorted([t - ht, t, t + ht], key=abs))
            if t < 0:
                tev = np.sort(tev)[::-1]
            else:
                tev = np.sort(tev)
            frames_raw = flow_states_batch(field, pts, t + np.sign(t) * ht,
                                           tol, t_eval=tev)
            idx = {float(tv): i for i, tv in enumerate(tev)}
            frames = np.stack([frames_raw[idx[t - ht]], frames_raw[idx[t]],
                               frames_raw[idx[t + ht]]])
        for m, v in enumerate(vs):
            rows = frames[:, m * block:(m + 1) * block, :]
            center = rows[1, 0]
            M = np.empty((d, d))
            for k in range(d - 1):
                M[:, k] = (rows[1, 1 + 2 * k] - rows[1, 2 + 2 * k]) / (2.0 * hv)
            M[:, d - 1] = (rows[2, 0] - rows[0, 0]) / (2.0 * ht) / chart.speed
            dev = float(np.linalg.norm(M - Q, 2))
            sv = np.linalg.svd(M, compute_uv=False)
            mini, norm = float(sv[-1]), float(sv[0])
            img_speed = speed(field, center)
            max_dev = max(max_dev, dev)
            min_mini = min(min_mini, mini)
            max_norm = max(max_norm, norm)
            if img_speed <= sing_floor:
                no_sing = False
            bad = (dev > 0.5 + fd_slack or mini < 0.5 - fd_slack
                   or norm > 2.0 + fd_slack or img_speed <= sing_floor)
            if bad:
                witnesses.append({"v": (chart.frame @ v).tolist(),
                                  "t": float(t), "dev": dev,
                                  "mininorm": mini, "norm": norm,
                                  "image_speed": img_speed})

    bounds_ok = (max_dev <= 0.5 + fd_slack and min_mini >= 0.5 - fd_slack
                 and max_norm <= 2.0 + fd_slack and no_sing)
    return BoxBoundsReport(base=chart.base, r0=chart.r0, speed=chart.speed,
                           max_dev_from_id=max_dev, min_mininorm=min_mini,
                           max_norm=max_norm, no_singularity=no_sing,
                           bounds_ok=bounds_ok, fd_slack=fd_slack,
                           witnesses=witnesses)
