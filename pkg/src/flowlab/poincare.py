"""Linear, extended and sectional Poincare maps on normal sections.

The linear Poincare flow pushes a normal vector with the variational flow
and projects it orthogonally back onto the normal space at the image point;
the extended variant does the same over an arbitrary unit direction evolved
by the normalized variational flow.  The sectional Poincare map is the
nonlinear holonomy between normal sections, realized through the flowbox
chart at the image point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RadiusError, SingularityError
from .fields import effective_lipschitz, flow, speed
from .flowbox import chart_radius, flowbox_invert, make_chart
from .util import orthonormal_complement, orthonormalize, unit


@dataclass(frozen=True)
class NormalFrame:
    """Orthonormal basis of the hyperplane perpendicular to a unit direction."""

    point: np.ndarray
    direction: np.ndarray
    basis: np.ndarray  # (d, d-1)

    def validate(self, tol=1e-12):
        if abs(np.linalg.norm(self.direction) - 1.0) > tol:
            raise ValueError("direction is not unit")
        G = self.basis.T @ self.basis
        if np.max(np.abs(G - np.eye(self.basis.shape[1]))) > 10 * tol:
            raise ValueError("basis is not orthonormal")
        if np.max(np.abs(self.basis.T @ self.direction)) > 10 * tol:
            raise ValueError("basis is not perpendicular to the direction")
        return True

    def to_json_dict(self):
        return {"point": self.point.tolist(),
                "direction": self.direction.tolist(),
                "basis": self.basis.tolist()}


def frame_at(field, x) -> NormalFrame:
    """Canonical frame at a regular point (direction = flow direction)."""
    x = np.asarray(x, dtype=float)
    if speed(field, x) <= field.singular_speed():
        raise SingularityError(f"{x.tolist()} is singular")
    e = unit(np.asarray(field.func(x), dtype=float))
    return NormalFrame(point=x, direction=e, basis=orthonormal_complement(e))


def frame_for_direction(point, e) -> NormalFrame:
    e = unit(np.asarray(e, dtype=float))
    return NormalFrame(point=np.asarray(point, dtype=float), direction=e,
                       basis=orthonormal_complement(e))


@dataclass(frozen=True)
class NormalMap:
    """A linear map between two normal spaces, in the two frame bases."""

    source: NormalFrame
    target: NormalFrame
    matrix: np.ndarray  # (d-1, d-1)

    def apply(self, v):
        """Apply to an ambient normal vector at the source point."""
        return self.target.basis @ (self.matrix @ (self.source.basis.T @ np.asarray(v, dtype=float)))

    def compose(self, first: "NormalMap") -> "NormalMap":
        """self o first; frames at the junction are aligned automatically."""
        R = self.source.basis.T @ first.target.basis
        return NormalMap(source=first.source, target=self.target,
                         matrix=self.matrix @ R @ first.matrix)

    def in_frames(self, source: NormalFrame, target: NormalFrame) -> np.ndarray:
        """Matrix of the same map re-expressed in other frames."""
        Rs = self.source.basis.T @ source.basis
        Rt = target.basis.T @ self.target.basis
        return Rt @ self.matrix @ Rs

    def ambient_operator(self) -> np.ndarray:
        """The map as a (d, d) matrix acting on ambient normal vectors."""
        return self.target.basis @ self.matrix @ self.source.basis.T

    def to_json_dict(self):
        return {"source_frame": self.source.to_json_dict(),
                "target_frame": self.target.to_json_dict(),
                "matrix": self.matrix.tolist()}


def _transport_basis(basis, Phi, e_target):
    """Push a normal basis with Phi, project off e_target, re-orthonormalize.

    The second projection pass removes the flow-direction residue that QR
    amplifies when the projected map is nearly singular.
    """
    moved = Phi @ basis
    moved = moved - np.outer(e_target, e_target @ moved)
    Q = orthonormalize(moved)
    Q = Q - np.outer(e_target, e_target @ Q)
    return orthonormalize(Q)


def linear_poincare(field, x, t, tol=1e-9) -> NormalMap:
    """Orthogonal projection of the variational flow between normal spaces."""
    x = np.asarray(x, dtype=float)
    src = frame_at(field, x)
    if t == 0.0:
        return NormalMap(source=src, target=src,
                         matrix=np.eye(field.dimension - 1))
    state, Phi = flow(field, x, t, tol)
    if speed(field, state) <= field.singular_speed():
        raise SingularityError(f"endpoint of flow at t={t} is singular", time=t)
    e1 = unit(np.asarray(field.func(state), dtype=float))
    basis1 = _transport_basis(src.basis, Phi, e1)
    tgt = NormalFrame(point=state, direction=e1, basis=basis1)
    # basis1 is already perpendicular to e1, so basis1^T Phi is the projected map
    return NormalMap(source=src, target=tgt, matrix=basis1.T @ Phi @ src.basis)


def extended_linear_poincare(field, x, e, t, tol=1e-9):
    """Direction evolution and the projected variational flow over it.

    Returns (evolved unit direction, NormalMap).  Over the flow direction of
    a regular point this coincides with `linear_poincare`.
    """
    x = np.asarray(x, dtype=float)
    e = unit(np.asarray(e, dtype=float))
    src = frame_for_direction(x, e)
    if t == 0.0:
        return e, NormalMap(source=src, target=src,
                            matrix=np.eye(field.dimension - 1))
    state, Phi = flow(field, x, t, tol)
    moved = Phi @ e
    norm = np.linalg.norm(moved)
    if norm == 0.0:
        raise SingularityError("variational image of the direction vanished")
    e1 = moved / norm
    basis1 = _transport_basis(src.basis, Phi, e1)
    tgt = NormalFrame(point=state, direction=e1, basis=basis1)
    return e1, NormalMap(source=src, target=tgt,
                         matrix=basis1.T @ Phi @ src.basis)


def psi_ambient(field, x, t, tol=1e-9):
    """Ambient (d x d) matrix acting as the linear Poincare flow on N_x.

    Returns (matrix, endpoint state).  The matrix annihilates nothing useful
    on the flow line; restrict it to normal vectors.
    """
    x = np.asarray(x, dtype=float)
    state, Phi = flow(field, x, t, tol)
    e1 = unit(np.asarray(field.func(state), dtype=float))
    return Phi - np.outer(e1, e1 @ Phi), state


def section_radius(t, L) -> float:
    """Admissible relative radius of the time-t sectional map."""
    Leff = effective_lipschitz(L)
    return np.exp(-2.0 * Leff * abs(t)) * chart_radius(L) / 3.0


@dataclass(frozen=True)
class SectionalMap:
    """Value and derivative of a sectional Poincare map at one normal vector."""

    value: np.ndarray            # ambient vector in the target normal space
    derivative: np.ndarray       # (d-1, d-1) in the chart frames
    source: NormalFrame
    target: NormalFrame
    time_offset: float           # chart time coordinate of the landing point

    @property
    def derivative_map(self) -> NormalMap:
        return NormalMap(source=self.source, target=self.target,
                         matrix=self.derivative)


def sectional_poincare(field, x, T, v, L, tol=1e-9, fd_step=None,
                       max_radius=None) -> SectionalMap:
    """Holonomy from the normal section at x to the one at the time-T image.

    `v` must be an ambient normal vector at x with |v| within the admissible
    radius (`section_radius(T, L) * |X(x)|` by default; pass `max_radius` to
    work beyond the guaranteed radius).  The derivative is computed by
    central differences over the chart frame with step `fd_step`
    (default 1e-4 * |X(x)|).
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    sx = speed(field, x)
    if sx <= field.singular_speed():
        raise SingularityError("sectional map requires a regular base point")
    radius = (section_radius(T, L) * sx) if max_radius is None else float(max_radius)
    if np.linalg.norm(v) > radius * (1.0 + 1e-9):
        raise RadiusError(
            f"|v|={np.linalg.norm(v):.3e} exceeds the section radius {radius:.3e}")
    src = frame_at(field, x)
    if np.linalg.norm(v) > 0 and abs(np.dot(v, src.direction)) > 1e-9 * np.linalg.norm(v):
        raise RadiusError("v is not a normal vector at x")

    x1, _ = flow(field, x, T, tol)
    chart1 = make_chart(field, x1, L)
    tgt = NormalFrame(point=x1, direction=chart1.flow_dir, basis=chart1.frame)

    def landing(w):
        state, _ = flow(field, x + w, T, tol)
        return flowbox_invert(chart1, state, tol=tol)

    value, s0 = landing(v)

    h = fd_step if fd_step is not None else 1e-4 * sx
    d = field.dimension
    D = np.empty((d - 1, d - 1))
    for k in range(d - 1):
        step = h * src.basis[:, k]
        wp, _ = landing(v + step)
        wm, _ = landing(v - step)
        D[:, k] = chart1.frame.T @ (wp - wm) / (2.0 * h)
    return SectionalMap(value=value, derivative=D, source=src, target=tgt,
                        time_offset=s0)
