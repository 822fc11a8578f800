"""Splittings of the normal bundle, cocycles, domination checks, rebalancing.

Splittings are estimated by forward/backward power sweeps of the linear
Poincare flow along an orbit; domination and rescaled contraction/expansion
inequalities are then measured over a finite time grid.  All certificates
are finite-horizon: reports say "no violation found", never "hyperbolic".
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp

from .errors import (CrossingDetectionError, DegenerateProjectionError,
                     DomainError, FlowDirectionError, NoDominationError,
                     RebalanceInfeasibleError)
from .fields import (OrbitSegment, effective_lipschitz, flow,
                     ivp_options, speed)
from .poincare import linear_poincare, psi_ambient
from .util import mininorm, opnorm, orthonormalize, unit, write_csv


@dataclass(frozen=True)
class NormalSplitting:
    """Per-node stable/unstable subspaces inside the normal spaces."""

    orbit: OrbitSegment
    stable: np.ndarray    # (n, d, s) orthonormal columns
    unstable: np.ndarray  # (n, d, u)

    @property
    def dim_s(self):
        return self.stable.shape[2]

    @property
    def dim_u(self):
        return self.unstable.shape[2]

    def validate(self, field, tol=1e-9):
        d = self.orbit.states.shape[1]
        if self.dim_s + self.dim_u != d - 1:
            raise DomainError("splitting dimensions must add to d-1")
        for i in range(self.orbit.n_nodes):
            e = unit(np.asarray(field.func(self.orbit.states[i]), dtype=float))
            for B in (self.stable[i], self.unstable[i]):
                if np.max(np.abs(B.T @ B - np.eye(B.shape[1]))) > tol:
                    raise DomainError(f"basis at node {i} not orthonormal")
                if np.max(np.abs(B.T @ e)) > tol:
                    raise DomainError(f"basis at node {i} not normal to the flow")
        return True


@dataclass(frozen=True)
class TangentSplitting:
    """Per-node splitting of the full tangent space along an orbit."""

    orbit: OrbitSegment
    e_basis: np.ndarray  # (n, d, dim_e)
    f_basis: np.ndarray  # (n, d, dim_f)

    @property
    def dim_e(self):
        return self.e_basis.shape[2]

    @property
    def dim_f(self):
        return self.f_basis.shape[2]


@dataclass(frozen=True)
class CocycleSpec:
    """A positive multiplicative cocycle over the flow.

    kinds: 'trivial' (== 1), 'flow_speed' (norm growth of the flow
    direction), 'pragmatical' (norm growth of the evolved direction inside
    one isolating box, 1 outside), 'product' (pragmaticals with pairwise
    disjoint boxes).
    """

    kind: str
    box: Optional[object] = None       # fields.Box for 'pragmatical'
    factors: tuple = ()                # CocycleSpecs for 'product'

    def validate(self, field=None):
        if self.kind not in ("trivial", "flow_speed", "pragmatical", "product"):
            raise DomainError(f"unknown cocycle kind {self.kind!r}")
        if self.kind == "pragmatical":
            if self.box is None:
                raise DomainError("pragmatical cocycle needs an isolating box")
            if field is not None:
                inside = [s for s in field.known_singularities()
                          if self.box.contains(s)]
                if len(inside) != 1:
                    raise DomainError(
                        f"isolating box must contain exactly one singularity, found {len(inside)}")
        if self.kind == "product":
            if not self.factors:
                raise DomainError("product cocycle needs factors")
            boxes = []
            for f in self.factors:
                if f.kind != "pragmatical":
                    raise DomainError("product factors must be pragmatical")
                f.validate(field)
                boxes.append(f.box)
            for i in range(len(boxes)):
                for j in range(i + 1, len(boxes)):
                    overlap_lo = np.maximum(boxes[i].lo, boxes[j].lo)
                    overlap_hi = np.minimum(boxes[i].hi, boxes[j].hi)
                    if np.all(overlap_hi > overlap_lo):
                        raise DomainError("pragmatical boxes must be disjoint")
        return True

    def to_json_dict(self):
        d = {"kind": self.kind}
        if self.box is not None:
            d["box"] = self.box.to_json_dict()
        if self.factors:
            d["factors"] = [f.to_json_dict() for f in self.factors]
        return d


def trivial_cocycle():
    return CocycleSpec(kind="trivial")


def flow_speed_cocycle():
    return CocycleSpec(kind="flow_speed")


def pragmatical_cocycle(box):
    return CocycleSpec(kind="pragmatical", box=box)


# ---------------------------------------------------------------------------
# cocycle evaluation


def _inside(box, x):
    return bool(np.all(x >= box.lo) and np.all(x <= box.hi))


def _box_gap(box, x):
    # positive inside, negative outside; zero on the boundary
    return float(min(np.min(x - box.lo), np.min(box.hi - x)))


def _find_crossings(box, sol, t, n_grid, diam):
    """Boundary crossing times of the dense orbit interpolant on [0, t]."""
    ts = np.linspace(0.0, t, max(int(n_grid), 16))
    gaps = np.array([_box_gap(box, sol(s)) for s in ts])
    crossings = []
    for i in range(ts.size - 1):
        a, b = ts[i], ts[i + 1]
        ga, gb = gaps[i], gaps[i + 1]
        if ga == 0.0:
            crossings.append(a)
            continue
        if ga * gb < 0.0:
            for _ in range(80):
                mid = 0.5 * (a + b)
                gm = _box_gap(box, sol(mid))
                if gm == 0.0 or (b - a) < 1e-14 * max(1.0, abs(t)):
                    break
                if ga * gm < 0.0:
                    b, gb = mid, gm
                else:
                    a, ga = mid, gm
            crossings.append(0.5 * (a + b))
        elif (0 < i < ts.size - 2 and gaps[i - 1] * gaps[i] > 0
              and gaps[i] * gaps[i + 1] > 0):
            # tangency guard: a local minimum of |gap| grazing the boundary
            # with no sign change anywhere in the bracket
            if abs(gaps[i]) < abs(gaps[i - 1]) and abs(gaps[i]) < abs(gaps[i + 1]):
                lo_s, hi_s = ts[i - 1], ts[i + 1]
                for _ in range(60):
                    m1 = lo_s + (hi_s - lo_s) / 3.0
                    m2 = hi_s - (hi_s - lo_s) / 3.0
                    if abs(_box_gap(box, sol(m1))) < abs(_box_gap(box, sol(m2))):
                        hi_s = m2
                    else:
                        lo_s = m1
                g_min = abs(_box_gap(box, sol(0.5 * (lo_s + hi_s))))
                if g_min < 1e-10 * diam:
                    raise CrossingDetectionError(
                        f"tangential boundary contact near t={0.5 * (lo_s + hi_s):.6f}")
    return crossings


def _pragmatical_value(field, box, x, e, t, tol, n_grid):
    """Product of direction-norm growth over the maximal inside intervals."""
    if t == 0.0:
        return 1.0, x, e
    d = field.dimension
    res = solve_ivp(lambda s, y: np.asarray(field.func(y), dtype=float),
                    (0.0, t), np.asarray(x, float), method="DOP853",
                    **ivp_options(tol), dense_output=True)
    if res.status != 0:
        raise DomainError(f"orbit integration failed: {res.message}")
    sol = res.sol
    crossings = _find_crossings(box, sol, t, n_grid, field.domain.diameter)
    cuts = [0.0] + sorted(crossings) + [t] if t > 0 else \
        [0.0] + sorted(crossings, reverse=True) + [t]
    value = 1.0
    cur_x = np.asarray(x, dtype=float)
    cur_e = unit(np.asarray(e, dtype=float))

    def rhs(s, y):
        xx = y[:d]
        w = y[d:]
        J = np.asarray(field.jac(xx), dtype=float)
        return np.concatenate([np.asarray(field.func(xx), dtype=float), J @ w])

    for a, b in zip(cuts[:-1], cuts[1:]):
        if abs(b - a) < 1e-14:
            continue
        mid = sol(0.5 * (a + b))
        seg = solve_ivp(rhs, (0.0, b - a), np.concatenate([cur_x, cur_e]),
                        method="DOP853", **ivp_options(tol))
        if seg.status != 0:
            raise DomainError(f"direction transport failed: {seg.message}")
        yend = seg.y[:, -1]
        cur_x = yend[:d]
        w = yend[d:]
        growth = float(np.linalg.norm(w))
        if _inside(box, mid):
            value *= growth
        cur_e = w / growth
    return value, cur_x, cur_e


def evaluate_cocycle(field, spec: CocycleSpec, x, e, t, tol=1e-9, n_grid=128):
    """Value h_t at the direction e over x; satisfies the cocycle identity."""
    x = np.asarray(x, dtype=float)
    e = unit(np.asarray(e, dtype=float))
    if t == 0.0:
        return 1.0
    if spec.kind == "trivial":
        return 1.0
    if spec.kind == "flow_speed":
        state, _ = flow(field, x, t, tol)
        s0 = speed(field, x)
        if s0 <= field.singular_speed():
            raise DomainError("flow-speed cocycle is undefined at a singularity")
        return float(speed(field, state) / s0)
    if spec.kind == "pragmatical":
        value, _, _ = _pragmatical_value(field, spec.box, x, e, t, tol, n_grid)
        return value
    if spec.kind == "product":
        out = 1.0
        for f in spec.factors:
            out *= evaluate_cocycle(field, f, x, e, t, tol, n_grid)
        return out
    raise DomainError(f"unknown cocycle kind {spec.kind!r}")


def evolve_direction(field, x, e, t, tol=1e-9):
    """(phi_t(x), normalized variational image of e)."""
    state, Phi = flow(field, np.asarray(x, float), t, tol)
    return state, unit(Phi @ unit(np.asarray(e, float)))


# ---------------------------------------------------------------------------
# splitting estimation


def _step_maps(field, orbit, T_block, tol):
    dt = orbit.step()
    if abs(dt - T_block) > 1e-9 * max(1.0, abs(T_block)):
        raise DomainError("orbit spacing must equal the block time")
    return [linear_poincare(field, orbit.states[i], T_block, tol)
            for i in range(orbit.n_nodes - 1)]


def _aligned_matrices(maps):
    """Step matrices re-expressed so node frames chain consistently."""
    mats = []
    frames = [maps[0].source]
    for m in maps:
        R = m.source.basis.T @ frames[-1].basis
        mats.append(m.matrix @ R)
        frames.append(m.target)
    return mats, frames


def _growth_gap(mats, split_at):
    """Ratio of adjacent per-step growth factors around the split index."""
    d = mats[0].shape[0]
    Q = np.eye(d)
    logs = np.zeros(d)
    for M in mats:
        Z = M @ Q
        Q, R = np.linalg.qr(Z)
        diag = np.abs(np.diag(R))
        logs += np.log(np.maximum(diag, 1e-300))
    rates = np.sort(logs / len(mats))[::-1]
    return float(np.exp(rates[split_at - 1] - rates[split_at]))


def estimate_normal_splitting(field, orbit: OrbitSegment, dim_s: int,
                              T_block: float, tol=1e-9,
                              seed_splitting: Optional[NormalSplitting] = None,
                              gap_threshold=1.05, warmup=0) -> NormalSplitting:
    """Power-sweep estimate of the dominated splitting along an orbit.

    A forward sweep of the step maps extracts the fast (unstable) subspace
    per node, a backward sweep with the inverse maps extracts the slow
    (stable) one.  Nodes near the sweep starts carry warm-up error; pass
    `warmup` to drop that many nodes from both ends of the result.  Raises
    NoDominationError when no per-step singular-value gap >= 1.05 shows up.
    """
    d = field.dimension
    nd = d - 1
    dim_u = nd - dim_s
    if nd < 2 or dim_s < 1 or dim_u < 1:
        raise NoDominationError(
            "normal bundle admits no nontrivial splitting in this dimension")
    maps = _step_maps(field, orbit, T_block, tol)
    mats, frames = _aligned_matrices(maps)
    gap = _growth_gap(mats, dim_u)
    if gap < gap_threshold:
        raise NoDominationError(
            f"per-step singular value gap {gap:.4f} < {gap_threshold}")

    n = orbit.n_nodes
    if seed_splitting is not None:
        U = frames[0].basis.T @ seed_splitting.unstable[0]
        S_end = frames[-1].basis.T @ seed_splitting.stable[-1]
        U = orthonormalize(U)
        S_end = orthonormalize(S_end)
    else:
        # generic deterministic seeds; axis-aligned ones can be invariant
        gen = np.random.default_rng(0x5EED)
        U = orthonormalize(gen.normal(size=(nd, dim_u)))
        S_end = orthonormalize(gen.normal(size=(nd, dim_s)))

    unstable_coords = [U]
    for M in mats:
        U = orthonormalize(M @ U)
        unstable_coords.append(U)
    stable_coords = [S_end]
    for M in reversed(mats):
        S_end = orthonormalize(np.linalg.solve(M, S_end))
        stable_coords.append(S_end)
    stable_coords.reverse()

    stable = np.stack([frames[i].basis @ stable_coords[i] for i in range(n)])
    unstable = np.stack([frames[i].basis @ unstable_coords[i] for i in range(n)])
    if warmup:
        if 2 * warmup >= n:
            raise DomainError("warmup leaves no nodes")
        return NormalSplitting(orbit=orbit.slice(warmup, n - warmup),
                               stable=stable[warmup:n - warmup],
                               unstable=unstable[warmup:n - warmup])
    return NormalSplitting(orbit=orbit, stable=stable, unstable=unstable)


def estimate_tangent_splitting(field, orbit: OrbitSegment, dim_e: int,
                               T_block: float, tol=1e-9,
                               gap_threshold=1.05, warmup=0) -> TangentSplitting:
    """Power-sweep estimate of a dominated splitting of the full tangent flow."""
    d = field.dimension
    dim_f = d - dim_e
    if dim_e < 1 or dim_f < 1:
        raise NoDominationError("tangent splitting dimensions out of range")
    dt = orbit.step()
    if abs(dt - T_block) > 1e-9 * max(1.0, abs(T_block)):
        raise DomainError("orbit spacing must equal the block time")
    mats = []
    for i in range(orbit.n_nodes - 1):
        _, Phi = flow(field, orbit.states[i], T_block, tol)
        mats.append(Phi)
    gap = _growth_gap(mats, dim_f)
    if gap < gap_threshold:
        raise NoDominationError(
            f"per-step singular value gap {gap:.4f} < {gap_threshold}")
    gen = np.random.default_rng(0x5EED)
    F = orthonormalize(gen.normal(size=(d, dim_f)))
    f_list = [F]
    for M in mats:
        F = orthonormalize(M @ F)
        f_list.append(F)
    E = orthonormalize(gen.normal(size=(d, dim_e)))
    e_list = [E]
    for M in reversed(mats):
        E = orthonormalize(np.linalg.solve(M, E))
        e_list.append(E)
    e_list.reverse()
    n = orbit.n_nodes
    if warmup:
        if 2 * warmup >= n:
            raise DomainError("warmup leaves no nodes")
        return TangentSplitting(orbit=orbit.slice(warmup, n - warmup),
                                e_basis=np.stack(e_list[warmup:n - warmup]),
                                f_basis=np.stack(f_list[warmup:n - warmup]))
    return TangentSplitting(orbit=orbit, e_basis=np.stack(e_list),
                            f_basis=np.stack(f_list))


# ---------------------------------------------------------------------------
# domination and rescaled contraction/expansion checks


@dataclass
class DominationReport:
    C: float
    lam: float
    T_grid: list
    entries: list          # dicts per (node, t)
    worst_domination_margin: float
    worst_contraction_margin: float
    worst_expansion_margin: float
    min_principal_angle: float
    domination_ok: bool
    contraction_ok: bool
    expansion_ok: bool

    @property
    def all_ok(self):
        return self.domination_ok and self.contraction_ok and self.expansion_ok

    def to_json_dict(self):
        return {
            "C": self.C, "lambda": self.lam, "T_grid": list(self.T_grid),
            "entries": self.entries,
            "worst_domination_margin": self.worst_domination_margin,
            "worst_contraction_margin": self.worst_contraction_margin,
            "worst_expansion_margin": self.worst_expansion_margin,
            "min_principal_angle": self.min_principal_angle,
            "domination_ok": self.domination_ok,
            "contraction_ok": self.contraction_ok,
            "expansion_ok": self.expansion_ok,
        }

    def to_csv(self, path):
        rows = []
        for e in self.entries:
            rows.append([e["node"], e["t"], e["domination_product"],
                         e["bound"], e["pass"]])
        write_csv(path, ["node", "t", "product", "bound", "pass"], rows)


def check_domination(field, splitting: NormalSplitting, cocycles, C, lam,
                     T_grid, tol=1e-9) -> DominationReport:
    """Measure domination and rescaled contraction/expansion margins.

    `cocycles` is the pair (h_s, h_u).  Each t of the grid must be a
    multiple of the orbit spacing so image nodes carry splitting data.
    Margins are bound/value ratios (>= 1 passes); nothing is raised.
    """
    h_s, h_u = cocycles
    orbit = splitting.orbit
    dt = orbit.step()
    n = orbit.n_nodes
    entries = []
    worst_dom = np.inf
    worst_con = np.inf
    worst_exp = np.inf
    min_angle = np.inf
    for i in range(n):
        sv = np.linalg.svd(splitting.stable[i].T @ splitting.unstable[i],
                           compute_uv=False)
        min_angle = min(min_angle, float(np.sqrt(max(0.0, 1.0 - sv[0] ** 2))))
    for t in T_grid:
        k = int(round(t / dt))
        if abs(k * dt - t) > 1e-9 * max(1.0, abs(t)) or k <= 0:
            raise DomainError(f"t={t} is not a positive multiple of the orbit step")
        bound = C * np.exp(-lam * t)
        for i in range(n - k):
            x = orbit.states[i]
            x_img = orbit.states[i + k]
            fwd, _ = psi_ambient(field, x, t, tol)
            bwd, _ = psi_ambient(field, x_img, -t, tol)
            ns = opnorm(fwd @ splitting.stable[i])
            mu = mininorm(fwd @ splitting.unstable[i])
            nb = opnorm(bwd @ splitting.unstable[i + k])
            product = ns * nb
            e0 = unit(np.asarray(field.func(x), dtype=float))
            e_img = unit(np.asarray(field.func(x_img), dtype=float))
            hs_val = evaluate_cocycle(field, h_s, x, e0, t, tol)
            hu_back = evaluate_cocycle(field, h_u, x_img, e_img, -t, tol)
            hu_fwd = evaluate_cocycle(field, h_u, x, e0, t, tol)
            contraction = hs_val * ns
            expansion_back = hu_back * nb
            dom_margin = bound / max(product, 1e-300)
            con_margin = bound / max(contraction, 1e-300)
            exp_margin = bound / max(expansion_back, 1e-300)
            entries.append({
                "node": i, "t": float(t),
                "domination_product": product,
                "contraction": contraction,
                "expansion_backward": expansion_back,
                "rescaled_expansion": hu_fwd * mu,
                "bound": float(bound),
                "pass": bool(dom_margin > 1 and con_margin > 1 and exp_margin > 1),
            })
            worst_dom = min(worst_dom, dom_margin)
            worst_con = min(worst_con, con_margin)
            worst_exp = min(worst_exp, exp_margin)
    return DominationReport(
        C=float(C), lam=float(lam), T_grid=list(map(float, T_grid)),
        entries=entries,
        worst_domination_margin=float(worst_dom),
        worst_contraction_margin=float(worst_con),
        worst_expansion_margin=float(worst_exp),
        min_principal_angle=float(min_angle),
        domination_ok=bool(worst_dom > 1.0),
        contraction_ok=bool(worst_con > 1.0),
        expansion_ok=bool(worst_exp > 1.0))


def induce_from_tangent_splitting(field, tangent: TangentSplitting,
                                  angle_tol=1e-6):
    """Normal splitting induced by a tangent one, with the flow-speed cocycle.

    Stable part: orthogonal projection of E into the normal space.  Unstable
    part: intersection of the normal space with F (the orthogonal complement
    of the flow direction inside F).  Requires X in F at every node.
    """
    orbit = tangent.orbit
    n = orbit.n_nodes
    stable = []
    unstable = []
    for i in range(n):
        x = orbit.states[i]
        fx = np.asarray(field.func(x), dtype=float)
        e = unit(fx)
        F = tangent.f_basis[i]
        resid = np.linalg.norm(fx - F @ (F.T @ fx)) / np.linalg.norm(fx)
        if resid > angle_tol:
            raise FlowDirectionError(
                f"flow direction leaves F at node {i} (residual {resid:.2e})")
        E = tangent.e_basis[i]
        proj_E = E - np.outer(e, e @ E)
        sv = np.linalg.svd(proj_E, compute_uv=False)
        if sv[-1] < 1e-8:
            raise DegenerateProjectionError(
                f"projection of E collapses at node {i}")
        stable.append(orthonormalize(proj_E))
        # complement of the flow direction inside F
        c = F.T @ e
        c = c / np.linalg.norm(c)
        comp = np.linalg.svd(np.eye(c.size) - np.outer(c, c))[0][:, :c.size - 1]
        unstable.append(orthonormalize(F @ comp))
    split = NormalSplitting(orbit=orbit, stable=np.stack(stable),
                            unstable=np.stack(unstable))
    return split, flow_speed_cocycle()


# ---------------------------------------------------------------------------
# rebalancing sequences


@dataclass
class RebalanceResult:
    c: np.ndarray          # per-map scales, indices i_start .. i_start+n-1
    b: np.ndarray          # cumulative products, indices i_start .. i_start+n
    i_start: int
    sup_b: float
    bounded_ok: bool

    def to_json_dict(self):
        return {"c": self.c.tolist(), "b": self.b.tolist(),
                "i_start": self.i_start, "sup_b": self.sup_b,
                "bounded_ok": self.bounded_ok}


def rebalance_sequence(psi_norms, eta, i_start=0, L=None, T=None) -> RebalanceResult:
    """Per-block scales making the stable part eta-contracting and the
    unstable part eta^-1-expanding simultaneously.

    `psi_norms[j]` is the pair (|psi_T| on the stable part, mininorm of
    psi_T on the unstable part) of the map with source index i_start + j.
    Scales are eta^-1 / m_u for indices >= 0 and eta / n_s for indices < 0;
    cumulative products b start from b_0 = 1.  Raises
    RebalanceInfeasibleError when a scale breaks the complementary
    inequality; when (L, T) metadata is given the scales are checked against
    [eta e^{-LT}, eta^-1 e^{LT}].
    """
    if not (0.0 < eta < 1.0):
        raise DomainError("eta must lie in (0, 1)")
    norms = [(float(a), float(b)) for a, b in psi_norms]
    if any(a <= 0 or b <= 0 for a, b in norms):
        raise DomainError("psi norms must be positive")
    n = len(norms)
    idx = np.arange(i_start, i_start + n)
    if i_start > 0 or i_start + n < 0:
        raise DomainError("the index range must contain 0 (b_0 = 1 anchor)")
    c = np.empty(n)
    for j, i in enumerate(idx):
        ns, mu = norms[j]
        if i >= 0:
            c[j] = (1.0 / eta) / mu
            if c[j] * ns > eta * (1.0 + 1e-12):
                raise RebalanceInfeasibleError(
                    f"c_{i} * |psi_s| = {c[j] * ns:.4f} > eta = {eta}")
        else:
            c[j] = eta / ns
            if c[j] * mu < (1.0 / eta) * (1.0 - 1e-12):
                raise RebalanceInfeasibleError(
                    f"c_{i} * m(psi_u) = {c[j] * mu:.4f} < 1/eta = {1.0 / eta}")
    if L is not None and T is not None:
        lo = eta * np.exp(-effective_lipschitz(L) * T)
        hi = (1.0 / eta) * np.exp(effective_lipschitz(L) * T)
        if np.any(c < lo * (1 - 1e-9)) or np.any(c > hi * (1 + 1e-9)):
            raise RebalanceInfeasibleError(
                "scales leave the [eta e^{-LT}, eta^{-1} e^{LT}] band")
    # b is indexed on nodes i_start .. i_start + n, with b_0 = 1
    b = np.empty(n + 1)
    zero_pos = -i_start
    b[zero_pos] = 1.0
    for j in range(zero_pos, n):
        b[j + 1] = b[j] * c[j]
    for j in range(zero_pos - 1, -1, -1):
        b[j] = b[j + 1] / c[j]
    sup_b = float(np.max(np.abs(b)))
    return RebalanceResult(c=c, b=b, i_start=int(i_start), sup_b=sup_b,
                           bounded_ok=bool(np.isfinite(sup_b)))
