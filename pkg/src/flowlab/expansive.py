"""Empirical expansiveness scanners and the admissible-epsilon estimate.

Scans search candidate pairs (x, y) and time changes theta for violations:
pairs that shadow at level delta (in the mode's metric) yet fail the mode's
conclusion that the shadowing orbit stays on a short orbit arc.  Scans are
negative-evidence tools: a clean scan reports "no violation found" with its
budget and truncated horizon, never a certificate.

Modes: 'rescaled' (distance divided by the local flow speed, the conclusion
must hold at every grid time), 'bowen_walters' (plain distance, conclusion
at time 0), 'komuro' (plain distance, conclusion at some grid time).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (DomainError, EscapeError, FlowLabError, HorizonError,
                     NotInBoxError, SingularityError, StiffnessError)
from .fields import (OrbitSegment, estimate_lipschitz, field_from_json,
                     flow_points, speed)
from .flowbox import chart_radius, flowbox_invert, make_chart
from .poincare import section_radius
from .reparam import (Reparametrization, admissible_delta,
                      estimate_speed_ratio_constant, fit_reparametrization)
from .util import read_json, write_json

MODES = ("rescaled", "komuro", "bowen_walters")


@dataclass(frozen=True)
class ScanConfig:
    field: object
    base_points: tuple
    horizon: tuple                  # (T_minus, T_plus)
    epsilons: tuple
    deltas: tuple
    lattice: tuple = (9, 17)        # (time nodes, theta offsets)
    budget: int = 200
    seed: int = 0
    grid_n: int = 64
    arc_tol: float = 1e-6
    tol: float = 1e-9
    lipschitz: float = None

    def validate(self):
        if not self.epsilons or not self.deltas:
            raise DomainError("epsilon and delta grids must be nonempty")
        if self.budget <= 0:
            raise DomainError("budget must be positive")
        if self.horizon[0] >= self.horizon[1]:
            raise DomainError("horizon must be a nonempty interval")
        if self.lipschitz is not None:
            r0 = chart_radius(self.lipschitz)
            if max(self.epsilons) > r0:
                raise DomainError(
                    f"epsilon grid exceeds the chart radius r0={r0:.3e}")
        return True


@dataclass
class Witness:
    """A replayable violation record."""

    mode: str
    epsilon: float
    delta: float
    x: list
    y: list
    theta_knots: list
    horizon: tuple
    grid_n: int
    arc_tol: float
    lipschitz: float
    tol: float
    measured_sup: float
    failing_times: list
    field_spec: dict

    def to_json_dict(self):
        return {
            "mode": self.mode, "epsilon": self.epsilon, "delta": self.delta,
            "x": self.x, "y": self.y, "theta_knots": self.theta_knots,
            "horizon": list(self.horizon), "grid_n": self.grid_n,
            "arc_tol": self.arc_tol, "lipschitz": self.lipschitz,
            "tol": self.tol, "measured_sup": self.measured_sup,
            "failing_times": self.failing_times, "field": self.field_spec,
        }


@dataclass
class ScanReport:
    mode: str
    verdicts: dict                  # (eps, delta) -> "no-violation-found" | "violation"
    witnesses: list
    budget: int
    budget_used: int
    horizon: tuple
    n_pairs: int

    def verdict(self, eps, delta):
        return self.verdicts[(float(eps), float(delta))]

    def to_json_dict(self):
        return {
            "mode": self.mode,
            "verdicts": [{"epsilon": k[0], "delta": k[1], "verdict": v}
                         for k, v in sorted(self.verdicts.items())],
            "witnesses": [w.to_json_dict() for w in self.witnesses],
            "budget": self.budget, "budget_used": self.budget_used,
            "horizon": list(self.horizon), "n_pairs": self.n_pairs,
        }


def _orbit_displacement(field, chart, point, eps, arc_tol):
    """Is the point on the orbit arc phi_[-eps, eps] of the chart base?"""
    try:
        v, s = flowbox_invert(chart, point)
    except NotInBoxError:
        return False
    on_orbit = np.linalg.norm(v) <= arc_tol * chart.speed
    return bool(on_orbit and abs(s) <= eps * (1.0 + 1e-9))


@dataclass
class PairEvaluation:
    sup_by_theta: list              # (theta, sup) candidates, best first
    base_states: np.ndarray
    grid: np.ndarray


def _evaluate_pair(field, x, y, config, mode, thetas, cache=None):
    """Measured sup of each candidate theta in the mode metric (inf = broken)."""
    rescale = mode == "rescaled"
    grid = np.linspace(config.horizon[0], config.horizon[1], config.grid_n)
    key = ("grid", tuple(np.asarray(x, float)))
    try:
        if cache is not None and key in cache:
            xs = cache[key]
        else:
            xs = flow_points(field, x, grid, config.tol)
            if cache is not None:
                cache[key] = xs
    except (EscapeError, StiffnessError):
        return None
    speeds = np.array([speed(field, s) for s in xs])
    if np.any(speeds <= field.singular_speed()):
        if rescale:
            raise SingularityError("base orbit hits a singular sample")
        speeds = np.maximum(speeds, field.singular_speed())
    out = []
    for theta in thetas:
        try:
            ys = flow_points(field, y, theta(grid), config.tol)
        except (EscapeError, StiffnessError):
            out.append((theta, np.inf))
            continue
        dist = np.linalg.norm(xs - ys, axis=1)
        sup = float(np.max(dist / speeds)) if rescale else float(np.max(dist))
        out.append((theta, sup))
    out.sort(key=lambda p: p[1])
    return PairEvaluation(sup_by_theta=out, base_states=xs, grid=grid)


def _conclusion_failures(field, ev: PairEvaluation, theta, y, eps, L,
                         arc_tol, tol, mode):
    """Grid times where the orbit-arc conclusion fails for this theta."""
    try:
        ys = flow_points(field, y, theta(ev.grid), tol)
    except (EscapeError, StiffnessError):
        return [float(t) for t in ev.grid]
    failures = []
    for t, bx, yy in zip(ev.grid, ev.base_states, ys):
        try:
            chart = make_chart(field, bx, L)
        except SingularityError:
            failures.append(float(t))
            continue
        if not _orbit_displacement(field, chart, yy, eps, arc_tol):
            failures.append(float(t))
    return failures


def _candidate_thetas(field, x, y, config, mode, cache=None):
    """Fitted theta (sheared lattice around the identity) plus the identity."""
    m, n_off = config.lattice
    t_nodes = np.linspace(config.horizon[0], config.horizon[1], max(2, int(m)))
    width = max(config.deltas) * 3.0 + 1e-12
    offsets = np.linspace(-width, width, max(3, int(n_off)))
    thetas = [Reparametrization.identity()]
    key = ("fit", tuple(np.asarray(x, float)))
    try:
        if cache is not None and key in cache:
            xs = cache[key]
        else:
            xs = flow_points(field, x, t_nodes, config.tol)
            if cache is not None:
                cache[key] = xs
        fitted, _ = fit_reparametrization(
            field, x, y, t_nodes=t_nodes,
            theta_nodes=t_nodes[:, None] + offsets[None, :],
            rescale=(mode == "rescaled"), tol=config.tol, x_states=xs)
        thetas.insert(0, fitted)
    except FlowLabError:
        pass
    return thetas


def _candidate_pairs(config):
    """Deterministic candidate stream: perturbations, orbit pairs, returns."""
    field = config.field
    rng = np.random.default_rng(config.seed)
    bases = [np.asarray(p, dtype=float) for p in config.base_points]
    pairs = []
    # (i) normal perturbations at rescaled sizes delta/2 and delta
    for bp in bases:
        sx = speed(field, bp)
        if sx <= field.singular_speed():
            continue
        e = np.asarray(field.func(bp), dtype=float) / sx
        u = rng.normal(size=field.dimension)
        u -= np.dot(u, e) * e
        nu = np.linalg.norm(u)
        if nu < 1e-12:
            continue
        u /= nu
        for delta in config.deltas:
            for size in (0.5 * delta, delta):
                pairs.append((bp, bp + size * sx * u))
    # (ii) pairs of distinct sampled orbits
    for i in range(len(bases)):
        for j in range(i + 1, len(bases)):
            pairs.append((bases[i], bases[j]))
    # (iii) recurrence pairs: closest return of the base orbit to itself
    t_lo = max(1.0, 0.05 * (config.horizon[1] - config.horizon[0]))
    for bp in bases:
        try:
            ts = np.linspace(t_lo, config.horizon[1] - config.horizon[0], 48)
            states = flow_points(field, bp, ts, config.tol)
        except (EscapeError, StiffnessError):
            continue
        dists = np.linalg.norm(states - bp, axis=1)
        best = int(np.argmin(dists))
        pairs.append((bp, states[best]))
    return pairs


def expansiveness_scan(config: ScanConfig, mode: str) -> ScanReport:
    """Budgeted search for shadowing pairs breaking the mode's conclusion."""
    if mode not in MODES:
        raise DomainError(f"unknown mode {mode!r}; choose from {MODES}")
    config.validate()
    field = config.field
    L = config.lipschitz
    if L is None:
        L = estimate_lipschitz(field, field.domain, 512, seed=config.seed)
    r0 = chart_radius(L)
    if max(config.epsilons) > r0:
        raise DomainError(
            f"epsilon grid must stay within the chart radius r0={r0:.3e}")
    verdicts = {(float(e), float(d)): "no-violation-found"
                for e in config.epsilons for d in config.deltas}
    witnesses = []
    pairs = _candidate_pairs(config)
    used = 0
    cache = {}
    for x, y in pairs:
        if used >= config.budget:
            break
        used += 1
        thetas = _candidate_thetas(field, x, y, config, mode, cache)
        ev = _evaluate_pair(field, x, y, config, mode, thetas, cache)
        if ev is None:
            continue
        for eps in config.epsilons:
            for delta in config.deltas:
                key = (float(eps), float(delta))
                if verdicts[key] == "violation":
                    continue
                for theta, sup in ev.sup_by_theta:
                    if sup > delta:
                        break  # candidates are sorted; none shadows
                    fails = _conclusion_failures(field, ev, theta, y, eps, L,
                                                 config.arc_tol, config.tol,
                                                 mode)
                    if mode == "komuro":
                        violated = len(fails) == len(ev.grid)
                    elif mode == "bowen_walters":
                        t0_idx = int(np.argmin(np.abs(ev.grid)))
                        violated = float(ev.grid[t0_idx]) in fails
                    else:
                        violated = len(fails) > 0
                    if violated:
                        verdicts[key] = "violation"
                        witnesses.append(Witness(
                            mode=mode, epsilon=float(eps), delta=float(delta),
                            x=np.asarray(x).tolist(), y=np.asarray(y).tolist(),
                            theta_knots=theta.knots.tolist(),
                            horizon=(float(config.horizon[0]),
                                     float(config.horizon[1])),
                            grid_n=config.grid_n, arc_tol=config.arc_tol,
                            lipschitz=float(L), tol=config.tol,
                            measured_sup=float(sup),
                            failing_times=fails,
                            field_spec=field.to_json_dict()))
                        break
    return ScanReport(mode=mode, verdicts=verdicts, witnesses=witnesses,
                      budget=config.budget, budget_used=used,
                      horizon=(float(config.horizon[0]), float(config.horizon[1])),
                      n_pairs=len(pairs))


# ---------------------------------------------------------------------------
# witness persistence and replay


def save_witness(witness: Witness, path):
    write_json(witness.to_json_dict(), path)


@dataclass
class ReplayResult:
    reproduced: bool
    measured_sup: float
    failing_times: list


def replay_witness(source) -> ReplayResult:
    """Re-verify a stored violation from its serialized data alone."""
    d = source if isinstance(source, dict) else read_json(source)
    field = field_from_json(d["field"])
    theta = Reparametrization(np.asarray(d["theta_knots"], dtype=float))
    x = np.asarray(d["x"], dtype=float)
    y = np.asarray(d["y"], dtype=float)
    grid = np.linspace(d["horizon"][0], d["horizon"][1], d["grid_n"])
    xs = flow_points(field, x, grid, d["tol"])
    ys = flow_points(field, y, theta(grid), d["tol"])
    speeds = np.array([speed(field, s) for s in xs])
    dist = np.linalg.norm(xs - ys, axis=1)
    sup = float(np.max(dist / speeds)) if d["mode"] == "rescaled" \
        else float(np.max(dist))
    fails = []
    for t, bx, yy in zip(grid, xs, ys):
        try:
            chart = make_chart(field, bx, d["lipschitz"])
        except SingularityError:
            fails.append(float(t))
            continue
        if not _orbit_displacement(field, chart, yy, d["epsilon"],
                                   d["arc_tol"]):
            fails.append(float(t))
    if d["mode"] == "komuro":
        violated = len(fails) == grid.size
    elif d["mode"] == "bowen_walters":
        t0_idx = int(np.argmin(np.abs(grid)))
        violated = float(grid[t0_idx]) in fails
    else:
        violated = len(fails) > 0
    reproduced = bool(violated and sup <= d["delta"] * (1.0 + 1e-9))
    return ReplayResult(reproduced=reproduced, measured_sup=sup,
                        failing_times=fails)


# ---------------------------------------------------------------------------
# admissible epsilon for the shadowing-implies-arc statement


def epsilon0_estimate(field, orbit: OrbitSegment, T, L=None, c=None, seed=0):
    """Admissible epsilon: min(r1(T)/3, 3 delta(T)) on the orbit's region.

    delta(T) collects the crossing-sequence requirements: below r0/12, below
    r1(T)/3, and below the drift level delta(eps_T) with eps_T = r0 / (2 T).
    Monotone non-increasing in the effective Lipschitz constant.
    """
    from .fields import orbit_bounding_region
    region = orbit_bounding_region(orbit)
    if L is None:
        L = estimate_lipschitz(field, region, 256, seed=seed)
    if c is None:
        c = estimate_speed_ratio_constant(field, region, seed=seed)
    r0 = chart_radius(L)
    if T <= r0:
        raise HorizonError(f"T={T} must exceed the chart radius r0={r0:.3e}")
    r1 = section_radius(T, L)
    eps_T = r0 / (2.0 * T)
    delta_T = min(r0 / 12.0, r1 / 3.0, admissible_delta(eps_T, L, c))
    return float(min(r1 / 3.0, 3.0 * delta_T))


# ---------------------------------------------------------------------------
# nonsingular equivalence probe


@dataclass
class ProbeReport:
    epsilons: list
    thresholds: dict                # mode -> {eps: largest clean delta or None}
    speed_ratio: float
    consistent: bool
    reports: dict

    def to_json_dict(self):
        return {
            "epsilons": self.epsilons,
            "thresholds": {m: {str(e): v for e, v in d.items()}
                           for m, d in self.thresholds.items()},
            "speed_ratio": self.speed_ratio,
            "consistent": self.consistent,
            "reports": {m: r.to_json_dict() for m, r in self.reports.items()},
        }


def nonsingular_equivalence_probe(field, config: ScanConfig) -> ProbeReport:
    """Run all three scan modes on the same samples and compare thresholds.

    For each epsilon the largest grid delta with no violation is reported
    per mode; consistency means each pair of thresholds differs by at most
    the speed-ratio factor of the scanned region (with one-grid-step slack).
    Requires a singularity-free sample region.
    """
    speeds = [speed(field, p) for p in config.base_points]
    if min(speeds) <= 1e3 * field.singular_speed():
        raise DomainError("scan region contains (near-)singular samples")
    ratio = max(speeds) / min(speeds)
    reports = {m: expansiveness_scan(config, m) for m in MODES}
    deltas = sorted(float(d) for d in config.deltas)
    grid_slack = max((deltas[i + 1] / deltas[i]
                      for i in range(len(deltas) - 1)), default=1.0)
    thresholds = {m: {} for m in MODES}
    for m in MODES:
        for eps in config.epsilons:
            clean = [d for d in deltas
                     if reports[m].verdict(eps, d) == "no-violation-found"]
            # largest clean delta below the first violated level
            violated = [d for d in deltas
                        if reports[m].verdict(eps, d) == "violation"]
            lim = min(violated) if violated else np.inf
            clean = [d for d in clean if d < lim]
            thresholds[m][float(eps)] = max(clean) if clean else None
    consistent = True
    factor = ratio * grid_slack * (1.0 + 1e-9)
    for eps in config.epsilons:
        vals = [thresholds[m][float(eps)] for m in MODES]
        if any(v is None for v in vals):
            if not all(v is None for v in vals):
                consistent = False
            continue
        for a in vals:
            for bb in vals:
                if a > bb * factor:
                    consistent = False
    return ProbeReport(epsilons=[float(e) for e in config.epsilons],
                       thresholds=thresholds, speed_ratio=float(ratio),
                       consistent=bool(consistent), reports=reports)
