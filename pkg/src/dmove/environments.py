"""Stochastic vector-reward environments.

Two families: a parametric wind-farm wake surrogate (turbines steer their
yaw, trading own power against wake losses downstream) and a synthetic
environment with known per-action mixture-of-Gaussian generators for oracle
testing.

The wake surrogate is explicitly not a physical-fidelity model.  It exists
to exercise the solver on realistically shaped continuous bi-objective
returns: per-turbine power scales with the cube of effective wind speed,
upstream turbines inside a directional cone impose distance-decaying speed
deficits, yaw misalignment costs cos^3 of the yaw angle but deflects the
wake off downstream machines, and turbulence intensity rises with the
realized speed deficit.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .graph import CoordinationGraph, build_graph, enumerate_local_actions


class EnvironmentError_(ValueError):
    """Invalid layout, incomplete generator spec, or a bad joint action."""


DEFAULT_YAW_SET = (-10.0, -5.0, 0.0, 5.0, 10.0)


@dataclass(frozen=True)
class Turbine:
    id: int
    position: tuple[float, float]


@dataclass(frozen=True)
class WindCondition:
    direction_deg: float
    speed: float

    def __post_init__(self):
        if self.speed <= 0:
            raise EnvironmentError_(f"wind speed must be positive, got {self.speed}")

    @property
    def downstream(self) -> np.ndarray:
        """Unit vector pointing where the wind blows (direction is degrees from north)."""
        rad = math.radians(self.direction_deg)
        return np.array([-math.sin(rad), -math.cos(rad)])


@dataclass(frozen=True)
class SurrogateParams:
    """Wake-surrogate coefficients; see the module docstring for semantics."""

    power_coefficient: float = 2800.0  # W per (m/s)^3 per turbine
    wake_strength: float = 0.35       # peak fractional speed deficit at the source
    wake_decay: float = 0.8           # deficit contraction per km downstream
    deflection_gain: float = 0.4      # lateral wake offset per metre downstream per sin(yaw)
    wake_width: float = 150.0         # lateral Gaussian wake half-width, metres
    ambient_ti: float = 0.06
    ti_gain: float = 0.9              # turbulence added per unit realized speed deficit
    noise_std: float = 0.25           # std of Gaussian noise on effective wind speed, m/s


def in_wake_cone(ref_pos, pos, wind: WindCondition, half_angle: float, radius: float) -> bool:
    """Whether `pos` sits inside the downstream cone of a reference position.

    Boundary points (exactly at the half-angle or radius) are outside.
    """
    dvec = np.asarray(pos, dtype=float) - np.asarray(ref_pos, dtype=float)
    dist = float(np.hypot(*dvec))
    if dist == 0.0 or dist >= radius:
        return False
    cos_ang = float(dvec @ wind.downstream) / dist
    ang = math.degrees(math.acos(min(1.0, max(-1.0, cos_ang))))
    return ang < half_angle


def build_dependency_graph(
    turbines,
    wind: WindCondition,
    half_angle: float = 22.5,
    radius: float = 1000.0,
    n_actions: int = len(DEFAULT_YAW_SET),
) -> CoordinationGraph:
    """Coordination graph induced by wake geometry.

    Every turbine contributes one factor scope: itself plus the turbines
    inside its downstream cone.  Identical scopes are deduplicated, so an
    isolated turbine yields a singleton factor.
    """
    turbines = list(turbines)
    if not turbines:
        raise EnvironmentError_("at least one turbine required")
    positions = {t.id: t.position for t in turbines}
    if len(set(positions.values())) != len(turbines):
        raise EnvironmentError_("turbine positions must be distinct")

    scopes: list[tuple[int, ...]] = []
    for ref in turbines:
        scope = {ref.id}
        scope.update(
            t.id
            for t in turbines
            if t.id != ref.id
            and in_wake_cone(ref.position, t.position, wind, half_angle, radius)
        )
        ordered = tuple(sorted(scope))
        if ordered not in scopes:
            scopes.append(ordered)
    return build_graph([n_actions] * len(turbines), scopes)


class WindFarmEnv:
    """Wake-surrogate farm: yaw indices in, per-factor [-turbulence, power] out."""

    reward_dim = 2

    def __init__(
        self,
        turbines,
        wind: WindCondition,
        params: SurrogateParams = SurrogateParams(),
        yaw_set=DEFAULT_YAW_SET,
        half_angle: float = 22.5,
        radius: float = 1000.0,
        seed=0,
    ):
        self.turbines = tuple(turbines)
        self.wind = wind
        self.params = params
        self.yaw_set = tuple(float(y) for y in yaw_set)
        self.half_angle = half_angle
        self.radius = radius
        self.graph = build_dependency_graph(
            self.turbines, wind, half_angle, radius, n_actions=len(self.yaw_set)
        )
        self._rng = np.random.default_rng(seed)
        # upstream influencers per turbine: j -> i edges where i sits in j's cone
        self._upstream = {
            t.id: [
                s.id
                for s in self.turbines
                if s.id != t.id
                and in_wake_cone(s.position, t.position, wind, half_angle, radius)
            ]
            for t in self.turbines
        }

    def rng_state(self) -> dict:
        return self._rng.bit_generator.state

    def set_rng_state(self, state: dict) -> None:
        self._rng.bit_generator.state = state

    def _per_turbine(self, yaws_deg, noise):
        p = self.params
        u = self.wind.downstream
        perp = np.array([-u[1], u[0]])
        pos = {t.id: np.asarray(t.position, dtype=float) for t in self.turbines}
        power = {}
        ti = {}
        for t in self.turbines:
            deficits = []
            for j in self._upstream[t.id]:
                dvec = pos[t.id] - pos[j]
                down = float(dvec @ u)
                lat = float(dvec @ perp)
                amp = p.wake_strength / (1.0 + p.wake_decay * down / 1000.0) ** 2
                deflect = p.deflection_gain * math.sin(math.radians(yaws_deg[j])) * down
                overlap = math.exp(-((lat - deflect) ** 2) / (2.0 * p.wake_width**2))
                deficits.append(amp * overlap)
            total_deficit = min(math.sqrt(sum(d * d for d in deficits)), 0.95)
            u_eff = self.wind.speed * (1.0 - total_deficit)
            u_real = max(u_eff + noise[t.id], 0.0)
            cos_yaw = math.cos(math.radians(yaws_deg[t.id]))
            power[t.id] = p.power_coefficient * u_real**3 * cos_yaw**3
            ti[t.id] = min(
                max(p.ambient_ti + p.ti_gain * max(0.0, 1.0 - u_real / self.wind.speed), 0.0),
                1.0,
            )
        return power, ti

    def execute(self, joint_action) -> list[np.ndarray]:
        """Run one farm step; returns [-mean turbulence, summed power] per factor scope.

        Factor order matches `self.graph.scopes`.  With noise_std == 0 this
        is a pure function of the joint action.
        """
        ja = tuple(int(a) for a in joint_action)
        if len(ja) != len(self.turbines):
            raise EnvironmentError_(f"joint action must assign all {len(self.turbines)} turbines")
        for a in ja:
            if not 0 <= a < len(self.yaw_set):
                raise EnvironmentError_(f"yaw index {a} out of range [0, {len(self.yaw_set)})")

        yaws = {t.id: self.yaw_set[ja[k]] for k, t in enumerate(self.turbines)}
        if self.params.noise_std > 0:
            eps = self._rng.normal(0.0, self.params.noise_std, size=len(self.turbines))
            noise = {t.id: float(eps[k]) for k, t in enumerate(self.turbines)}
        else:
            noise = {t.id: 0.0 for t in self.turbines}

        power, ti = self._per_turbine(yaws, noise)
        rewards = []
        for scope in self.graph.scopes:
            members = scope.agents
            group_power = sum(power[i] for i in members)
            group_ti = sum(ti[i] for i in members) / len(members)
            rewards.append(np.array([-group_ti, group_power]))
        return rewards


def grid_layout(n_turbines: int, spacing: tuple[float, float]) -> list[Turbine]:
    """Row-major rectangular layout, roughly square, spaced (dx, dy) metres."""
    if n_turbines < 1:
        raise EnvironmentError_("need at least one turbine")
    dx, dy = spacing
    if dx <= 0 or dy <= 0:
        raise EnvironmentError_(f"spacing must be positive, got {spacing}")
    cols = math.ceil(math.sqrt(n_turbines))
    out = []
    for k in range(n_turbines):
        row, col = divmod(k, cols)
        out.append(Turbine(k, (col * dx, row * dy)))
    return out


# -- synthetic environments with known generators ---------------------------


@dataclass(frozen=True)
class GaussianComponent:
    weight: float
    mean: tuple[float, ...]
    std: tuple[float, ...]


class SyntheticEnv:
    """Per-(factor, local action) mixture-of-Gaussian reward generators.

    Ground-truth means and sample streams are queryable, so learned models
    and solver outputs can be checked against exact answers.
    """

    def __init__(self, graph: CoordinationGraph, generators: dict, seed=0):
        self.graph = graph
        self.generators = generators
        self._rng = np.random.default_rng(seed)
        dims = set()
        for scope in graph.scopes:
            for la in enumerate_local_actions(graph, scope.agents):
                key = (scope.factor_id, la)
                if key not in generators:
                    raise EnvironmentError_(f"no generator for factor {scope.factor_id}, action {la}")
                dims.update(len(c.mean) for c in generators[key])
        if len(dims) != 1:
            raise EnvironmentError_(f"inconsistent generator dimensions: {sorted(dims)}")
        self.reward_dim = dims.pop()

    def rng_state(self) -> dict:
        return self._rng.bit_generator.state

    def set_rng_state(self, state: dict) -> None:
        self._rng.bit_generator.state = state

    def _draw(self, components, rng) -> np.ndarray:
        weights = np.array([c.weight for c in components], dtype=float)
        weights = weights / weights.sum()
        k = int(rng.choice(len(components), p=weights)) if len(components) > 1 else 0
        comp = components[k]
        return rng.normal(np.asarray(comp.mean, dtype=float), np.asarray(comp.std, dtype=float))

    def execute(self, joint_action) -> list[np.ndarray]:
        ja = tuple(int(a) for a in joint_action)
        rewards = []
        for scope in self.graph.scopes:
            la = tuple(ja[a] for a in scope.agents)
            rewards.append(self._draw(self.generators[(scope.factor_id, la)], self._rng))
        return rewards

    def ground_truth_mean(self, factor_id: int, local_action) -> np.ndarray:
        comps = self.generators[(factor_id, tuple(local_action))]
        weights = np.array([c.weight for c in comps], dtype=float)
        weights = weights / weights.sum()
        means = np.array([c.mean for c in comps], dtype=float)
        return weights @ means

    def ground_truth_samples(self, factor_id: int, local_action, n: int, seed=None) -> np.ndarray:
        rng = np.random.default_rng(seed)
        comps = self.generators[(factor_id, tuple(local_action))]
        return np.stack([self._draw(comps, rng) for _ in range(n)])


def make_synthetic(graph: CoordinationGraph, spec: dict, seed=0) -> SyntheticEnv:
    """Build a synthetic environment; `spec` maps (factor_id, local_action) to components."""
    return SyntheticEnv(graph, spec, seed=seed)


def random_synthetic_spec(
    graph: CoordinationGraph,
    seed=0,
    dim: int = 2,
    mean_range=(0.0, 5.0),
    std_range=(0.1, 0.5),
    n_components: int = 1,
) -> dict:
    """Seeded random Gaussian generators for every factor/action pair."""
    rng = np.random.default_rng(seed)
    spec = {}
    for scope in graph.scopes:
        for la in enumerate_local_actions(graph, scope.agents):
            comps = []
            for _ in range(n_components):
                mean = tuple(rng.uniform(*mean_range, size=dim))
                std = tuple(rng.uniform(*std_range, size=dim))
                comps.append(GaussianComponent(1.0 / n_components, mean, std))
            spec[(scope.factor_id, la)] = comps
    return spec


def provider_from_synthetic(env: SyntheticEnv, m: int, seed=0, quantize: bool = False):
    """Freeze one m-sample distribution per factor/action from the generators.

    With `quantize`, samples are rounded to integers so that grid-lattice
    dominance checks are exact; both the solver and the oracle must consume
    the same frozen provider.
    """
    from .distributions import ReturnDistribution

    tables = {}
    for scope in env.graph.scopes:
        for la in enumerate_local_actions(env.graph, scope.agents):
            rng = np.random.default_rng(
                np.random.SeedSequence([int(seed), 7, scope.factor_id, *la])
            )
            comps = env.generators[(scope.factor_id, la)]
            samples = np.stack([env._draw(comps, rng) for _ in range(m)])
            if quantize:
                samples = np.rint(samples)
            tables[(scope.factor_id, la)] = ReturnDistribution(samples)
    return lambda fid, la: tables[(fid, tuple(la))]


# -- layout and spec files ---------------------------------------------------


def write_layout(path, turbines, wind: WindCondition, params: SurrogateParams,
                 yaw_set=DEFAULT_YAW_SET, half_angle=22.5, radius=1000.0, seed=0) -> None:
    doc = {
        "positions": [list(t.position) for t in turbines],
        "wind": {"direction": wind.direction_deg, "speed": wind.speed},
        "surrogate": asdict(params),
        "yaw_set": list(yaw_set),
        "half_angle": half_angle,
        "radius": radius,
        "seed": seed,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_layout(path) -> WindFarmEnv:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    turbines = [Turbine(i, tuple(p)) for i, p in enumerate(doc["positions"])]
    wind = WindCondition(doc["wind"]["direction"], doc["wind"]["speed"])
    params = SurrogateParams(**doc["surrogate"])
    return WindFarmEnv(
        turbines,
        wind,
        params,
        yaw_set=tuple(doc["yaw_set"]),
        half_angle=doc["half_angle"],
        radius=doc["radius"],
        seed=doc["seed"],
    )


def write_synthetic_spec(path, graph: CoordinationGraph, spec: dict, seed=0) -> None:
    generators = {}
    for (fid, la), comps in spec.items():
        key = f"{fid}|{','.join(str(a) for a in la)}"
        generators[key] = [
            {"weight": c.weight, "mean": list(c.mean), "std": list(c.std)} for c in comps
        ]
    doc = {
        "action_counts": list(graph.action_counts),
        "scopes": [list(s.agents) for s in graph.scopes],
        "generators": generators,
        "seed": seed,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_synthetic_spec(path) -> SyntheticEnv:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    graph = build_graph(doc["action_counts"], [set(s) for s in doc["scopes"]])
    spec = {}
    for key, comps in doc["generators"].items():
        fid_str, la_str = key.split("|")
        la = tuple(int(a) for a in la_str.split(",")) if la_str else ()
        spec[(int(fid_str), la)] = [
            GaussianComponent(c["weight"], tuple(c["mean"]), tuple(c["std"])) for c in comps
        ]
    return make_synthetic(graph, spec, seed=doc["seed"])
