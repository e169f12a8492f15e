"""Deterministic desk-scale lane-keeping simulator conditioned on EnvConfig.

The vehicle tracks the centerline of a piecewise-constant-curvature route in
Frenet coordinates (u along the centerline, d lateral, psi heading error).
Environment factors never change the dynamics; they only transform the
observation (ray gain, noise level, bias patterns, distractor channels), so
that policy degradation under factor shifts is attributable to observation
shift rather than task infeasibility.

All factor-effect constants are invented for this artifact and centralized
in SimParams; they are calibrated once so single-factor difficulty has a
stable qualitative ordering, and are not tuned toward any external number.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .factor_space import EnvConfig
from .seeding import rng_from

EVENT_KINDS = ("collision", "out_of_lane", "off_road", "stability")


@dataclass(frozen=True)
class SimParams:
    """Tunable simulator constants (single source of truth)."""

    dt: float = 1.0 / 30.0
    horizon: int = 200
    lane_half_width: float = 2.0
    v_max: float = 15.0
    a_max: float = 4.0
    steer_limit: float = 0.2

    # routes
    route_length: float = 140.0
    segment_length: float = 20.0
    kappa_std_rural: float = 0.012  # urban uses 2x
    kappa_cap: float = 0.03
    obstacle_mean_rural: float = 0.5  # urban uses 2x
    obstacle_u_min: float = 30.0
    obstacle_u_max: float = 90.0
    obstacle_d_max: float = 0.6
    obstacle_min_spacing: float = 60.0  # keeps avoidance windows disjoint
    obstacle_edge_margin: float = 8.0  # keep clear of curvature jumps

    # observation geometry
    ray_count: int = 16
    ray_spacing: float = 2.0
    obstacle_sense_range: float = 50.0  # covers the full avoidance window

    # factor effects on the observation
    base_sigma: float = 0.02  # sensor floor present in every configuration
    night_gain: float = 0.35
    night_sigma: float = 0.15
    rain_sigma: float = 0.05
    snow_sigma: float = 0.12
    snow_gain: float = 0.6
    season_amplitude: float = 0.1
    clutter_gain: float = 0.6
    clutter_sigma_urban: float = 0.05
    clutter_sigma_rural: float = 0.01
    animal_width: float = 0.35
    animal_wobble: float = 0.5
    animal_wobble_hz: float = 1.5

    # expert controller
    k_d: float = 0.05
    k_psi: float = 0.5
    lookahead: float = 8.0
    v_init: float = 10.0  # flying start at the cruise reference
    v_ref: float = 10.0
    v_ref_obstacle: float = 4.0
    obstacle_slow_dist: float = 15.0
    dodge_offset: float = 1.2
    k_v: float = 0.5

    # collision box around an obstacle (longitudinal, lateral)
    collision_long: float = 2.0
    collision_lat: float = 1.0


DEFAULTS = SimParams()


class Obstacle(NamedTuple):
    u: float
    d: float
    kind: str  # placeholder; re-skinned by the episode's agent level


@dataclass(frozen=True)
class Route:
    """Piecewise-constant-curvature centerline with scheduled obstacles."""

    scene: str
    length: float
    segment_length: float
    lane_half_width: float
    kappas: np.ndarray  # curvature per segment
    obstacles: tuple[Obstacle, ...]
    # antiderivatives of kappa at segment starts, for fast lookahead geometry
    _f_nodes: np.ndarray = field(repr=False, default=None)
    _g_nodes: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self._f_nodes is None:
            n = len(self.kappas)
            h = self.segment_length
            f = np.zeros(n + 1)
            g = np.zeros(n + 1)
            for j in range(n):
                f[j + 1] = f[j] + self.kappas[j] * h
                g[j + 1] = g[j] + f[j] * h + 0.5 * self.kappas[j] * h * h
            object.__setattr__(self, "_f_nodes", f)
            object.__setattr__(self, "_g_nodes", g)

    def _segment(self, u: np.ndarray) -> np.ndarray:
        idx = (u / self.segment_length).astype(int)
        return np.minimum(np.maximum(idx, 0), len(self.kappas) - 1)

    def _segment_scalar(self, u: float) -> int:
        j = int(u // self.segment_length)
        n = len(self.kappas) - 1
        return 0 if j < 0 else (n if j > n else j)

    def kappa(self, u: float) -> float:
        return float(self.kappas[self._segment_scalar(u)])

    def heading_integral(self, u: float) -> float:
        """F(u) = integral of kappa from 0 to u."""
        j = self._segment_scalar(u)
        rem = u - j * self.segment_length
        return self._f_nodes[j] + self.kappas[j] * rem

    def lateral_integral(self, u: np.ndarray) -> np.ndarray:
        """G(u) = double integral of kappa from 0 to u."""
        j = self._segment(u)
        rem = u - j * self.segment_length
        return self._g_nodes[j] + self._f_nodes[j] * rem + 0.5 * self.kappas[j] * rem**2

    def centerline_offset(self, u: float, x: np.ndarray) -> np.ndarray:
        """Lateral position of the centerline x meters ahead, in the frame
        tangent to the centerline at u (small-angle geometry)."""
        base = self.lateral_integral(np.asarray([u]))[0]
        return (
            self.lateral_integral(u + np.asarray(x, dtype=float))
            - base
            - x * self.heading_integral(u)
        )


def generate_route(seed: int, scene: str, params: SimParams = DEFAULTS) -> Route:
    """Deterministic route for (seed, scene).

    Urban routes double both the curvature std and the expected obstacle
    count relative to rural.  Obstacles avoid segment boundaries so the
    expert never has to dodge through a curvature jump.
    """
    rng = rng_from(seed)
    n_seg = math.ceil(params.route_length / params.segment_length)
    std = params.kappa_std_rural * (2.0 if scene == "urban" else 1.0)
    kappas = np.clip(rng.normal(0.0, std, n_seg), -params.kappa_cap, params.kappa_cap)
    kappas[0] = 0.0  # clean start

    mean = params.obstacle_mean_rural * (2.0 if scene == "urban" else 1.0)
    count = int(rng.poisson(mean))
    obstacles: list[Obstacle] = []
    attempts = 0
    while len(obstacles) < count and attempts < 50:
        attempts += 1
        u_obs = float(rng.uniform(params.obstacle_u_min, params.obstacle_u_max))
        offset = u_obs % params.segment_length
        if (
            offset < params.obstacle_edge_margin
            or offset > params.segment_length - params.obstacle_edge_margin
        ):
            continue
        if any(abs(u_obs - o.u) < params.obstacle_min_spacing for o in obstacles):
            continue
        d_obs = float(rng.uniform(-params.obstacle_d_max, params.obstacle_d_max))
        obstacles.append(Obstacle(u_obs, d_obs, "car"))
    obstacles.sort(key=lambda o: o.u)
    # Flatten the curvature jump entering each obstacle's segment: the
    # avoidance pass needs a locally constant-curvature zone, or the
    # lookahead feedforward transient erodes the dodge margin.
    for o in obstacles:
        j = int(o.u // params.segment_length)
        if j >= 1:
            kappas[j] = kappas[j - 1]

    return Route(
        scene=scene,
        length=float(params.route_length),
        segment_length=params.segment_length,
        lane_half_width=params.lane_half_width,
        kappas=kappas,
        obstacles=tuple(obstacles),
    )


@dataclass(frozen=True)
class Controls:
    steer_curvature: float  # 1/m, |.| <= steer_limit
    throttle: float  # dimensionless, [-1, 1]


@dataclass(frozen=True)
class EpisodeState:
    u: float
    d: float
    psi: float
    v: float
    step_index: int
    rng: np.random.Generator  # evolves only via observe(); shared across replace()
    terminated: bool = False


def init_state(seed: int, params: SimParams = DEFAULTS) -> EpisodeState:
    return EpisodeState(
        u=0.0, d=0.0, psi=0.0, v=params.v_init, step_index=0, rng=rng_from(seed)
    )


def step(
    state: EpisodeState,
    route: Route,
    controls: Controls,
    params: SimParams = DEFAULTS,
) -> tuple[EpisodeState, tuple[str, ...]]:
    """Advance one control period; returns the new state and emitted events.

    Update order is v, psi, d, u (each uses the freshly updated values).
    Every emitted event kind is terminal for the episode protocol.
    """
    if state.terminated:
        raise ValueError("cannot step a terminated episode state")
    if abs(controls.steer_curvature) > params.steer_limit + 1e-12:
        raise ValueError(f"steer_curvature {controls.steer_curvature} out of bounds")
    if abs(controls.throttle) > 1.0 + 1e-12:
        raise ValueError(f"throttle {controls.throttle} out of bounds")

    dt = params.dt
    v = min(max(state.v + controls.throttle * params.a_max * dt, 0.0), params.v_max)
    psi = state.psi + v * (controls.steer_curvature - route.kappa(state.u)) * dt
    d = state.d + v * math.sin(psi) * dt
    u = state.u + v * math.cos(psi) * dt

    events: list[str] = []
    for obs in route.obstacles:
        if abs(u - obs.u) < params.collision_long and abs(d - obs.d) < params.collision_lat:
            events.append("collision")
            break
    if abs(d) > 2.0 * route.lane_half_width:
        events.extend(("off_road", "out_of_lane"))
    elif abs(d) > route.lane_half_width:
        events.append("out_of_lane")
    if abs(psi) > math.pi / 2.0:
        events.append("stability")

    new_state = replace(
        state,
        u=u,
        d=d,
        psi=psi,
        v=v,
        step_index=state.step_index + 1,
        terminated=bool(events),
    )
    return new_state, tuple(events)


# Orthogonal 16-dim bias patterns, one per season (rows of a Hadamard matrix).
_SEASON_ROW = {"summer": 1, "winter": 2, "spring": 4, "fall": 8}
_PATTERN_CACHE: dict[tuple, np.ndarray] = {}
_XS_CACHE: dict[tuple, np.ndarray] = {}


def _season_pattern(season: str, params: SimParams) -> np.ndarray:
    key = (season, params.ray_count, params.season_amplitude)
    cached = _PATTERN_CACHE.get(key)
    if cached is None:
        i = np.arange(params.ray_count)
        parity = np.bitwise_count(i & _SEASON_ROW[season]).astype(int) & 1
        cached = params.season_amplitude * (1.0 - 2.0 * parity)
        _PATTERN_CACHE[key] = cached
    return cached


def _ray_offsets(params: SimParams) -> np.ndarray:
    key = (params.ray_spacing, params.ray_count)
    cached = _XS_CACHE.get(key)
    if cached is None:
        cached = params.ray_spacing * np.arange(params.ray_count, dtype=float)
        _XS_CACHE[key] = cached
    return cached


class Observation:
    """Feature-vector observation: 16 rays + 4 obstacle + 8 clutter + speed.

    Backed by a single 29-dim array; the named channels are views into it.
    """

    DIM = 29
    __slots__ = ("data",)

    def __init__(self, data: np.ndarray):
        self.data = data

    @property
    def rays(self) -> np.ndarray:
        return self.data[:16]

    @property
    def obstacle_channel(self) -> np.ndarray:
        return self.data[16:20]

    @property
    def clutter_channel(self) -> np.ndarray:
        return self.data[20:28]

    @property
    def speed_norm(self) -> float:
        return float(self.data[28])

    def vector(self) -> np.ndarray:
        return self.data

    @classmethod
    def zeros(cls) -> "Observation":
        return cls(np.zeros(cls.DIM))


def ray_gain(config: EnvConfig, params: SimParams = DEFAULTS) -> float:
    gain = params.night_gain if config.time == "night" else 1.0
    if config.weather == "snow":
        gain *= params.snow_gain
    return gain


def noise_sigma(config: EnvConfig, params: SimParams = DEFAULTS) -> float:
    sigma = params.base_sigma
    if config.time == "night":
        sigma += params.night_sigma
    if config.weather == "rain":
        sigma += params.rain_sigma
    elif config.weather == "snow":
        sigma += params.snow_sigma
    return sigma


def observe(
    state: EpisodeState,
    route: Route,
    config: EnvConfig,
    params: SimParams = DEFAULTS,
) -> Observation:
    """Generate the factor-conditioned observation for the current state.

    Rays are signed boundary proximity at 16 lookahead points, scaled by the
    time/weather gain, shifted by the season pattern, and perturbed by
    Gaussian noise whose level depends on time and weather.  Noise is drawn
    from the episode rng only, with a fixed draw count per step.
    """
    xs = _ray_offsets(params)
    deviation = (
        state.d
        + math.sin(state.psi) * xs
        - route.centerline_offset(state.u, xs)
    )
    base = np.tanh(deviation / route.lane_half_width)

    eps = state.rng.standard_normal(params.ray_count + 8)

    data = np.zeros(Observation.DIM)
    data[:16] = ray_gain(config, params) * base
    data[:16] += _season_pattern(config.season, params)
    data[:16] += noise_sigma(config, params) * eps[: params.ray_count]

    nearest = None
    for o in route.obstacles:
        rel = o.u - state.u
        if 0.0 <= rel <= params.obstacle_sense_range:
            nearest = o
            break  # obstacles are sorted by u
    if nearest is not None:
        prox = 1.0 - (nearest.u - state.u) / params.obstacle_sense_range
        lat = nearest.d / route.lane_half_width
        data[16] = prox
        data[17] = prox * (-1.0 if lat < -1.0 else (1.0 if lat > 1.0 else lat))
        if config.agent == "animal":
            data[18] = prox * params.animal_width
            phase = 2.0 * math.pi * params.animal_wobble_hz * state.step_index * params.dt
            data[19] = prox * params.animal_wobble * math.sin(phase)
        else:
            data[18] = prox  # wide static signature
    if config.scene == "urban":
        # structured distractors correlated with the curvature profile
        xs_c = state.u + 5.0 * np.arange(8)
        kappa_ahead = route.kappas[route._segment(xs_c)]
        data[20:28] = params.clutter_gain * np.tanh(kappa_ahead / 0.03)
        data[20:28] += params.clutter_sigma_urban * eps[params.ray_count :]
    else:
        data[20:28] = params.clutter_sigma_rural * eps[params.ray_count :]
    data[28] = state.v / params.v_max

    return Observation(data)


def _avoidance_target(state: EpisodeState, route: Route, params: SimParams) -> float:
    """Lateral reference: 0 on open road, a +-1.2 m dodge around obstacles.

    The dodge ramps in 45 m ahead of the obstacle so the soft lateral
    feedback has time to converge before the pass.
    """
    target = 0.0
    for obs in route.obstacles:
        rel = obs.u - state.u
        if not -10.0 <= rel <= 45.0:
            continue
        side = 1.0 if obs.d < 0 else -1.0  # dodge toward the roomier side
        dodge = obs.d + side * params.dodge_offset
        if rel >= 36.0:
            weight = (45.0 - rel) / 9.0
        elif rel >= -4.0:
            weight = 1.0
        else:
            weight = (rel + 10.0) / 6.0
        target += weight * dodge
    return target


def expert_controls(
    state: EpisodeState, route: Route, params: SimParams = DEFAULTS
) -> Controls:
    """Demonstration controller: curvature feedforward plus lateral feedback.

    Reads the true state (never the observation), so its competence is
    identical across all environment configurations that share a route.
    """
    d_ref = _avoidance_target(state, route, params)
    steer = (
        route.kappa(state.u + params.lookahead)
        - params.k_d * (state.d - d_ref)
        - params.k_psi * state.psi
    )
    steer = min(max(steer, -params.steer_limit), params.steer_limit)

    v_ref = params.v_ref
    for obs in route.obstacles:
        if -5.0 < obs.u - state.u < params.obstacle_slow_dist:
            v_ref = params.v_ref_obstacle
            break
    throttle = min(max(params.k_v * (v_ref - state.v), -1.0), 1.0)
    return Controls(steer_curvature=steer, throttle=throttle)
