"""Drone flight simulation over a park-sized arena and synthetic sensing corpus.

Everything lives in a local East-North-Up frame centered on the base station
antenna.  The ground plane sits at up = -bs_height.  A flight is a piecewise
linear waypoint circuit flown with trapezoidal speed ramps; pitch follows a
saturating speed-tilt map (nose down when moving), roll carries small seeded
jitter, yaw tracks the direction of travel.

Each emitted sample pairs the drone's sensed state (noisy GPS, camera
detection) with the swept beam powers of a line-of-sight mmWave channel whose
path amplitude scales as 1/distance and with the drone's antenna lobe, a
cosine-shaped pattern aimed along the body-down axis.  An optional ground
bounce adds a second, carrier-phase-rotated path which mostly matters at low
altitude.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .channel import OfdmConfig, make_codebook
from .dataset import SensingSample, VisualFeature

MAX_SPEED = 11.176  # 25 mph in m/s
SPEED_OF_LIGHT = 299792458.0


@dataclass(frozen=True)
class ArenaModel:
    east: float = 205.0
    north: float = 152.0


@dataclass(frozen=True)
class TiltModel:
    """Pitch magnitude grows linearly with horizontal speed and saturates."""

    max_tilt: float = math.radians(30.0)
    speed_ref: float = MAX_SPEED


@dataclass(frozen=True)
class GpsModel:
    noise_std: float = 2.0
    bias: tuple = (0.0, 0.0)
    seed: int = 0


@dataclass(frozen=True)
class CameraModel:
    """Skyward pinhole camera at the base station."""

    fov_h: float
    fov_v: float
    max_range: float = 250.0
    reference_size: float = 40.0
    mounting: str = "skyward"

    def __post_init__(self):
        if not 0 < self.fov_h < math.pi or not 0 < self.fov_v < math.pi:
            raise ValueError("field of view must lie in (0, pi)")
        if self.max_range <= 0 or self.reference_size <= 0:
            raise ValueError("max_range and reference_size must be positive")

    @classmethod
    def from_horizontal_fov(cls, fov_h_deg, aspect=4.0 / 3.0, **kw):
        fov_h = math.radians(fov_h_deg)
        fov_v = 2.0 * math.atan(math.tan(fov_h / 2.0) / aspect)
        return cls(fov_h=fov_h, fov_v=fov_v, **kw)


@dataclass(frozen=True)
class DroneState:
    position: np.ndarray
    velocity: np.ndarray
    yaw: float
    pitch: float
    roll: float
    timestamp_index: int

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float)
        vel = np.asarray(self.velocity, dtype=float)
        if pos.shape != (3,) or vel.shape != (3,):
            raise ValueError("position and velocity must be 3-vectors")
        if pos[2] < 0:
            raise ValueError("drone altitude must not drop below the station plane")
        pos.flags.writeable = False
        vel.flags.writeable = False
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "velocity", vel)

    @property
    def speed(self):
        return float(np.linalg.norm(self.velocity))


@dataclass(frozen=True)
class FlightPlan:
    flight_id: str
    waypoints: tuple
    speeds: tuple
    hover_steps: tuple
    loop: bool = True
    duration_steps: int = 0

    def __post_init__(self):
        n = len(self.waypoints)
        if n < 1:
            raise ValueError("a plan needs at least one waypoint")
        n_legs = n if (self.loop and n > 1) else max(0, n - 1)
        if n > 1 and len(self.speeds) != n_legs:
            raise ValueError(f"expected {n_legs} leg speeds, got {len(self.speeds)}")
        if len(self.hover_steps) != n:
            raise ValueError("hover_steps must give one entry per waypoint")
        if any(v <= 0 for v in self.speeds):
            raise ValueError("leg speeds must be positive")
        if any(h < 0 for h in self.hover_steps):
            raise ValueError("hover steps must be non-negative")
        if self.duration_steps < 1:
            raise ValueError("duration_steps must be positive")


def _check_waypoints(plan, arena):
    for w in plan.waypoints:
        e, n, u = w
        if not (0.0 <= e <= arena.east and 0.0 <= n <= arena.north and u >= 0.0):
            raise ValueError(
                f"waypoint {tuple(w)} of flight {plan.flight_id} falls outside the "
                f"{arena.east:g} x {arena.north:g} m arena"
            )


def simulate_trajectory(
    plan: FlightPlan,
    step_period,
    rng_seed,
    *,
    max_speed=MAX_SPEED,
    accel=2.5,
    arena=ArenaModel(),
    tilt=TiltModel(),
    roll_jitter=0.02,
):
    """Deterministic state sequence for one flight plan.

    Legs start at cruise speed unless the previous waypoint was a hover stop;
    the drone brakes to a stop before hover waypoints and at the path end.
    A finished non-loop plan hovers in place until duration_steps is reached.
    """
    _check_waypoints(plan, arena)
    if step_period <= 0:
        raise ValueError("step_period must be positive")
    rng = np.random.default_rng(rng_seed)
    wp = [np.asarray(w, dtype=float) for w in plan.waypoints]
    n = len(wp)
    single = n == 1
    n_legs = n if (plan.loop and not single) else n - 1
    cruise = [min(v, max_speed) for v in plan.speeds]

    leg_dir, leg_len = [], []
    for j in range(n_legs):
        d = wp[(j + 1) % n] - wp[j]
        length = float(np.linalg.norm(d))
        leg_dir.append(d / length if length > 0 else np.zeros(3))
        leg_len.append(length)

    def is_stop(wp_idx):
        if plan.hover_steps[wp_idx] > 0:
            return True
        return (not plan.loop) and wp_idx == n - 1

    brake_horizon = max_speed**2 / (2.0 * accel) + 1.0
    any_stop = (not plan.loop) or any(h > 0 for h in plan.hover_steps)

    # mutable cursor: current leg k, distance s into it, speed v
    k, s = 0, 0.0
    hover_left = plan.hover_steps[0] if not single else plan.duration_steps
    done = single
    v = 0.0 if (hover_left > 0 or single) else cruise[0]

    def dist_to_stop():
        if done:
            return 0.0
        if not any_stop:
            return None
        total = -s
        j = k
        for _ in range(n_legs):
            total += leg_len[j]
            if is_stop((j + 1) % n):
                return total
            if total > brake_horizon:
                return None
            j = (j + 1) % n
        return None

    states = []
    yaw = 0.0 if single else math.atan2(leg_dir[0][1], leg_dir[0][0])
    roll = 0.0
    ar = 0.95
    jit = roll_jitter * math.sqrt(1.0 - ar * ar)
    n_sub = 16
    for t in range(plan.duration_steps):
        roll = ar * roll + jit * rng.standard_normal()
        if hover_left > 0 or done:
            pos = wp[k] if (done or s == 0.0) else wp[k] + leg_dir[k] * s
            states.append(
                DroneState(
                    position=pos.copy(), velocity=np.zeros(3),
                    yaw=yaw, pitch=0.0, roll=roll, timestamp_index=t,
                )
            )
            hover_left = max(0, hover_left - 1)
            continue
        direction = leg_dir[k]
        pos = wp[k] + direction * s
        vel = v * direction
        yaw = math.atan2(direction[1], direction[0])
        v_h = v * math.hypot(direction[0], direction[1])
        pitch = -tilt.max_tilt * min(1.0, v_h / tilt.speed_ref)
        states.append(
            DroneState(
                position=pos, velocity=vel, yaw=yaw, pitch=pitch, roll=roll,
                timestamp_index=t,
            )
        )
        # advance one period in substeps with an acceleration slew and a
        # braking curve toward the next stop waypoint
        dt = step_period / n_sub
        for _ in range(n_sub):
            d_stop = dist_to_stop()
            v_allow = math.inf if d_stop is None else math.sqrt(max(0.0, 2.0 * accel * d_stop))
            target = min(cruise[k], v_allow)
            if v < target:
                v = min(target, v + accel * dt)
            else:
                v = max(target, v - accel * dt)
            ds = v * dt
            if d_stop is not None and d_stop <= max(0.02, ds):
                # snap onto the stop waypoint
                while not is_stop((k + 1) % n):
                    k = (k + 1) % n
                arrive = (k + 1) % n
                k, s, v = arrive, 0.0, 0.0
                hover_left = plan.hover_steps[arrive]
                if (not plan.loop) and arrive == n - 1:
                    done = True
                break
            while ds > 0.0:
                rem = leg_len[k] - s
                if ds < rem:
                    s += ds
                    ds = 0.0
                else:
                    ds -= rem
                    nxt = (k + 1) % n
                    if is_stop(nxt):
                        k, s, v, ds = nxt, 0.0, 0.0, 0.0
                        hover_left = plan.hover_steps[nxt]
                        if (not plan.loop) and nxt == n - 1:
                            done = True
                    elif (not plan.loop) and nxt == n - 1:
                        k, s, v, ds = nxt, 0.0, 0.0, 0.0
                        done = True
                    else:
                        k, s = nxt, 0.0
            if hover_left > 0 or done:
                break
    return states


def observe_gps(state: DroneState, model: GpsModel, rng):
    """Observed east-north position: truth plus bias plus white noise."""
    noise = rng.normal(0.0, model.noise_std, size=2) if model.noise_std > 0 else np.zeros(2)
    return state.position[:2] + np.asarray(model.bias, dtype=float) + noise


def project_camera(state: DroneState, camera: CameraModel):
    """Pinhole projection to normalized image coordinates.

    The optical axis points straight up; image u grows with east, v with
    north.  A drone is visible when it projects inside the unit square and
    its range is within the detectability limit.  Apparent size falls off as
    reference_size / range, clamped to (0, 1].
    """
    e, n, u = state.position
    rng_m = max(float(np.linalg.norm(state.position)), 1e-9)
    size = float(min(1.0, camera.reference_size / rng_m))
    if u <= 0.0:
        return VisualFeature(center_u=0.0, center_v=0.0, apparent_size=size, visible=False)
    cu = 0.5 + (e / u) / (2.0 * math.tan(camera.fov_h / 2.0))
    cv = 0.5 + (n / u) / (2.0 * math.tan(camera.fov_v / 2.0))
    visible = 0.0 <= cu <= 1.0 and 0.0 <= cv <= 1.0 and rng_m <= camera.max_range
    return VisualFeature(center_u=cu, center_v=cv, apparent_size=size, visible=visible)


def body_down(yaw, pitch, roll):
    """World-frame unit vector along the drone's body-down axis.

    Level attitude gives (0, 0, -1); pitching nose down swings the axis away
    from the direction of travel, toward the tail.
    """
    yaw = np.asarray(yaw, dtype=float)
    pitch = np.asarray(pitch, dtype=float)
    roll = np.asarray(roll, dtype=float)
    f0 = np.stack([np.cos(yaw), np.sin(yaw), np.zeros_like(yaw)], axis=-1)
    l0 = np.stack([-np.sin(yaw), np.cos(yaw), np.zeros_like(yaw)], axis=-1)
    u0 = np.stack([np.zeros_like(yaw), np.zeros_like(yaw), np.ones_like(yaw)], axis=-1)
    cp, sp = np.cos(pitch)[..., None], np.sin(pitch)[..., None]
    cr, sr = np.cos(roll)[..., None], np.sin(roll)[..., None]
    u1 = cp * u0 - sp * f0
    u2 = cr * u1 - sr * l0
    return -u2


@dataclass(frozen=True)
class ScenarioConfig:
    flights: tuple
    arena: ArenaModel = ArenaModel()
    camera: CameraModel = CameraModel.from_horizontal_fov(150.0)
    gps: GpsModel = GpsModel()
    tilt: TiltModel = TiltModel()
    ofdm: OfdmConfig = OfdmConfig()
    num_antennas: int = 16
    num_beams: int = 64
    antenna_spacing: float = 0.5
    step_period: float = 0.2
    max_speed: float = MAX_SPEED
    accel: float = 2.5
    lobe_exponent: float = 4.0
    ref_amplitude: float = 1.0
    carrier_freq: float = 60e9
    bs_height: float = 1.5
    ground_reflection: bool = False
    reflection_coeff: float = -0.7
    keep_invisible: bool = False
    roll_jitter: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.num_beams % 2 != 0:
            raise ValueError("num_beams must be even for the alternate-beam downsample")
        ids = [p.flight_id for p in self.flights]
        if len(set(ids)) != len(ids):
            raise ValueError("flight ids must be unique")


def _orientation_amplitude(states, directions_to_bs, lobe_exponent):
    yaw = np.array([s.yaw for s in states])
    pitch = np.array([s.pitch for s in states])
    roll = np.array([s.roll for s in states])
    down = body_down(yaw, pitch, roll)
    cosang = np.einsum("td,td->t", down, directions_to_bs)
    gain = ((1.0 + cosang) / 2.0) ** lobe_exponent
    return np.sqrt(gain)


def _sweep_flight(cfg: ScenarioConfig, states, codebook):
    """Vectorized 64-beam sweep for every state of one flight."""
    pos = np.stack([s.position for s in states])
    dist = np.linalg.norm(pos, axis=1)
    dist = np.maximum(dist, 1e-9)
    dirs = pos / dist[:, None]
    m = np.arange(cfg.num_antennas)
    # arrival phase per element is 2*pi*spacing*m*cos(az)*cos(el) and the
    # product of cosines is just the east component of the arrival direction
    steer_los = np.exp(1j * 2.0 * np.pi * cfg.antenna_spacing * np.outer(dirs[:, 0], m))
    amp_orient = _orientation_amplitude(states, -dirs, cfg.lobe_exponent)
    alpha_los = cfg.ref_amplitude / dist * amp_orient

    F = codebook.beams
    if not cfg.ground_reflection:
        # single tap at delay zero: the response is flat over subcarriers
        amp = (alpha_los[:, None] * steer_los) @ F.T
        powers = cfg.ofdm.snr_scale * np.abs(amp) ** 2
        return powers

    image = pos.copy()
    image[:, 2] = -(pos[:, 2] + 2.0 * cfg.bs_height)
    len_r = np.linalg.norm(image, axis=1)
    dirs_r = image / len_r[:, None]
    steer_ref = np.exp(1j * 2.0 * np.pi * cfg.antenna_spacing * np.outer(dirs_r[:, 0], m))
    bounce = np.array([0.0, 0.0, -2.0 * cfg.bs_height])
    dep = bounce[None, :] - pos
    dep /= np.linalg.norm(dep, axis=1)[:, None]
    amp_orient_r = _orientation_amplitude(states, dep, cfg.lobe_exponent)
    delay = (len_r - dist) / SPEED_OF_LIGHT
    phase = np.exp(-1j * 2.0 * np.pi * cfg.carrier_freq * delay)
    alpha_ref = cfg.reflection_coeff * cfg.ref_amplitude / len_r * amp_orient_r * phase

    K, D, ts = cfg.ofdm.num_subcarriers, cfg.ofdm.cyclic_prefix_len, cfg.ofdm.sample_time
    d_grid = np.arange(D) * ts
    pulse_los = np.sinc(d_grid / ts)  # delta at tap zero
    dft = np.exp(-2j * np.pi * np.outer(np.arange(K), np.arange(D)) / K)
    powers = np.empty((len(states), codebook.num_beams))
    chunk = 256
    for i in range(0, len(states), chunk):
        sl = slice(i, min(i + chunk, len(states)))
        pl_ref = np.sinc((d_grid[None, :] - delay[sl, None]) / ts)
        taps = (
            alpha_los[sl, None, None] * pulse_los[None, :, None] * steer_los[sl, None, :]
            + alpha_ref[sl, None, None] * pl_ref[:, :, None] * steer_ref[sl, None, :]
        )
        h = np.einsum("kd,tdm->tkm", dft, taps)
        amp = np.einsum("tkm,qm->tkq", h, F)
        powers[sl] = cfg.ofdm.snr_scale * np.mean(np.abs(amp) ** 2, axis=1)
    return powers


def synthesize_dataset(cfg: ScenarioConfig, rng_seed=None):
    """Simulate every flight and emit one SensingSample per visible step.

    Samples the camera cannot confirm are dropped unless keep_invisible is
    set.  Identical config and seed reproduce the table exactly.
    """
    seed = cfg.seed if rng_seed is None else rng_seed
    codebook = make_codebook(cfg.num_antennas, cfg.num_beams, cfg.antenna_spacing)
    samples = []
    for idx, plan in enumerate(cfg.flights):
        states = simulate_trajectory(
            plan,
            cfg.step_period,
            rng_seed=[seed, 7, idx],
            max_speed=cfg.max_speed,
            accel=cfg.accel,
            arena=cfg.arena,
            tilt=cfg.tilt,
            roll_jitter=cfg.roll_jitter,
        )
        powers64 = _sweep_flight(cfg, states, codebook)
        labels64 = np.argmax(powers64, axis=1)
        powers32 = powers64[:, ::2]
        labels32 = np.argmax(powers32, axis=1)
        del labels64
        gps_rng = np.random.default_rng([seed, 101, idx, cfg.gps.seed])
        for t, st in enumerate(states):
            vis = project_camera(st, cfg.camera)
            if not vis.visible and not cfg.keep_invisible:
                continue
            gps = observe_gps(st, cfg.gps, gps_rng)
            samples.append(
                SensingSample(
                    flight_id=plan.flight_id,
                    t=t,
                    gps=gps,
                    height=float(st.position[2]),
                    distance=float(np.linalg.norm(st.position)),
                    speed=st.speed,
                    pitch=st.pitch,
                    roll=st.roll,
                    visual=vis,
                    power32=powers32[t],
                    label=int(labels32[t]),
                )
            )
    return samples


def preset_flights(
    count,
    total_steps,
    seed,
    *,
    arena=ArenaModel(),
    camera=None,
    max_speed=MAX_SPEED,
    min_altitude=26.0,
    visibility_margin=0.9,
):
    """Deterministic family of visible waypoint circuits covering the height
    and speed strata.

    Altitude band cycles low/mid/high and speed band cycles slow/medium/fast
    with the flight index, so any sizeable corpus populates every stratum.
    Waypoints are kept inside the camera frustum with a margin; because image
    coordinates are monotone along straight legs and range is convex, visible
    waypoints guarantee visible legs.
    """
    camera = camera or CameraModel.from_horizontal_fov(150.0)
    alt_bands = [(min_altitude, 40.0), (45.0, 75.0), (80.0, 95.0)]
    speed_bands = [(1.5, 4.0), (4.2, 8.0), (8.2, min(11.1, max_speed))]
    tan_h = math.tan(camera.fov_h / 2.0) * visibility_margin
    tan_v = math.tan(camera.fov_v / 2.0) * visibility_margin
    r_max = camera.max_range * 0.96
    rng = np.random.default_rng(seed)
    base = total_steps // count
    extras = total_steps - base * count
    plans = []
    for i in range(count):
        alt_lo, alt_hi = alt_bands[i % 3]
        sp_lo, sp_hi = speed_bands[(i // 3) % 3]
        n_wp = int(rng.integers(4, 7))
        alts = rng.uniform(alt_lo, alt_hi, size=n_wp)
        u_min = float(alts.min())
        # horizontal footprint that stays inside the frustum at the lowest
        # altitude of the circuit, inside the detectability sphere at the
        # highest one, and inside the arena
        rho = math.sqrt(max(r_max**2 - alt_hi**2, 1.0))
        e_max = min(arena.east, tan_h * u_min, 0.8 * rho)
        n_max = min(arena.north, tan_v * u_min, 0.6 * rho)
        ce = rng.uniform(0.25 * e_max, 0.7 * e_max)
        cn = rng.uniform(0.25 * n_max, 0.7 * n_max)
        re = rng.uniform(0.18, 0.3) * e_max
        rn = rng.uniform(0.18, 0.3) * n_max
        angles = np.sort(rng.uniform(0, 2 * np.pi, size=n_wp))
        pts = []
        for j in range(n_wp):
            e = np.clip(ce + re * math.cos(angles[j]), 2.0, e_max)
            n = np.clip(cn + rn * math.sin(angles[j]), 2.0, n_max)
            pts.append((float(e), float(n), float(alts[j])))
        speeds = tuple(float(rng.uniform(sp_lo, sp_hi)) for _ in range(n_wp))
        hovers = [0] * n_wp
        if i % 2 == 0:
            hovers[int(rng.integers(0, n_wp))] = int(rng.integers(8, 30))
        steps = base + (1 if i < extras else 0)
        plans.append(
            FlightPlan(
                flight_id=f"f{i:03d}",
                waypoints=tuple(pts),
                speeds=speeds,
                hover_steps=tuple(hovers),
                loop=True,
                duration_steps=steps,
            )
        )
    return tuple(plans)
