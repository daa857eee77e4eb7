import math

import numpy as np
import pytest

from dronebeam.channel import OfdmConfig, beam_sweep, build_channel, downsample_power, make_codebook, optimal_beam, PathComponent
from dronebeam.scenario import (
    ArenaModel,
    CameraModel,
    DroneState,
    FlightPlan,
    GpsModel,
    MAX_SPEED,
    ScenarioConfig,
    TiltModel,
    body_down,
    observe_gps,
    preset_flights,
    project_camera,
    simulate_trajectory,
    synthesize_dataset,
)


def hover_plan(position=(60.0, 40.0, 50.0), steps=6, fid="hover"):
    return FlightPlan(
        flight_id=fid,
        waypoints=(position,),
        speeds=(),
        hover_steps=(steps,),
        loop=False,
        duration_steps=steps,
    )


def line_plan(a, b, speed, steps, fid="line"):
    return FlightPlan(
        flight_id=fid,
        waypoints=(a, b),
        speeds=(speed,),
        hover_steps=(0, 0),
        loop=False,
        duration_steps=steps,
    )


def state_at(position, yaw=0.0, pitch=0.0, roll=0.0, velocity=(0, 0, 0), t=0):
    return DroneState(
        position=np.asarray(position, float),
        velocity=np.asarray(velocity, float),
        yaw=yaw,
        pitch=pitch,
        roll=roll,
        timestamp_index=t,
    )


def test_hover_plan_is_stationary_level():
    states = simulate_trajectory(hover_plan(steps=8), 0.2, rng_seed=1)
    assert len(states) == 8
    for st in states:
        np.testing.assert_array_equal(st.position, states[0].position)
        assert st.pitch == 0.0
        assert st.speed == 0.0


def test_straight_leg_constant_speed_spacing():
    plan = line_plan((0.0, 75.0, 50.0), (200.0, 75.0, 50.0), 5.0, 10)
    states = simulate_trajectory(plan, 1.0, rng_seed=2)
    assert len(states) == 10
    for a, b in zip(states, states[1:]):
        gap = np.linalg.norm(b.position - a.position)
        assert abs(gap - 5.0) <= 1e-9
        assert abs(a.speed - 5.0) <= 1e-9


def test_speed_cap_applies():
    plan = line_plan((0.0, 10.0, 40.0), (200.0, 10.0, 40.0), 99.0, 12)
    states = simulate_trajectory(plan, 0.5, rng_seed=3)
    for st in states:
        assert st.speed <= MAX_SPEED + 1e-9


def test_waypoint_outside_arena_rejected():
    plan = line_plan((0.0, 0.0, 40.0), (300.0, 10.0, 40.0), 5.0, 5)
    with pytest.raises(ValueError, match="arena"):
        simulate_trajectory(plan, 0.2, rng_seed=0)
    below = hover_plan(position=(10.0, 10.0, -1.0))
    with pytest.raises(ValueError):
        simulate_trajectory(below, 0.2, rng_seed=0)


def test_trajectory_deterministic():
    plan = preset_flights(3, 300, seed=9)[1]
    a = simulate_trajectory(plan, 0.2, rng_seed=5)
    b = simulate_trajectory(plan, 0.2, rng_seed=5)
    for sa, sb in zip(a, b):
        np.testing.assert_array_equal(sa.position, sb.position)
        assert sa.roll == sb.roll and sa.pitch == sb.pitch


def test_pitch_follows_saturating_speed_map():
    tilt = TiltModel()
    plan = line_plan((0.0, 75.0, 50.0), (200.0, 75.0, 50.0), 6.0, 8)
    states = simulate_trajectory(plan, 1.0, rng_seed=2, tilt=tilt)
    expect = -tilt.max_tilt * min(1.0, 6.0 / tilt.speed_ref)
    assert abs(states[0].pitch - expect) <= 1e-12
    fast = line_plan((0.0, 75.0, 50.0), (200.0, 75.0, 50.0), 20.0, 4)
    st = simulate_trajectory(fast, 0.5, rng_seed=2, tilt=tilt)[0]
    assert abs(st.pitch + tilt.max_tilt) <= 1e-9  # saturated at the cap


def test_hover_arrival_and_resume_stays_on_path():
    plan = FlightPlan(
        flight_id="stops",
        waypoints=((10.0, 10.0, 40.0), (60.0, 10.0, 40.0), (60.0, 60.0, 40.0)),
        speeds=(8.0, 8.0),
        hover_steps=(0, 10, 0),
        loop=False,
        duration_steps=120,
    )
    states = simulate_trajectory(plan, 0.2, rng_seed=4)
    assert len(states) == 120
    speeds = [st.speed for st in states]
    assert min(speeds) == 0.0  # actually stops at the hover waypoint
    hover_pos = np.array([60.0, 10.0, 40.0])
    n_at_hover = sum(np.linalg.norm(st.position - hover_pos) < 1e-6 for st in states)
    assert n_at_hover >= 10
    # every position stays on one of the two legs
    for st in states:
        e, n, u = st.position
        assert abs(u - 40.0) <= 1e-9
        on_leg1 = abs(n - 10.0) <= 1e-6 and 10.0 - 1e-6 <= e <= 60.0 + 1e-6
        on_leg2 = abs(e - 60.0) <= 1e-6 and 10.0 - 1e-6 <= n <= 60.0 + 1e-6
        assert on_leg1 or on_leg2


def test_gps_noise_statistics():
    model = GpsModel(noise_std=3.0, bias=(1.5, -2.0))
    st = state_at((100.0, 50.0, 60.0))
    rng = np.random.default_rng(77)
    obs = np.array([observe_gps(st, model, rng) for _ in range(100_000)])
    err = obs - st.position[:2]
    assert abs(err[:, 0].mean() - 1.5) < 0.05
    assert abs(err[:, 1].mean() + 2.0) < 0.05
    for axis in range(2):
        assert abs(err[:, axis].std() - 3.0) / 3.0 < 0.02


def test_gps_zero_noise_is_exact():
    model = GpsModel(noise_std=0.0, bias=(0.5, 0.25))
    st = state_at((10.0, 20.0, 30.0))
    obs = observe_gps(st, model, np.random.default_rng(0))
    np.testing.assert_allclose(obs, [10.5, 20.25], atol=1e-12)


def test_camera_center_projection():
    cam = CameraModel.from_horizontal_fov(150.0)
    vis = project_camera(state_at((0.0, 0.0, 80.0)), cam)
    assert vis.visible
    assert abs(vis.center_u - 0.5) <= 1e-12 and abs(vis.center_v - 0.5) <= 1e-12


def test_camera_size_halves_with_doubled_range():
    cam = CameraModel.from_horizontal_fov(150.0, max_range=400.0)
    near = project_camera(state_at((30.0, 20.0, 60.0)), cam)
    far = project_camera(state_at((60.0, 40.0, 120.0)), cam)
    assert abs(far.apparent_size - near.apparent_size / 2.0) <= 1e-9


def test_camera_low_far_drone_invisible():
    cam = CameraModel.from_horizontal_fov(150.0)
    vis = project_camera(state_at((200.0, 10.0, 25.0)), cam)
    assert not vis.visible  # elevation angle below the field-of-view edge


def test_camera_fov_boundary():
    cam = CameraModel.from_horizontal_fov(120.0, aspect=1.0)
    u = 50.0
    e_edge = u * math.tan(cam.fov_h / 2.0)
    on_edge = project_camera(state_at((e_edge, 0.0, u)), cam)
    assert on_edge.visible and abs(on_edge.center_u - 1.0) <= 1e-9
    beyond = project_camera(state_at((e_edge * 1.01, 0.0, u)), cam)
    assert not beyond.visible


def test_camera_range_limit():
    cam = CameraModel.from_horizontal_fov(150.0, max_range=100.0)
    assert project_camera(state_at((10.0, 10.0, 90.0)), cam).visible
    assert not project_camera(state_at((10.0, 10.0, 120.0)), cam).visible


def test_camera_rejects_bad_fov():
    with pytest.raises(ValueError):
        CameraModel(fov_h=0.0, fov_v=1.0)
    with pytest.raises(ValueError):
        CameraModel(fov_h=1.0, fov_v=math.pi)


def test_body_down_level_and_pitched():
    np.testing.assert_allclose(body_down(0.7, 0.0, 0.0), [0, 0, -1], atol=1e-12)
    # nose-down pitch while heading east swings the axis toward the tail (west)
    d = body_down(0.0, -0.3, 0.0)
    assert d[0] < 0 and abs(d[1]) < 1e-12 and d[2] < 0
    np.testing.assert_allclose(np.linalg.norm(d), 1.0, atol=1e-12)


def small_scenario(flights, **kw):
    defaults = dict(gps=GpsModel(noise_std=0.0), roll_jitter=0.0, seed=11)
    defaults.update(kw)
    return ScenarioConfig(flights=tuple(flights), **defaults)


def test_synthesize_deterministic():
    cfg = small_scenario(preset_flights(3, 150, seed=21), gps=GpsModel(noise_std=2.0))
    a = synthesize_dataset(cfg)
    b = synthesize_dataset(cfg)
    assert len(a) == len(b)
    for sa, sb in zip(a, b):
        assert sa.flight_id == sb.flight_id and sa.t == sb.t and sa.label == sb.label
        np.testing.assert_array_equal(sa.gps, sb.gps)
        np.testing.assert_array_equal(sa.power32, sb.power32)


def test_synthesize_labels_match_scalar_channel_ops():
    # dual route: the vectorized sweep must agree with the per-sample channel
    # operations beam by beam
    for refl in (False, True):
        cfg = small_scenario(
            preset_flights(2, 60, seed=31), ground_reflection=refl, keep_invisible=True
        )
        samples = synthesize_dataset(cfg)
        cb = make_codebook(cfg.num_antennas, cfg.num_beams, cfg.antenna_spacing)
        by_flight = {p.flight_id: i for i, p in enumerate(cfg.flights)}
        states = {
            p.flight_id: simulate_trajectory(
                p, cfg.step_period, rng_seed=[cfg.seed, 7, by_flight[p.flight_id]],
                max_speed=cfg.max_speed, accel=cfg.accel, arena=cfg.arena,
                tilt=cfg.tilt, roll_jitter=cfg.roll_jitter,
            )
            for p in cfg.flights
        }
        rng = np.random.default_rng(5)
        for s in [samples[i] for i in rng.choice(len(samples), 12, replace=False)]:
            st = states[s.flight_id][s.t]
            pos = st.position
            dist = np.linalg.norm(pos)
            direction = pos / dist
            down = body_down(st.yaw, st.pitch, st.roll)
            cosang = float(down @ (-direction))
            amp = math.sqrt(((1.0 + cosang) / 2.0) ** cfg.lobe_exponent)
            paths = [
                PathComponent(
                    gain=cfg.ref_amplitude / dist * amp,
                    delay=0.0,
                    azimuth=math.atan2(direction[1], direction[0]),
                    elevation=math.asin(np.clip(direction[2], -1, 1)),
                )
            ]
            if refl:
                image = np.array([pos[0], pos[1], -(pos[2] + 2 * cfg.bs_height)])
                len_r = np.linalg.norm(image)
                dir_r = image / len_r
                dep = np.array([0.0, 0.0, -2 * cfg.bs_height]) - pos
                dep /= np.linalg.norm(dep)
                cos_r = float(down @ dep)
                amp_r = math.sqrt(((1.0 + cos_r) / 2.0) ** cfg.lobe_exponent)
                delay = (len_r - dist) / 299792458.0
                gain = (
                    cfg.reflection_coeff
                    * cfg.ref_amplitude
                    / len_r
                    * amp_r
                    * np.exp(-1j * 2 * np.pi * cfg.carrier_freq * delay)
                )
                paths.append(
                    PathComponent(
                        gain=complex(gain),
                        delay=float(delay),
                        azimuth=math.atan2(dir_r[1], dir_r[0]),
                        elevation=math.asin(np.clip(dir_r[2], -1, 1)),
                    )
                )
            h = build_channel(paths, cfg.ofdm, cfg.num_antennas)
            pv = beam_sweep(h, cb, cfg.ofdm)
            p32 = downsample_power(pv)
            np.testing.assert_allclose(s.power32, p32.powers, rtol=1e-9)
            assert s.label == optimal_beam(p32)


def test_inverse_square_power_scaling():
    # identical directions at range r and 2r: best-beam power ratio is 4
    rng = np.random.default_rng(17)
    flights = []
    for i in range(50):
        d = np.array([rng.uniform(0.3, 1.0), rng.uniform(0.2, 0.8), rng.uniform(0.5, 1.2)])
        d /= np.linalg.norm(d)
        near = tuple(np.round(d * 60.0, 6))
        far = tuple(np.round(d * 120.0, 6))
        flights.append(hover_plan(position=near, steps=1, fid=f"near{i}"))
        flights.append(hover_plan(position=far, steps=1, fid=f"far{i}"))
    cfg = small_scenario(
        flights, camera=CameraModel.from_horizontal_fov(170.0, max_range=400.0),
        keep_invisible=True,
    )
    samples = {s.flight_id: s for s in synthesize_dataset(cfg)}
    ratios = []
    for i in range(50):
        p_near = samples[f"near{i}"].power32.max()
        p_far = samples[f"far{i}"].power32.max()
        ratios.append(p_near / p_far)
    np.testing.assert_allclose(ratios, 4.0, rtol=1e-6)
    assert abs(np.mean(ratios) - 4.0) / 4.0 < 0.2


def test_fov_filter_drops_invisible_samples():
    seen = hover_plan(position=(40.0, 30.0, 60.0), steps=5, fid="seen")
    unseen = hover_plan(position=(200.0, 10.0, 24.0), steps=5, fid="unseen")
    cfg = small_scenario([seen, unseen])
    samples = synthesize_dataset(cfg)
    assert {s.flight_id for s in samples} == {"seen"}
    cfg_keep = small_scenario([seen, unseen], keep_invisible=True)
    kept = synthesize_dataset(cfg_keep)
    assert {s.flight_id for s in kept} == {"seen", "unseen"}
    assert len(kept) == 10


def test_preset_flights_fully_visible_and_exact_count():
    plans = preset_flights(12, 1200, seed=41)
    assert sum(p.duration_steps for p in plans) == 1200
    cfg = small_scenario(plans, gps=GpsModel(noise_std=2.0), roll_jitter=0.02)
    samples = synthesize_dataset(cfg)
    assert len(samples) == 1200  # every step visible, none filtered
    for s in samples:
        assert s.visual.visible
        assert s.speed <= MAX_SPEED + 1e-9
        assert s.distance <= cfg.camera.max_range
        assert abs(s.roll) < 0.3


def test_preset_covers_height_and_speed_strata():
    plans = preset_flights(9, 2700, seed=51)
    cfg = small_scenario(plans)
    samples = synthesize_dataset(cfg)
    heights = np.array([s.height for s in samples])
    speeds_mph = np.array([s.speed for s in samples]) / 0.44704
    assert (heights < 40).any() and ((heights >= 40) & (heights <= 80)).any() and (heights > 80).any()
    assert (speeds_mph <= 10).any() and ((speeds_mph > 10) & (speeds_mph <= 20)).any() and (speeds_mph > 20).any()


def test_power_distance_binned_trend():
    # noise-free hover corpus spanning ranges: binned mean best power falls
    rng = np.random.default_rng(3)
    flights = []
    for i, r in enumerate(np.linspace(50, 220, 24)):
        d = np.array([rng.uniform(0.3, 0.9), rng.uniform(0.2, 0.7), 1.0])
        d /= np.linalg.norm(d)
        flights.append(hover_plan(position=tuple(d * r), steps=4, fid=f"h{i}"))
    cfg = small_scenario(
        flights, camera=CameraModel.from_horizontal_fov(170.0, max_range=400.0),
        keep_invisible=True,
    )
    samples = synthesize_dataset(cfg)
    dists = np.array([s.distance for s in samples])
    best = np.array([s.power32.max() for s in samples])
    edges = [0, 90, 140, 190, 1000]
    means = []
    for lo, hi in zip(edges, edges[1:]):
        mask = (dists >= lo) & (dists < hi)
        assert mask.any()
        means.append(best[mask].mean())
    assert all(a >= b for a, b in zip(means, means[1:]))


def square_circuit(alt, speed, fid, steps, hover=0):
    wps = ((30.0, 20.0, alt), (95.0, 20.0, alt), (95.0, 60.0, alt), (30.0, 60.0, alt))
    hovers = [0, 0, 0, 0]
    if hover:
        hovers = [hover] * 4
    return FlightPlan(
        flight_id=fid,
        waypoints=wps,
        speeds=(speed,) * 4,
        hover_steps=tuple(hovers),
        loop=True,
        duration_steps=steps,
    )


def test_speed_tilt_reduces_mean_power():
    flights = [
        square_circuit(70.0, 2.0, "slow", 700),
        square_circuit(70.0, 6.5, "mid", 700),
        square_circuit(70.0, 10.8, "fast", 700),
    ]
    cfg = small_scenario(flights)
    samples = synthesize_dataset(cfg)
    mean_power = {}
    for fid in ("slow", "mid", "fast"):
        vals = [s.power32.max() for s in samples if s.flight_id == fid and s.speed > 0]
        mean_power[fid] = np.mean(vals)
    assert mean_power["slow"] >= mean_power["mid"] >= mean_power["fast"]


def test_pitch_bins_power_trend():
    flights = [
        square_circuit(70.0, 2.0, "hoverish", 700, hover=40),
        square_circuit(70.0, 10.8, "fast", 700),
    ]
    cfg = small_scenario(flights)
    samples = synthesize_dataset(cfg)
    near_zero = [s.power32.max() for s in samples if abs(s.pitch) < math.radians(5)]
    steep = [s.power32.max() for s in samples if abs(s.pitch) > math.radians(20)]
    assert len(near_zero) > 20 and len(steep) > 20
    assert np.mean(near_zero) > np.mean(steep)


def test_ground_reflection_perturbs_low_altitude_labels():
    plans = [
        square_circuit(28.0, 5.0, "low", 400),
        square_circuit(90.0, 5.0, "high", 400),
    ]
    base = small_scenario(plans)
    flagged = small_scenario(plans, ground_reflection=True)
    a = synthesize_dataset(base)
    b = synthesize_dataset(flagged)
    assert len(a) == len(b)
    flips = {"low": 0, "high": 0}
    counts = {"low": 0, "high": 0}
    for sa, sb in zip(a, b):
        counts[sa.flight_id] += 1
        if sa.label != sb.label:
            flips[sa.flight_id] += 1
    low_rate = flips["low"] / counts["low"]
    high_rate = flips["high"] / counts["high"]
    assert low_rate > high_rate
    assert low_rate > 0.02


def test_drone_state_validation():
    with pytest.raises(ValueError):
        state_at((10.0, 10.0, -5.0))
    with pytest.raises(ValueError):
        DroneState(
            position=np.zeros(2), velocity=np.zeros(3),
            yaw=0, pitch=0, roll=0, timestamp_index=0,
        )


def test_flight_plan_validation():
    with pytest.raises(ValueError):
        FlightPlan("x", ((0, 0, 10),) * 2, (0.0,), (0, 0), loop=False, duration_steps=5)
    with pytest.raises(ValueError):
        FlightPlan("x", ((0, 0, 10),) * 2, (5.0,), (0,), loop=False, duration_steps=5)
    with pytest.raises(ValueError):
        FlightPlan("x", (), (), (), loop=False, duration_steps=5)
