"""Tracker and rollout tests on constructed ramp/constant corpora."""

import numpy as np
import pytest

from dronebeam.dataset import (
    NormalizationSpec,
    SensingSample,
    SequenceSample,
    VisualFeature,
    build_sequences,
)
from dronebeam.predict import rank_beams
from dronebeam.track import (
    ROLLOUT_CSV_HEADER,
    RolloutSchedule,
    SkipSequence,
    TrackerConfig,
    assemble_sequence_inputs,
    assemble_sequence_tensor,
    build_beam_embedding_table,
    predict_future,
    recursive_rollout,
    save_rollout_csv,
    sensed_rollout,
    train_tracker,
)


def make_sample(flight_id, t, label, *, gps_e=None, u=0.5, visible=True):
    e = float(label * 5) if gps_e is None else gps_e
    return SensingSample(
        flight_id=flight_id, t=t, gps=np.array([e, 0.0]),
        height=50.0, distance=90.0, speed=4.0, pitch=0.0, roll=0.0,
        visual=VisualFeature(u, 0.5, 0.4, visible),
        power32=np.full(32, 1e-6), label=label)


# triangle wave bouncing between labels 2 and 29: the next label is a
# deterministic function of any two consecutive ones, and no segment length
# ever leaves the trained range
_LO, _SPAN = 2, 27
_PERIOD = 2 * _SPAN


def tri_label(phase):
    phase = phase % _PERIOD
    return _LO + (_SPAN - abs(phase - _SPAN))


def ramp_samples(num_flights=24, length=22, seed=0):
    """Flights whose label walks the triangle wave from staggered phases."""
    samples = []
    for f in range(num_flights):
        start = (seed + f * 7) % _PERIOD
        for t in range(length):
            label = tri_label(start + t)
            samples.append(make_sample(f, t, label, u=label / 62 + 0.25))
    return samples


def ramp_sequences(num_flights=24, length=22, seed=0):
    return build_sequences(ramp_samples(num_flights, length, seed))


TOY = dict(hidden=48, layers=2, batch=128, epochs=120, base_lr=1e-2,
           decay_epochs=(80, 105))


def test_config_defaults_per_modality():
    assert TrackerConfig("beam_only").base_lr == 1e-3
    assert TrackerConfig("position").base_lr == 1e-2
    assert TrackerConfig("vision").base_lr == 1e-2
    assert TrackerConfig("beam_only").input_dim == 20
    assert TrackerConfig("position").input_dim == 2
    assert TrackerConfig("vision").input_dim == 2
    assert TrackerConfig("beam_only").decay_epochs == (40, 120)
    with pytest.raises(ValueError):
        TrackerConfig("lidar")
    with pytest.raises(ValueError):
        TrackerConfig("vision", dropout=1.0)


def test_embedding_table_stats_and_determinism():
    a = build_beam_embedding_table(32, 20, seed=4)
    b = build_beam_embedding_table(32, 20, seed=4)
    assert a.table.shape == (32, 20)
    assert np.array_equal(a.table, b.table)
    assert abs(a.table.mean()) < 0.1
    assert abs(a.table.std() - 1.0) < 0.1


def test_assemble_beam_only_constant_window():
    seq = build_sequences([make_sample(0, t, 5) for t in range(11)])[0]
    table = build_beam_embedding_table(seed=1)
    rows = assemble_sequence_inputs(seq, "beam_only", table=table)
    assert rows.shape == (8, 20)
    for row in rows:
        assert np.array_equal(row, table.table[5])


def test_assemble_position_training_min_is_zero():
    samples = [make_sample(0, t, t % 32) for t in range(11)]
    seqs = build_sequences(samples)
    norm = NormalizationSpec.fit(samples)
    rows = assemble_sequence_inputs(seqs[0], "position", norm=norm)
    assert rows.shape == (8, 2)
    assert np.allclose(rows[0], [0.0, 0.0], atol=1e-12)


def test_assemble_vision_centered_and_skip():
    samples = [make_sample(0, t, 3, u=0.5) for t in range(11)]
    seq = build_sequences(samples)[0]
    rows = assemble_sequence_inputs(seq, "vision")
    assert np.allclose(rows, 0.5)

    hidden = [make_sample(0, t, 3, visible=(t != 4)) for t in range(11)]
    seq_h = SequenceSample(tuple(hidden[:8]),
                           tuple(s.label for s in hidden[8:11]))
    with pytest.raises(SkipSequence):
        assemble_sequence_inputs(seq_h, "vision")
    X, Y, kept = assemble_sequence_tensor(
        [seq, seq_h], TrackerConfig("vision", **TOY))
    assert X.shape == (1, 8, 2) and kept == [0]


def test_assemble_rejects_wrong_window_length():
    samples = [make_sample(0, t, 1) for t in range(10)]
    short = SequenceSample(tuple(samples[:7]),
                           tuple(s.label for s in samples[7:10]))
    with pytest.raises(ValueError):
        assemble_sequence_tensor([short], TrackerConfig("beam_only", **TOY),
                                 table=build_beam_embedding_table())


@pytest.fixture(scope="module")
def ramp_tracker():
    seqs = ramp_sequences()
    config = TrackerConfig("beam_only", **TOY)
    return train_tracker(seqs, config, seed=0), seqs, config


def test_ramp_corpus_learned_exactly(ramp_tracker):
    model, seqs, config = ramp_tracker
    X, Y, _ = assemble_sequence_tensor(seqs, config, table=model.table)
    probs = model.head_proba(X)
    top1 = np.argmax(probs[0], axis=1)
    assert np.mean(top1 == Y[:, 0]) == 1.0


def test_constant_corpus_all_horizons(ramp_tracker):
    del ramp_tracker
    samples = []
    for f in range(16):
        for t in range(14):
            samples.append(make_sample(f, t, (f * 7) % 32))
    seqs = build_sequences(samples)
    config = TrackerConfig("beam_only", hidden=32, layers=2, batch=64,
                           epochs=40, base_lr=1e-2, decay_epochs=(30,))
    model = train_tracker(seqs, config, seed=1)
    X, Y, _ = assemble_sequence_tensor(seqs, config, table=model.table)
    probs = model.head_proba(X)
    for h in range(3):
        assert np.mean(np.argmax(probs[h], axis=1) == Y[:, h]) == 1.0


def test_same_seed_identical_parameters():
    seqs = ramp_sequences(num_flights=6)
    config = TrackerConfig("beam_only", hidden=16, layers=2, batch=64,
                           epochs=4, base_lr=1e-2)
    a = train_tracker(seqs, config, seed=7)
    b = train_tracker(seqs, config, seed=7)
    for pa, pb in zip(a.net.params, b.net.params):
        assert np.array_equal(pa, pb)


def test_training_leaves_embedding_frozen(ramp_tracker):
    model, _, config = ramp_tracker
    fresh = build_beam_embedding_table(config.classes, config.embed_dim,
                                       seed=(0, 5))
    assert np.array_equal(model.table.table, fresh.table)


def test_predict_future_shapes_and_oracle(ramp_tracker):
    model, seqs, config = ramp_tracker
    window = assemble_sequence_inputs(seqs[0], "beam_only", table=model.table)
    lists = predict_future(model, window, 3)
    assert len(lists) == 3 and all(l.shape == (3,) for l in lists)
    full = predict_future(model, window, 32)
    probs = model.head_proba(window[None])
    for h in range(3):
        assert sorted(full[h]) == list(range(32))
        want = sorted(range(32), key=lambda i: (-probs[h][0][i], i))
        assert list(full[h]) == want
    with pytest.raises(ValueError):
        predict_future(model, window[:7], 3)
    with pytest.raises(ValueError):
        predict_future(model, window, 0)


def test_schedule_fractions_and_validation():
    assert RolloutSchedule.initial_only().training_fraction == pytest.approx(0.16)
    inter = RolloutSchedule.intermittent()
    assert inter.training_fraction == pytest.approx(0.48)
    assert inter.gt_steps == frozenset(range(1, 9)) | frozenset(range(13, 21)) \
        | frozenset(range(33, 41))
    assert RolloutSchedule.every_step().training_fraction == 1.0
    parsed = RolloutSchedule.from_ranges(["1-8", "13-20", "33-40"])
    assert parsed == inter
    assert RolloutSchedule.from_ranges(["1-8", "10"]).gt_steps == \
        frozenset(range(1, 9)) | {10}
    with pytest.raises(ValueError):
        RolloutSchedule(frozenset(range(2, 9)))  # step 1 missing
    with pytest.raises(ValueError):
        RolloutSchedule(frozenset(range(1, 9)) | {59})
    with pytest.raises(ValueError):
        RolloutSchedule.from_ranges(["8-1"])


def test_schedule_provenance_strings():
    init = RolloutSchedule.initial_only()
    assert init.provenance(1) == "gggggggg"
    assert init.provenance(2) == "gggggggp"
    assert init.provenance(9) == "pppppppp"
    inter = RolloutSchedule.intermittent()
    assert inter.provenance(13) == "gggggggg"
    assert inter.provenance(21) == "pppppppp"


def segments_from(samples, total=58):
    by_flight = {}
    for s in samples:
        by_flight.setdefault(s.flight_id, []).append(s)
    return [sorted(v, key=lambda s: s.t)[:total] for v in by_flight.values()
            if len(v) >= total]


def test_rollout_saturated_equals_teacher_forced(ramp_tracker):
    model, _, _ = ramp_tracker
    samples = ramp_samples(num_flights=5, length=58, seed=3)
    segs = segments_from(samples)
    result = recursive_rollout(model, segs, RolloutSchedule.every_step(), k=3)
    assert result.rankings.shape == (5, 50, 3)
    for j, seg in enumerate(segs):
        for i in (1, 17, 50):
            window = model.table.lookup(
                [s.label for s in seg[i - 1:i + 7]])
            want = predict_future(model, window, 3)[0]
            assert np.array_equal(result.rankings[j, i - 1], want)
    assert all(p == "gggggggg" for p in result.provenance)


def test_rollout_perfect_model_survives_feedback(ramp_tracker):
    # ramps are learned exactly, so fed-back predictions equal the truth
    model, _, _ = ramp_tracker
    samples = ramp_samples(num_flights=4, length=40, seed=5)
    segs = segments_from(samples, total=38)
    sched = RolloutSchedule.initial_only(horizon=30)
    result = recursive_rollout(model, segs, sched, k=3)
    assert result.per_step_topk(1).min() == 100.0
    assert result.provenance[0] == "gggggggg"
    assert result.provenance[1] == "gggggggp"
    assert all(p == "pppppppp" for p in result.provenance[8:])


def test_rollout_validation(ramp_tracker):
    model, _, _ = ramp_tracker
    samples = ramp_samples(num_flights=2, length=30, seed=6)
    with pytest.raises(ValueError):
        recursive_rollout(model, segments_from(samples, total=30),
                          RolloutSchedule.initial_only(), k=3)
    pos_model = train_tracker(
        ramp_sequences(num_flights=4, length=12),
        TrackerConfig("position", hidden=8, layers=1, batch=64, epochs=1),
        seed=0)
    segs = segments_from(ramp_samples(num_flights=2, length=58, seed=7))
    with pytest.raises(ValueError):
        recursive_rollout(pos_model, segs, RolloutSchedule.initial_only(), k=3)


def test_sensed_rollout_position_and_vision():
    seqs = ramp_sequences(num_flights=12, length=20, seed=8)
    config = TrackerConfig("position", hidden=32, layers=2, batch=32,
                           epochs=300, base_lr=1e-2, decay_epochs=(210, 261),
                           dropout=0.0)
    model = train_tracker(seqs, config, seed=2)
    samples = ramp_samples(num_flights=3, length=58, seed=9)
    segs = segments_from(samples)
    result, kept = sensed_rollout(model, segs, k=3)
    assert kept == [0, 1, 2]
    assert result.rankings.shape == (3, 50, 3)
    assert all(p == "ssssssss" for p in result.provenance)
    assert result.per_step_topk(1).mean() > 80.0

    vis_config = TrackerConfig("vision", hidden=16, layers=1, batch=128,
                               epochs=2)
    vis_model = train_tracker(seqs, vis_config, seed=3)
    blind = [make_sample(9, t, 1, visible=(t != 30)) for t in range(58)]
    result2, kept2 = sensed_rollout(vis_model, segs[:2] + [blind], k=3)
    assert kept2 == [0, 1]
    with pytest.raises(ValueError):
        sensed_rollout(model, segs[:1], k=0)


def test_rollout_csv_round_trip(tmp_path, ramp_tracker):
    model, _, _ = ramp_tracker
    samples = ramp_samples(num_flights=2, length=58, seed=10)
    segs = segments_from(samples)
    result = recursive_rollout(model, segs, RolloutSchedule.intermittent(), k=3)
    path = tmp_path / "rollout.csv"
    save_rollout_csv(result, path)
    lines = path.read_text().strip().split("\n")
    assert lines[0] == ROLLOUT_CSV_HEADER
    assert len(lines) == 1 + 2 * 50
    first = lines[1].split(",")
    assert first[0] == "1" and first[5] == "gggggggg"
    assert int(first[1]) == segs[0][8].label


def test_joint_monotone_on_tracker_outputs(ramp_tracker):
    from dronebeam.metrics import joint_topk_accuracy

    model, seqs, config = ramp_tracker
    X, Y, _ = assemble_sequence_tensor(seqs, config, table=model.table)
    probs = model.head_proba(X)
    rankings = [rank_beams(p) for p in probs]
    truths = [Y[:, h] for h in range(3)]
    joints = [joint_topk_accuracy(rankings, truths, h, 2) for h in (1, 2, 3)]
    assert joints[0] >= joints[1] >= joints[2]
