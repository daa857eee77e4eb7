"""One-config experiment orchestration: generate, train, evaluate, rollout, report.

A single JSON config drives the full pipeline.  Defaults reproduce the two
training tables (MLP predictors: batch 32, LR 1e-2, decay 20/40/80, 100
epochs; GRU trackers: batch 512, hidden 128 x 2, dropout 0.5, decay 40/120,
200 epochs) and the default corpus of 20 preset circuits totalling 12,005
visible samples.  Every block carries its own seed, every artifact embeds the
config hash and the seeds that produced it, and report refuses to merge
artifacts whose hashes disagree.
"""

import copy
import hashlib
import json
import os
from datetime import datetime, timezone

import numpy as np

from . import dataset as ds
from . import metrics as mt
from .predict import (
    PredictorConfig,
    assemble_matrix,
    rank_beams,
    train_predictor,
    training_fraction_sweep,
)
from .scenario import (
    ArenaModel,
    CameraModel,
    GpsModel,
    MAX_SPEED,
    ScenarioConfig,
    preset_flights,
    synthesize_dataset,
)
from .track import (
    RolloutSchedule,
    TrackerConfig,
    assemble_sequence_tensor,
    build_beam_embedding_table,
    recursive_rollout,
    save_rollout_csv,
    sensed_rollout,
    train_tracker,
)


class ConfigError(Exception):
    """Invalid experiment config; message names the offending field."""


class DependencyError(Exception):
    """Missing or mismatched upstream artifact; message names the fix."""


PREDICTOR_MODALITIES = ("position", "position_hd", "vision")
TRACKER_MODALITIES = ("beam_only", "position", "vision")

DEFAULTS = {
    "out_dir": "runs/default",
    "scenario": {
        "seed": 0,
        "num_flights": 20,
        "total_samples": 12005,
        "gps_noise_std": 0.0,
        "ground_reflection": False,
        "step_period": 0.2,
        "num_antennas": 16,
        "num_beams": 64,
        "lobe_exponent": 4.0,
        "arena_east": 205.0,
        "arena_north": 152.0,
        "camera_fov_deg": 150.0,
        "bs_height": 1.5,
        "max_speed": MAX_SPEED,
    },
    "dataset": {
        "seed": 0,
        "split_ratio": 0.7,
        "window": 8,
        "horizon": 3,
    },
    "predictors": {
        "seed": 0,
        "modalities": list(PREDICTOR_MODALITIES),
        "classes": 32,
        "hidden": [512, 512],
        "batch": 32,
        "epochs": 100,
        "base_lr": 1e-2,
        "decay_epochs": [20, 40, 80],
        "lr_factor": 0.1,
    },
    "trackers": {
        "seed": 0,
        "modalities": list(TRACKER_MODALITIES),
        "classes": 32,
        "embed_dim": 20,
        "hidden": 128,
        "layers": 2,
        "dropout": 0.5,
        "batch": 512,
        "epochs": 200,
        "base_lr_beam_only": 1e-3,
        "base_lr_position": 1e-2,
        "base_lr_vision": 1e-2,
        "decay_epochs": [40, 120],
        "lr_factor": 0.1,
    },
    "eval": {
        "k_list": [1, 2, 3, 5],
        "joint_k": 3,
        "bands": [1, 2, 3],
        "strata": True,
        "fraction_sweep": [],
        "fraction_modality": "position_hd",
    },
    "rollout": {
        "horizon": 50,
        "k": 3,
        "schedules": {
            "initial_only": ["1-8"],
            "intermittent": ["1-8", "13-20", "33-40"],
            "every_step": ["1-58"],
        },
        "max_segments": 0,
    },
}

_SEEDED_BLOCKS = ("scenario", "dataset", "predictors", "trackers")


def _merge(base, override, path=""):
    out = copy.deepcopy(base)
    for key, val in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"{where}: unknown config field")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"{where}: expected an object")
            out[key] = _merge(base[key], val, where)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _require(cond, field, message):
    if not cond:
        raise ConfigError(f"{field}: {message}")


def _validate(cfg):
    sc = cfg["scenario"]
    _require(isinstance(sc["num_flights"], int) and sc["num_flights"] >= 1,
             "scenario.num_flights", "need a positive integer")
    _require(sc["total_samples"] >= sc["num_flights"] * 12,
             "scenario.total_samples", "too few samples per flight")
    _require(sc["gps_noise_std"] >= 0, "scenario.gps_noise_std",
             "must be non-negative")
    _require(sc["num_beams"] >= 2 and sc["num_beams"] % 2 == 0,
             "scenario.num_beams",
             "must be even for the alternate-beam downsample")
    _require(sc["num_antennas"] >= 1, "scenario.num_antennas",
             "need a positive antenna count")
    da = cfg["dataset"]
    _require(0.0 < da["split_ratio"] < 1.0, "dataset.split_ratio",
             "must lie strictly between 0 and 1")
    _require(da["window"] >= 1 and da["horizon"] >= 1, "dataset.window",
             "window and horizon must be positive")
    pr = cfg["predictors"]
    for m in pr["modalities"]:
        _require(m in PREDICTOR_MODALITIES, "predictors.modalities",
                 f"unknown modality {m!r}")
    _require(pr["epochs"] >= 1 and pr["batch"] >= 1, "predictors.epochs",
             "epochs and batch must be positive")
    tr = cfg["trackers"]
    for m in tr["modalities"]:
        _require(m in TRACKER_MODALITIES, "trackers.modalities",
                 f"unknown modality {m!r}")
    _require(tr["epochs"] >= 1 and tr["batch"] >= 1, "trackers.epochs",
             "epochs and batch must be positive")
    ev = cfg["eval"]
    _require(all(1 <= k <= pr["classes"] for k in ev["k_list"]),
             "eval.k_list", "k values must lie in [1, classes]")
    for f in ev["fraction_sweep"]:
        _require(0.0 < f <= 1.0, "eval.fraction_sweep",
                 "fractions must lie in (0, 1]")
    ro = cfg["rollout"]
    _require(ro["horizon"] >= 1, "rollout.horizon", "must be positive")
    _require(1 <= ro["k"] <= pr["classes"], "rollout.k",
             "must lie in [1, classes]")
    for name, ranges in ro["schedules"].items():
        try:
            RolloutSchedule.from_ranges(ranges, horizon=ro["horizon"],
                                        window=da["window"])
        except ValueError as exc:
            raise ConfigError(f"rollout.schedules.{name}: {exc}") from None


class ExperimentConfig:
    def __init__(self, raw):
        self.raw = raw
        _validate(raw)

    @classmethod
    def from_dict(cls, user=None, out_dir=None, seed_override=None):
        try:
            merged = _merge(DEFAULTS, user or {})
        except AttributeError:
            raise ConfigError("config root: expected a JSON object") from None
        if out_dir is not None:
            merged["out_dir"] = out_dir
        if seed_override is not None:
            for block in _SEEDED_BLOCKS:
                merged[block]["seed"] = int(seed_override)
        return cls(merged)

    @classmethod
    def load(cls, path=None, out_dir=None, seed_override=None):
        user = {}
        if path is not None:
            try:
                with open(path, encoding="utf-8") as fh:
                    user = json.load(fh)
            except FileNotFoundError:
                raise ConfigError(f"config file not found: {path}") from None
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config is not valid JSON: {exc}") from None
        return cls.from_dict(user, out_dir=out_dir, seed_override=seed_override)

    @property
    def out_dir(self):
        return self.raw["out_dir"]

    @property
    def config_hash(self):
        hashed = {k: v for k, v in self.raw.items() if k != "out_dir"}
        blob = json.dumps(hashed, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    @property
    def seeds(self):
        return {block: self.raw[block]["seed"] for block in _SEEDED_BLOCKS}

    def scenario_config(self):
        sc = self.raw["scenario"]
        arena = ArenaModel(east=sc["arena_east"], north=sc["arena_north"])
        camera = CameraModel.from_horizontal_fov(sc["camera_fov_deg"])
        flights = preset_flights(
            sc["num_flights"], sc["total_samples"], sc["seed"],
            arena=arena, camera=camera, max_speed=sc["max_speed"])
        return ScenarioConfig(
            flights=flights,
            arena=arena,
            camera=camera,
            gps=GpsModel(noise_std=sc["gps_noise_std"], seed=0),
            num_antennas=sc["num_antennas"],
            num_beams=sc["num_beams"],
            step_period=sc["step_period"],
            max_speed=sc["max_speed"],
            lobe_exponent=sc["lobe_exponent"],
            bs_height=sc["bs_height"],
            ground_reflection=sc["ground_reflection"],
            seed=sc["seed"],
        )

    def predictor_config(self, modality):
        pr = self.raw["predictors"]
        return PredictorConfig(
            modality=modality,
            classes=pr["classes"],
            hidden=tuple(pr["hidden"]),
            batch=pr["batch"],
            epochs=pr["epochs"],
            base_lr=pr["base_lr"],
            decay_epochs=tuple(pr["decay_epochs"]),
            lr_factor=pr["lr_factor"],
        )

    def tracker_config(self, modality):
        tr = self.raw["trackers"]
        return TrackerConfig(
            modality=modality,
            window=self.raw["dataset"]["window"],
            horizon=self.raw["dataset"]["horizon"],
            classes=tr["classes"],
            embed_dim=tr["embed_dim"],
            hidden=tr["hidden"],
            layers=tr["layers"],
            dropout=tr["dropout"],
            batch=tr["batch"],
            epochs=tr["epochs"],
            base_lr=tr[f"base_lr_{modality}"],
            decay_epochs=tuple(tr["decay_epochs"]),
            lr_factor=tr["lr_factor"],
        )

    def schedules(self):
        ro = self.raw["rollout"]
        return {name: RolloutSchedule.from_ranges(
                    ranges, horizon=ro["horizon"],
                    window=self.raw["dataset"]["window"])
                for name, ranges in ro["schedules"].items()}


def _now():
    return datetime.now(timezone.utc).isoformat()


def _stamp(cfg):
    return {"config_hash": cfg.config_hash, "seeds": cfg.seeds}


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _read_json(path, needed, cfg=None):
    """Load an artifact, translating absence into a dependency error."""
    if not os.path.exists(path):
        raise DependencyError(
            f"missing artifact {path}; run the {needed!r} subcommand first")
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if cfg is not None and payload.get("config_hash") != cfg.config_hash:
        raise DependencyError(
            f"artifact {path} was produced under config hash "
            f"{payload.get('config_hash')!r}, current config hashes to "
            f"{cfg.config_hash!r}; rerun {needed!r}")
    return payload


def _say(quiet, msg):
    if not quiet:
        print(msg)


def _paths(cfg):
    out = cfg.out_dir
    return {
        "data": os.path.join(out, "data"),
        "models": os.path.join(out, "models"),
        "eval": os.path.join(out, "eval"),
        "rollout": os.path.join(out, "rollout"),
        "report": os.path.join(out, "report"),
    }


def cmd_generate(cfg, quiet=False):
    paths = _paths(cfg)
    os.makedirs(paths["data"], exist_ok=True)
    da = cfg.raw["dataset"]
    _say(quiet, "synthesizing flights...")
    corpus = synthesize_dataset(cfg.scenario_config())
    train, test = ds.split_train_test(corpus, da["split_ratio"],
                                      (da["seed"], 3))
    fl_train, fl_test = ds.split_by_flight(corpus, da["split_ratio"],
                                           (da["seed"], 11))
    seq_train = ds.build_sequences(fl_train, da["window"], da["horizon"])
    seq_test = ds.build_sequences(fl_test, da["window"], da["horizon"])
    ds.save_dataset(os.path.join(paths["data"], "samples_train.csv"), train)
    ds.save_dataset(os.path.join(paths["data"], "samples_test.csv"), test)
    ds.save_dataset(os.path.join(paths["data"], "flights_train.csv"), fl_train)
    ds.save_dataset(os.path.join(paths["data"], "flights_test.csv"), fl_test)
    ds.save_sequences(os.path.join(paths["data"], "sequences_train.csv"),
                      seq_train)
    ds.save_sequences(os.path.join(paths["data"], "sequences_test.csv"),
                      seq_test)
    meta = {
        **_stamp(cfg),
        "generated_at": _now(),
        "counts": {
            "total": len(corpus),
            "train": len(train),
            "test": len(test),
            "flights_train": len({s.flight_id for s in fl_train}),
            "flights_test": len({s.flight_id for s in fl_test}),
            "sequences_train": len(seq_train),
            "sequences_test": len(seq_test),
        },
        "histograms": {
            "train": ds.label_histogram(train).tolist(),
            "test": ds.label_histogram(test).tolist(),
        },
    }
    _write_json(os.path.join(paths["data"], "meta.json"), meta)
    _say(quiet, f"generated {len(corpus)} samples "
                f"({len(train)} train / {len(test)} test), "
                f"{len(seq_train)}/{len(seq_test)} sequences")
    return meta


def _load_data(cfg, what=("samples", "flights", "sequences")):
    paths = _paths(cfg)
    meta = _read_json(os.path.join(paths["data"], "meta.json"), "generate",
                      cfg)
    out = {"meta": meta}
    d = paths["data"]
    if "samples" in what:
        out["train"] = ds.load_dataset(os.path.join(d, "samples_train.csv"))
        out["test"] = ds.load_dataset(os.path.join(d, "samples_test.csv"))
    if "flights" in what or "sequences" in what:
        out["fl_train"] = ds.load_dataset(os.path.join(d, "flights_train.csv"))
        out["fl_test"] = ds.load_dataset(os.path.join(d, "flights_test.csv"))
    if "sequences" in what:
        da = cfg.raw["dataset"]
        out["seq_train"] = ds.load_sequences(
            os.path.join(d, "sequences_train.csv"), out["fl_train"],
            window=da["window"], horizon=da["horizon"])
        out["seq_test"] = ds.load_sequences(
            os.path.join(d, "sequences_test.csv"), out["fl_test"],
            window=da["window"], horizon=da["horizon"])
    return out


def _save_model(path_base, params, meta):
    np.savez(path_base + ".npz",
             **{f"param_{i}": p for i, p in enumerate(params)})
    _write_json(path_base + ".json", meta)


def _load_params_into(path_base, params, needed, cfg):
    meta = _read_json(path_base + ".json", needed, cfg)
    if not os.path.exists(path_base + ".npz"):
        raise DependencyError(
            f"missing checkpoint {path_base}.npz; run {needed!r} first")
    with np.load(path_base + ".npz") as blob:
        if len(blob.files) != len(params):
            raise DependencyError(
                f"checkpoint {path_base}.npz does not match the configured "
                f"architecture; rerun {needed!r}")
        for i, p in enumerate(params):
            p[...] = blob[f"param_{i}"]
    return meta


def cmd_train(cfg, quiet=False):
    paths = _paths(cfg)
    os.makedirs(paths["models"], exist_ok=True)
    data = _load_data(cfg)
    seed_p = cfg.raw["predictors"]["seed"]
    seed_t = cfg.raw["trackers"]["seed"]
    trained = []
    for modality in cfg.raw["predictors"]["modalities"]:
        _say(quiet, f"training predictor [{modality}]...")
        model = train_predictor(data["train"], cfg.predictor_config(modality),
                                seed_p)
        base = os.path.join(paths["models"], f"predictor_{modality}")
        _save_model(base, model.net.params, {
            **_stamp(cfg),
            "kind": "predictor",
            "modality": modality,
            "seed": seed_p,
            "norm": model.norm.to_dict(),
            "final_loss": model.train_log[-1]["loss"],
        })
        _write_json(base + ".log.json",
                    {**_stamp(cfg), "log": model.train_log})
        trained.append(f"predictor_{modality}")
    for modality in cfg.raw["trackers"]["modalities"]:
        _say(quiet, f"training tracker [{modality}]...")
        model = train_tracker(data["seq_train"], cfg.tracker_config(modality),
                              seed_t)
        base = os.path.join(paths["models"], f"tracker_{modality}")
        meta = {
            **_stamp(cfg),
            "kind": "tracker",
            "modality": modality,
            "seed": seed_t,
            "final_loss": model.train_log[-1]["loss"],
        }
        if model.norm is not None:
            meta["norm"] = model.norm.to_dict()
        _save_model(base, model.net.params, meta)
        _write_json(base + ".log.json",
                    {**_stamp(cfg), "log": model.train_log})
        trained.append(f"tracker_{modality}")
    _say(quiet, f"saved {len(trained)} checkpoints")
    return trained


def load_predictor(cfg, modality):
    from .predict import PredictorModel
    from .nn import MlpClassifier

    config = cfg.predictor_config(modality)
    net = MlpClassifier(config.input_dim, config.hidden, config.classes,
                        seed=0)
    base = os.path.join(_paths(cfg)["models"], f"predictor_{modality}")
    meta = _load_params_into(base, net.params, "train", cfg)
    norm = ds.NormalizationSpec.from_dict(meta["norm"])
    return PredictorModel(net, config, norm, [])


def load_tracker(cfg, modality):
    from .track import TrackerModel
    from .nn import GruClassifier

    config = cfg.tracker_config(modality)
    net = GruClassifier(config.input_dim, config.hidden, config.layers,
                        config.classes, heads=config.horizon,
                        dropout=config.dropout, seed=0)
    base = os.path.join(_paths(cfg)["models"], f"tracker_{modality}")
    meta = _load_params_into(base, net.params, "train", cfg)
    table = None
    if modality == "beam_only":
        table = build_beam_embedding_table(
            config.classes, config.embed_dim,
            seed=(cfg.raw["trackers"]["seed"], 5))
    norm = (ds.NormalizationSpec.from_dict(meta["norm"])
            if "norm" in meta else None)
    return TrackerModel(net, config, table, norm, [])


def cmd_evaluate(cfg, quiet=False):
    paths = _paths(cfg)
    os.makedirs(paths["eval"], exist_ok=True)
    data = _load_data(cfg)
    ev = cfg.raw["eval"]
    ks = list(ev["k_list"])
    report = mt.EvalReport(metadata={
        **_stamp(cfg),
        "generated_at": _now(),
        "train_samples": data["meta"]["counts"]["train"],
        "test_samples": data["meta"]["counts"]["test"],
    })
    report.histograms = data["meta"]["histograms"]
    for modality in cfg.raw["predictors"]["modalities"]:
        _say(quiet, f"evaluating predictor [{modality}]...")
        model = load_predictor(cfg, modality)
        X, y, kept = assemble_matrix(data["test"], modality, model.norm)
        ranks = rank_beams(model.predict_proba(X))
        report.topk[f"predictor_{modality}"] = {
            k: mt.topk_accuracy(ranks[:, :k], y, k) for k in ks}
        kept_samples = [data["test"][i] for i in kept]
        p32 = np.array([s.power32 for s in kept_samples])
        rows = np.arange(len(kept_samples))
        pred_power = p32[rows, ranks[:, 0]]
        opt_power = p32[rows, y]
        report.r2[f"predictor_{modality}_identity"] = mt.r2_power_score(
            pred_power, opt_power)
        report.r2[f"predictor_{modality}_fitted"] = mt.r2_power_score_fitted(
            pred_power, opt_power)
        conf = mt.confusion_matrix(y, ranks[:, 0],
                                   cfg.raw["predictors"]["classes"])
        report.band_mass[f"predictor_{modality}"] = {
            b: mt.neighbor_band_mass(conf, b) for b in ev["bands"]}
        mt.save_matrix_csv(conf, os.path.join(
            paths["eval"], f"confusion_{modality}.csv"))
        if modality == "position_hd":
            report.confusion = conf
        if ev["strata"]:
            heights = [s.height for s in kept_samples]
            speeds = [s.speed for s in kept_samples]
            report.strata[f"height_{modality}"] = mt.height_stratified(
                heights, ranks, y, ks=tuple(ks))
            report.strata[f"speed_{modality}"] = mt.speed_stratified(
                speeds, ranks, y, ks=tuple(ks))
    joint_k = ev["joint_k"]
    for modality in cfg.raw["trackers"]["modalities"]:
        _say(quiet, f"evaluating tracker [{modality}]...")
        model = load_tracker(cfg, modality)
        X, Y, _ = assemble_sequence_tensor(
            data["seq_test"], model.config, table=model.table,
            norm=model.norm)
        if X.shape[0] == 0:
            continue
        probs = model.head_proba(X)
        rankings = [rank_beams(p) for p in probs]
        truths = [Y[:, h] for h in range(model.config.horizon)]
        for h in range(model.config.horizon):
            report.topk[f"tracker_{modality}_future{h + 1}"] = {
                k: mt.topk_accuracy(rankings[h][:, :k], truths[h], k)
                for k in ks}
        report.joint[f"tracker_{modality}"] = {
            h: mt.joint_topk_accuracy(rankings, truths, h, joint_k)
            for h in range(1, model.config.horizon + 1)}
    if ev["fraction_sweep"]:
        _say(quiet, "running training-fraction sweep...")
        rows = training_fraction_sweep(
            data["train"], data["test"], ev["fraction_sweep"],
            cfg.predictor_config(ev["fraction_modality"]),
            cfg.raw["predictors"]["seed"])
        report.metadata["fraction_sweep"] = rows
    payload = {**_stamp(cfg), **report.to_json_dict()}
    _write_json(os.path.join(paths["eval"], "report.json"), payload)
    with open(os.path.join(paths["eval"], "report.txt"), "w",
              encoding="utf-8") as fh:
        fh.write(report.to_text())
    _say(quiet, "wrote evaluation report")
    return payload


def _segments(samples, length, max_segments=0):
    """Disjoint consecutive-step chunks per flight, longest flights first kept."""
    by_flight = {}
    for s in samples:
        by_flight.setdefault(s.flight_id, []).append(s)
    segs = []
    for fid in sorted(by_flight):
        flight = sorted(by_flight[fid], key=lambda s: s.t)
        runs = [[flight[0]]]
        for s in flight[1:]:
            if s.t == runs[-1][-1].t + 1:
                runs[-1].append(s)
            else:
                runs.append([s])
        for run in runs:
            for i in range(0, len(run) - length + 1, length):
                segs.append(run[i : i + length])
    if max_segments:
        segs = segs[:max_segments]
    return segs


def cmd_rollout(cfg, quiet=False):
    paths = _paths(cfg)
    os.makedirs(paths["rollout"], exist_ok=True)
    data = _load_data(cfg, what=("flights",))
    ro = cfg.raw["rollout"]
    window = cfg.raw["dataset"]["window"]
    length = window + ro["horizon"]
    segs = _segments(data["fl_test"], length, ro["max_segments"])
    if not segs:
        raise DependencyError(
            f"no test-flight segment reaches {length} consecutive steps; "
            "regenerate with longer flights")
    _say(quiet, f"rolling out over {len(segs)} segments of {length} steps")
    summary = {
        **_stamp(cfg),
        "generated_at": _now(),
        "num_segments": len(segs),
        "horizon": ro["horizon"],
        "k": ro["k"],
        "schedules": {},
        "sensed": {},
    }
    tradeoff_rows = []
    beam_model = load_tracker(cfg, "beam_only")
    for name, schedule in sorted(cfg.schedules().items()):
        result = recursive_rollout(beam_model, segs, schedule, k=ro["k"])
        curve = result.per_step_topk(ro["k"])
        summary["schedules"][name] = {
            "training_fraction": schedule.training_fraction,
            "per_step_topk": curve.tolist(),
            "overall_topk": result.overall_topk(ro["k"]),
        }
        save_rollout_csv(result, os.path.join(paths["rollout"],
                                              f"rollout_{name}.csv"))
        mt.save_matrix_csv(
            np.column_stack([np.arange(1, ro["horizon"] + 1), curve]),
            os.path.join(paths["rollout"], f"curve_{name}.csv"),
            header=["step", f"top{ro['k']}_accuracy"])
        tradeoff_rows.append((f"beam_only_{name}",
                              schedule.training_fraction,
                              {ro["k"]: result.overall_topk(ro["k"])}))
    for modality in ("position", "vision"):
        if modality not in cfg.raw["trackers"]["modalities"]:
            continue
        model = load_tracker(cfg, modality)
        try:
            result, kept = sensed_rollout(model, segs, k=ro["k"],
                                          horizon=ro["horizon"])
        except ValueError:
            continue
        curve = result.per_step_topk(ro["k"])
        summary["sensed"][modality] = {
            "segments_used": len(kept),
            "per_step_topk": curve.tolist(),
            "overall_topk": result.overall_topk(ro["k"]),
        }
        mt.save_matrix_csv(
            np.column_stack([np.arange(1, ro["horizon"] + 1), curve]),
            os.path.join(paths["rollout"], f"curve_{modality}.csv"),
            header=["step", f"top{ro['k']}_accuracy"])
        tradeoff_rows.append((modality, 0.0,
                              {ro["k"]: result.overall_topk(ro["k"])}))
    summary["tradeoff"] = mt.resource_tradeoff(tradeoff_rows)
    _write_json(os.path.join(paths["rollout"], "rollout.json"), summary)
    _say(quiet, "wrote rollout study")
    return summary


def cmd_report(cfg, quiet=False):
    paths = _paths(cfg)
    os.makedirs(paths["report"], exist_ok=True)
    data_meta = _read_json(os.path.join(paths["data"], "meta.json"),
                           "generate", cfg)
    eval_payload = _read_json(os.path.join(paths["eval"], "report.json"),
                              "evaluate", cfg)
    rollout_payload = _read_json(os.path.join(paths["rollout"], "rollout.json"),
                                 "rollout", cfg)
    summary = {
        "config_hash": cfg.config_hash,
        "seeds": cfg.seeds,
        "generated_at": _now(),
        "dataset": {k: v for k, v in data_meta.items()
                    if k not in ("generated_at",)},
        "evaluation": _strip_timestamps(eval_payload),
        "rollout": _strip_timestamps(rollout_payload),
    }
    _write_json(os.path.join(paths["report"], "summary.json"), summary)
    lines = [
        "experiment summary",
        f"  config hash: {cfg.config_hash}",
        f"  seeds: {json.dumps(cfg.seeds, sort_keys=True)}",
        f"  samples: {data_meta['counts']['total']} total, "
        f"{data_meta['counts']['train']} train, "
        f"{data_meta['counts']['test']} test",
        f"  sequences: {data_meta['counts']['sequences_train']} train, "
        f"{data_meta['counts']['sequences_test']} test",
        "",
    ]
    for name, accs in sorted(eval_payload.get("topk", {}).items()):
        cells = "  ".join(f"top-{k}: {accs[k]:6.2f}"
                          for k in sorted(accs, key=int))
        lines.append(f"  {name:<28s} {cells}")
    lines.append("")
    for row in rollout_payload.get("tradeoff", []):
        cells = "  ".join(f"top-{k}: {v:6.2f}"
                          for k, v in sorted(row["topk"].items()))
        lines.append(f"  {row['approach']:<28s} "
                     f"{row['beam_training_pct']:6.2f}%  {cells}")
    with open(os.path.join(paths["report"], "summary.txt"), "w",
              encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    _say(quiet, f"report written to {paths['report']}")
    return summary


def _strip_timestamps(payload):
    out = copy.deepcopy(payload)
    out.pop("generated_at", None)
    if isinstance(out.get("metadata"), dict):
        out["metadata"].pop("generated_at", None)
    return out


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "rollout": cmd_rollout,
    "report": cmd_report,
}

PIPELINE = ("generate", "train", "evaluate", "rollout", "report")


def run(command, cfg, quiet=False):
    if command == "all":
        for step in PIPELINE:
            COMMANDS[step](cfg, quiet=quiet)
        return
    if command not in COMMANDS:
        raise ConfigError(f"unknown subcommand {command!r}")
    COMMANDS[command](cfg, quiet=quiet)
