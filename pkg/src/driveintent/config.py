"""YAML run configuration: scenario grid, sensor settings, driver profiles,
and service options, with validation that names the offending section.

The resolved configuration carries a short content digest that is stamped
into every trace so a dataset can always be traced back to the exact
settings that produced it.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional

import yaml

from .domain import Lane, LaneGeometry
from .perception import SensorConfig
from .simulation import GridConfig, GridVehicleTemplate, TrafficPattern


class ConfigError(ValueError):
    pass


@dataclass
class TrainSettings:
    cross_validate: bool = False
    cv_folds: int = 5
    rf_subsample: int = 30000  # deterministic row cap for forest training
    lr_subsample: int = 250000  # row cap for logistic regression; 0 = no cap
    defaults: dict = field(
        default_factory=lambda: {
            "svm": {"lam": 0.1, "epochs": 16},
            "rf": {"n_trees": 50, "max_depth": 12, "min_leaf": 5},
            "lr": {"l2": 0.01, "max_iter": 300},
        }
    )


@dataclass
class ServeSettings:
    host: str = "127.0.0.1"
    port: int = 8700
    decimation: int = 3  # wire tick every N simulation ticks
    scenario: Optional[str] = None  # default scenario id; None = first in grid


@dataclass
class AppConfig:
    seed: int
    geometry: LaneGeometry
    sensor: SensorConfig
    grid: GridConfig
    profile_count: int
    label_noise: bool
    train_fraction: float
    train: TrainSettings
    serve: ServeSettings
    digest: str = ""

    def resolved_dict(self) -> dict:
        """Plain-data view of every resolved setting (for manifests/digest)."""
        return {
            "seed": self.seed,
            "geometry": {
                "lane_width": self.geometry.lane_width,
                "right_center_y": self.geometry.right_center_y,
                "vehicle_length": self.geometry.vehicle_length,
                "vehicle_width": self.geometry.vehicle_width,
            },
            "sensor": {
                "detection_radius": self.sensor.detection_radius,
                "pos_noise_std": self.sensor.pos_noise_std,
                "vel_noise_std": self.sensor.vel_noise_std,
                "time_metric_cap": self.sensor.time_metric_cap,
                "denom_epsilon": self.sensor.denom_epsilon,
                "include_ego_heading": self.sensor.include_ego_heading,
            },
            "grid": {
                "ego_speeds": list(self.grid.ego_speeds),
                "ego_lanes": [
                    "right" if l is Lane.RIGHT else "left" for l in self.grid.ego_lanes
                ],
                "episode_duration": self.grid.episode_duration,
                "replicates": self.grid.replicates,
                "patterns": [
                    {
                        "name": p.name,
                        "duration": p.duration,
                        "vehicles": [
                            {
                                "gap": v.gap,
                                "lane": v.lane,
                                "speed": list(v.speed),
                                "final_speed": list(v.final_speed),
                                "ramp_start": v.ramp_start,
                                "ramp_duration": v.ramp_duration,
                            }
                            for v in p.vehicles
                        ],
                    }
                    for p in self.grid.patterns
                ],
            },
            "profiles": {"count": self.profile_count},
            "label_noise": self.label_noise,
            "split": {"train_fraction": self.train_fraction},
            "train": {
                "cross_validate": self.train.cross_validate,
                "cv_folds": self.train.cv_folds,
                "rf_subsample": self.train.rf_subsample,
                "lr_subsample": self.train.lr_subsample,
                "defaults": self.train.defaults,
            },
            "serve": {
                "host": self.serve.host,
                "port": self.serve.port,
                "decimation": self.serve.decimation,
                "scenario": self.serve.scenario,
            },
        }


def _require(doc: dict, section: str):
    if section not in doc:
        raise ConfigError(f"config is missing required section: {section!r}")
    return doc[section]


def _parse_speed_ref(raw, context: str) -> tuple[str, float]:
    """Speed syntax: plain number = absolute; {ego: off} = ego-relative."""
    if isinstance(raw, (int, float)):
        return ("abs", float(raw))
    if isinstance(raw, dict) and len(raw) == 1:
        ((kind, value),) = raw.items()
        if kind in ("abs", "ego"):
            return (kind, float(value))
    raise ConfigError(f"{context}: bad speed reference {raw!r}")


def _parse_lane(raw, context: str) -> Lane:
    if raw == "right":
        return Lane.RIGHT
    if raw == "left":
        return Lane.LEFT
    raise ConfigError(f"{context}: lane must be 'right' or 'left', got {raw!r}")


def _parse_grid(doc: dict) -> GridConfig:
    raw = _require(doc, "grid")
    for key in ("ego_speeds", "ego_lanes", "patterns"):
        if key not in raw:
            raise ConfigError(f"config section 'grid' is missing key: {key!r}")
    patterns = []
    for i, p in enumerate(raw["patterns"]):
        ctx = f"grid.patterns[{i}]"
        if "name" not in p or "vehicles" not in p:
            raise ConfigError(f"{ctx}: each pattern needs 'name' and 'vehicles'")
        vehicles = []
        for j, v in enumerate(p["vehicles"]):
            vctx = f"{ctx}.vehicles[{j}]"
            if "gap" not in v or "lane" not in v or "speed" not in v:
                raise ConfigError(f"{vctx}: needs 'gap', 'lane' and 'speed'")
            if v["lane"] not in ("same", "other", "right", "left"):
                raise ConfigError(f"{vctx}: bad lane reference {v['lane']!r}")
            speed = _parse_speed_ref(v["speed"], vctx)
            final = (
                _parse_speed_ref(v["final_speed"], vctx)
                if "final_speed" in v
                else speed
            )
            vehicles.append(
                GridVehicleTemplate(
                    gap=float(v["gap"]),
                    lane=v["lane"],
                    speed=speed,
                    final_speed=final,
                    ramp_start=float(v.get("ramp_start", 0.0)),
                    ramp_duration=float(v.get("ramp_duration", 1.0)),
                )
            )
        patterns.append(
            TrafficPattern(
                name=str(p["name"]),
                vehicles=vehicles,
                duration=float(p["duration"]) if "duration" in p else None,
            )
        )
    return GridConfig(
        ego_speeds=[float(s) for s in raw["ego_speeds"]],
        ego_lanes=[_parse_lane(l, "grid.ego_lanes") for l in raw["ego_lanes"]],
        patterns=patterns,
        episode_duration=float(raw.get("episode_duration", 24.0)),
        replicates=int(raw.get("replicates", 1)),
    )


def load_config(path: Optional[str] = None) -> AppConfig:
    """Load and validate a YAML config; None loads the packaged default."""
    if path is None:
        text = (
            resources.files("driveintent").joinpath("configs/default.yaml").read_text()
        )
    else:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a mapping")

    geo_raw = doc.get("geometry", {})
    geometry = LaneGeometry(
        lane_width=float(geo_raw.get("lane_width", 3.5)),
        right_center_y=float(geo_raw.get("right_center_y", 0.0)),
        vehicle_length=float(geo_raw.get("vehicle_length", 4.5)),
        vehicle_width=float(geo_raw.get("vehicle_width", 1.8)),
    )
    sen_raw = doc.get("sensor", {})
    sensor = SensorConfig(
        detection_radius=float(sen_raw.get("detection_radius", 50.0)),
        pos_noise_std=float(sen_raw.get("pos_noise_std", 0.1)),
        vel_noise_std=float(sen_raw.get("vel_noise_std", 0.1)),
        time_metric_cap=float(sen_raw.get("time_metric_cap", 10.0)),
        denom_epsilon=float(sen_raw.get("denom_epsilon", 0.1)),
        include_ego_heading=bool(sen_raw.get("include_ego_heading", True)),
    )
    grid = _parse_grid(doc)

    prof_raw = doc.get("profiles", {})
    profile_count = int(prof_raw.get("count", 5))
    if profile_count < 1:
        raise ConfigError("profiles.count must be at least 1")

    split_raw = doc.get("split", {})
    train_fraction = float(split_raw.get("train_fraction", 0.7))
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError("split.train_fraction must lie strictly in (0, 1)")

    train_raw = doc.get("train", {})
    train = TrainSettings(
        cross_validate=bool(train_raw.get("cross_validate", False)),
        cv_folds=int(train_raw.get("cv_folds", 5)),
        rf_subsample=int(train_raw.get("rf_subsample", 30000)),
        lr_subsample=int(train_raw.get("lr_subsample", 250000)),
    )
    if "defaults" in train_raw:
        for algo, params in train_raw["defaults"].items():
            if algo not in train.defaults:
                raise ConfigError(f"train.defaults: unknown algorithm {algo!r}")
            train.defaults[algo].update(params)

    serve_raw = doc.get("serve", {})
    serve = ServeSettings(
        host=str(serve_raw.get("host", "127.0.0.1")),
        port=int(serve_raw.get("port", 8700)),
        decimation=int(serve_raw.get("decimation", 3)),
        scenario=serve_raw.get("scenario"),
    )
    if serve.decimation < 1:
        raise ConfigError("serve.decimation must be >= 1")

    cfg = AppConfig(
        seed=int(doc.get("seed", 0)),
        geometry=geometry,
        sensor=sensor,
        grid=grid,
        profile_count=profile_count,
        label_noise=bool(doc.get("label_noise", True)),
        train_fraction=train_fraction,
        train=train,
        serve=serve,
    )
    cfg.digest = config_digest(cfg)
    return cfg


def config_digest(cfg: AppConfig) -> str:
    """Short stable content hash of the resolved configuration."""
    canon = json.dumps(cfg.resolved_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:12]
