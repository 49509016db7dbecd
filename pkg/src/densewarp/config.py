"""Run configuration: YAML loading, validation, defaults, and rig files.

Every key has a default; unknown keys are rejected by name so typos fail
loudly. Config files round-trip through dump_config/load_config. Flags
override file values one-to-one via dotted ``section.key=value`` overrides.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np
import yaml

from .errors import ConfigError
from .evaluation import SceneBundle
from .fusion import FusionConfig
from .geometry import CameraView
from .scheduler import SamplingPlan
from .synth import NoiseConfig, RigSpec, build_rig, default_rig
from .warper import TrainConfig


@dataclass(frozen=True)
class MotionSection:
    joints: int = 5
    amplitude_m: float = 0.5
    frequency_hz: float = 2.0
    seed_base: int = 1000


@dataclass(frozen=True)
class RigSection:
    views: int = 4
    radius_m: float = 4.0
    height_m: float = 1.2
    half_extent_m: float = 1.15  # scene radius the focal length is sized for
    focal_px: float = 0.0  # 0 = derive from radius and image size


@dataclass(frozen=True)
class NoiseSection:
    peak_jitter_px: float = 0.6
    dropout_prob: float = 0.0


@dataclass(frozen=True)
class SceneSection:
    image_size: tuple = (32, 32)
    sigma_px: float = 1.75
    motion: MotionSection = field(default_factory=MotionSection)
    rig: RigSection = field(default_factory=RigSection)
    noise: NoiseSection = field(default_factory=NoiseSection)


@dataclass(frozen=True)
class PlanSection:
    camera_rate_hz: float = 12.5
    mode: str = "uniform"
    window_size: int = 0
    duration_s: float = 0.5


@dataclass(frozen=True)
class FusionSection:
    lam: float = 0.5
    line_step: float = 0.5
    coarse_to_fine: bool = False


@dataclass(frozen=True)
class WarperSection:
    lr: float = 2.0
    epochs: int = 30
    batch: int = 8
    channels: int = 16
    train_seeds: int = 3
    train_seed_base: int = 100


@dataclass(frozen=True)
class EvalSection:
    seeds: int = 20
    refine: bool = True


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    output_dir: str = "out"
    scene: SceneSection = field(default_factory=SceneSection)
    plan: PlanSection = field(default_factory=PlanSection)
    fusion: FusionSection = field(default_factory=FusionSection)
    warper: WarperSection = field(default_factory=WarperSection)
    eval: EvalSection = field(default_factory=EvalSection)


# External YAML key -> dataclass field. "lambda" is a Python keyword, hence
# the one rename.
_FUSION_KEYMAP = {"lambda": "lam", "line_step": "line_step", "coarse_to_fine": "coarse_to_fine"}

_SECTIONS = {
    "scene": (SceneSection, None),
    "plan": (PlanSection, None),
    "fusion": (FusionSection, _FUSION_KEYMAP),
    "warper": (WarperSection, None),
    "eval": (EvalSection, None),
}
_NESTED = {
    "motion": (MotionSection, None),
    "rig": (RigSection, None),
    "noise": (NoiseSection, None),
}


def _build_section(cls, data, keymap, path):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"section '{path}' must be a mapping", key=path)
    fields = {f: t for f, t in cls.__dataclass_fields__.items()}
    kwargs = {}
    for key, value in data.items():
        name = keymap.get(key, key) if keymap else key
        if name not in fields:
            raise ConfigError(f"unknown config key '{path}.{key}'", key=f"{path}.{key}")
        if name in _NESTED and path == "scene":
            sub_cls, sub_map = _NESTED[name]
            kwargs[name] = _build_section(sub_cls, value, sub_map, f"{path}.{name}")
        elif isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad value in section '{path}': {exc}", key=path) from exc


def config_from_dict(data: dict) -> RunConfig:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("top-level config must be a mapping")
    kwargs = {}
    for key, value in data.items():
        if key in _SECTIONS:
            cls, keymap = _SECTIONS[key]
            kwargs[key] = _build_section(cls, value, keymap, key)
        elif key in ("seed", "output_dir"):
            kwargs[key] = value
        else:
            raise ConfigError(f"unknown config key '{key}'", key=key)
    cfg = RunConfig(**kwargs)
    validate_config(cfg)
    return cfg


def validate_config(cfg: RunConfig) -> None:
    """Range checks with messages that name the offending key."""
    checks = [
        (0.0 <= cfg.fusion.lam <= 1.0, "fusion.lambda", "must be in [0, 1]"),
        (0.0 < cfg.fusion.line_step <= 1.0, "fusion.line_step", "must be in (0, 1]"),
        (cfg.scene.sigma_px > 0, "scene.sigma_px", "must be positive"),
        (cfg.scene.motion.joints >= 1, "scene.motion.joints", "must be >= 1"),
        (cfg.scene.motion.amplitude_m >= 0, "scene.motion.amplitude_m", "must be >= 0"),
        (cfg.scene.motion.frequency_hz >= 0, "scene.motion.frequency_hz", "must be >= 0"),
        (cfg.scene.rig.views >= 2, "scene.rig.views", "must be >= 2"),
        (cfg.scene.rig.radius_m > 0, "scene.rig.radius_m", "must be positive"),
        (cfg.scene.noise.peak_jitter_px >= 0, "scene.noise.peak_jitter_px", "must be >= 0"),
        (0.0 <= cfg.scene.noise.dropout_prob <= 1.0, "scene.noise.dropout_prob", "must be in [0, 1]"),
        (cfg.plan.camera_rate_hz > 0, "plan.camera_rate_hz", "must be positive"),
        (cfg.plan.duration_s > 0, "plan.duration_s", "must be positive"),
        (cfg.plan.mode in ("uniform", "non_uniform"), "plan.mode", "must be uniform or non_uniform"),
        (cfg.warper.epochs >= 0, "warper.epochs", "must be >= 0"),
        (cfg.warper.batch >= 1, "warper.batch", "must be >= 1"),
        (cfg.warper.channels >= 1, "warper.channels", "must be >= 1"),
        (cfg.eval.seeds >= 1, "eval.seeds", "must be >= 1"),
        (len(cfg.scene.image_size) == 2, "scene.image_size", "must be [width, height]"),
    ]
    if cfg.plan.mode == "non_uniform":
        checks.append((
            cfg.plan.window_size > cfg.scene.rig.views,
            "plan.window_size", "must exceed scene.rig.views in non_uniform mode",
        ))
    for ok, key, msg in checks:
        if not ok:
            raise ConfigError(f"config key '{key}' {msg}", key=key)


def load_config(path) -> RunConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    return config_from_dict(data)


def config_to_dict(cfg: RunConfig) -> dict:
    data = asdict(cfg)
    fusion = data.pop("fusion")
    data["fusion"] = {ext: fusion[internal] for ext, internal in _FUSION_KEYMAP.items()}
    data["scene"]["image_size"] = list(cfg.scene.image_size)
    return data


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=True)


def apply_overrides(data: dict, overrides) -> dict:
    """Apply dotted 'section.key=value' strings; values parse as YAML scalars."""
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override '{item}' is not of the form key=value", key=item)
        dotted, raw = item.split("=", 1)
        value = yaml.safe_load(raw)
        parts = dotted.split(".")
        node = data
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override '{dotted}' path collides with a scalar", key=dotted)
        node[parts[-1]] = value
    return data


# ---------------------------------------------------------------------------
# runtime objects
# ---------------------------------------------------------------------------

def rig_spec_from_config(cfg: RunConfig) -> RigSpec:
    scene = cfg.scene
    if scene.rig.focal_px > 0:
        w, h = scene.image_size
        return RigSpec(
            views=scene.rig.views, radius=scene.rig.radius_m, height=scene.rig.height_m,
            look_at=np.array([0.0, 0.0, 0.9]), fx=scene.rig.focal_px, fy=scene.rig.focal_px,
            cx=(w - 1) / 2.0, cy=(h - 1) / 2.0, image_size=tuple(scene.image_size),
        )
    return default_rig(
        views=scene.rig.views, image_size=tuple(scene.image_size),
        radius=scene.rig.radius_m, height=scene.rig.height_m,
        half_extent=scene.rig.half_extent_m,
    )


def sampling_plan_from_config(cfg: RunConfig) -> SamplingPlan:
    return SamplingPlan(
        views=cfg.scene.rig.views,
        camera_rate=cfg.plan.camera_rate_hz,
        mode=cfg.plan.mode,
        window_size=cfg.plan.window_size,
        seed=cfg.seed,
    )


def bundle_from_config(cfg: RunConfig) -> SceneBundle:
    rig = build_rig(rig_spec_from_config(cfg))
    return SceneBundle(
        joints=cfg.scene.motion.joints,
        image_size=tuple(cfg.scene.image_size),
        sigma_px=cfg.scene.sigma_px,
        amplitude_m=cfg.scene.motion.amplitude_m,
        frequency_hz=cfg.scene.motion.frequency_hz,
        rig=rig,
        plan=sampling_plan_from_config(cfg),
        fusion=FusionConfig(
            lam=cfg.fusion.lam, line_step=cfg.fusion.line_step,
            coarse_to_fine=cfg.fusion.coarse_to_fine,
        ),
        noise=NoiseConfig(
            peak_jitter_px=cfg.scene.noise.peak_jitter_px,
            dropout_prob=cfg.scene.noise.dropout_prob,
            seed=cfg.seed,
        ),
        duration_s=cfg.plan.duration_s,
        refine=cfg.eval.refine,
        motion_seed_base=cfg.scene.motion.seed_base,
    )


def train_config_from_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(
        lr=cfg.warper.lr, epochs=cfg.warper.epochs, batch_size=cfg.warper.batch,
        channels=cfg.warper.channels, seed=cfg.seed,
    )


def train_seed_list(cfg: RunConfig):
    base = cfg.warper.train_seed_base
    return [base + i for i in range(cfg.warper.train_seeds)]


# ---------------------------------------------------------------------------
# rig files
# ---------------------------------------------------------------------------

def rig_to_dict(rig) -> dict:
    return {
        "cameras": [
            {
                "id": cam.id,
                "intrinsics": [[float(x) for x in row] for row in cam.intrinsics],
                "rotation": [[float(x) for x in row] for row in cam.rotation],
                "translation": [float(x) for x in cam.translation],
                "image_size": [cam.image_size[0], cam.image_size[1]],
            }
            for cam in rig
        ]
    }


def rig_from_dict(data: dict):
    cams = []
    for entry in data["cameras"]:
        cams.append(CameraView(
            id=int(entry["id"]),
            intrinsics=np.array(entry["intrinsics"], dtype=float),
            rotation=np.array(entry["rotation"], dtype=float),
            translation=np.array(entry["translation"], dtype=float),
            image_size=tuple(entry["image_size"]),
        ))
    return sorted(cams, key=lambda c: c.id)


def save_rig(path, rig) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(rig_to_dict(rig), fh, sort_keys=True)


def load_rig(path):
    with open(path) as fh:
        return rig_from_dict(yaml.safe_load(fh))
