"""
Flat, versioned experiment configuration.

Unprefixed keys are TrainConfig fields or experiment fields; ``sampler_*``,
``denoiser_*``, ``pretrain_*`` and ``schedule_*`` keys route to their
sections. Unknown keys and invalid values raise ConfigError naming the key.
"""

import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from ..diffusion.denoiser import DenoiserConfig
from ..diffusion.schedule import ScheduleKind
from ..inference.config import SamplerConfig
from ..training.config import PretrainConfig, TrainConfig
from .errors import ConfigError, NotFoundError

CONFIG_VERSION = 1

SECTION_PREFIXES = {
    "sampler_": "sampler",
    "denoiser_": "denoiser",
    "pretrain_": "pretrain",
    "schedule_": "schedule",
}


class ScheduleSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    timesteps: int = Field(default=1000, ge=2, description="Diffusion timesteps T")
    kind: ScheduleKind = Field(default=ScheduleKind.LINEAR_BETA, description="Schedule family")


class ExperimentConfig(BaseModel):
    """Everything one experiment needs: inputs, outputs and every section's settings"""
    model_config = ConfigDict(extra="forbid")

    config_version: int = Field(default=CONFIG_VERSION, description="Format version")
    seed: int = Field(default=0, description="Seed propagated to every stochastic section")
    assets_manifest: Optional[Path] = Field(default=None, description="Subject asset manifest")
    subject_classes: List[str] = Field(
        default_factory=lambda: ["cat", "dog"], description="Synthetic subjects when no manifest is given"
    )
    output_dir: Path = Field(default=Path("runs/default"), description="Run output directory")
    base_checkpoint: Optional[Path] = Field(default=None, description="Starting checkpoint")
    extractor: str = Field(default="random-projection", description="Extractor for CLIP-T and CLIP-I")
    dino_extractor: str = Field(default="patch-stats", description="Extractor for DINO-I")
    eval_templates: List[int] = Field(
        default_factory=lambda: list(range(1, 11)), description="Prompt template ids used in evaluation"
    )
    eval_seeds: List[int] = Field(default_factory=lambda: [0, 1, 2, 3], description="Sampling seeds")
    train: TrainConfig = Field(default_factory=TrainConfig)
    sampler: SamplerConfig = Field(default_factory=SamplerConfig)
    denoiser: DenoiserConfig = Field(default_factory=DenoiserConfig)
    pretrain: PretrainConfig = Field(default_factory=PretrainConfig)
    schedule: ScheduleSettings = Field(default_factory=ScheduleSettings)
    source_path: Optional[Path] = Field(default=None, description="File the config was read from")


EXPERIMENT_FIELDS = set(ExperimentConfig.model_fields) - set(SECTION_PREFIXES.values()) - {"train", "source_path"}
PATH_FIELDS = ("assets_manifest", "output_dir", "base_checkpoint")


def _route(flat: Dict[str, Any]) -> Tuple[Dict[str, Any], Dict[str, Dict[str, Any]], Dict[Tuple[str, str], str]]:
    """Split flat keys into experiment fields and per-section fields; remember each origin key"""
    top: Dict[str, Any] = {}
    sections: Dict[str, Dict[str, Any]] = {name: {} for name in ["train", *SECTION_PREFIXES.values()]}
    origins: Dict[Tuple[str, str], str] = {}

    for key, value in flat.items():
        for prefix, section in SECTION_PREFIXES.items():
            if key.startswith(prefix):
                field = key[len(prefix):]
                model = {"sampler": SamplerConfig, "denoiser": DenoiserConfig,
                         "pretrain": PretrainConfig, "schedule": ScheduleSettings}[section]
                if field not in model.model_fields:
                    raise ConfigError(f"Unknown config key: {key}", key)
                sections[section][field] = value
                origins[(section, field)] = key
                break
        else:
            if key in TrainConfig.model_fields and key != "seed":
                sections["train"][key] = value
                origins[("train", key)] = key
            elif key in EXPERIMENT_FIELDS:
                top[key] = value
            else:
                raise ConfigError(f"Unknown config key: {key}", key)
    return top, sections, origins


def _validation_key(error: ValidationError, section: str, origins: Dict[Tuple[str, str], str]) -> str:
    location = error.errors()[0]["loc"]
    field = str(location[0]) if location else ""
    return origins.get((section, field), field if section == "top" else f"{section}.{field}")


def build_experiment_config(flat: Dict[str, Any], base_dir: Optional[Path] = None) -> ExperimentConfig:
    """Validate a flat key/value mapping into an ExperimentConfig"""
    flat = dict(flat)
    version = flat.pop("config_version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"Unsupported config_version {version}, expected {CONFIG_VERSION}", "config_version")

    top, sections, origins = _route(flat)
    seed = top.get("seed", 0)
    for section in ("train", "sampler", "pretrain"):
        sections[section].setdefault("seed", seed)

    built: Dict[str, Any] = {}
    models = {"train": TrainConfig, "sampler": SamplerConfig, "denoiser": DenoiserConfig,
              "pretrain": PretrainConfig, "schedule": ScheduleSettings}
    for section, model in models.items():
        try:
            built[section] = model(**sections[section])
        except ValidationError as e:
            key = _validation_key(e, section, origins)
            raise ConfigError(f"Invalid value for {key}: {e.errors()[0]['msg']}", key)

    base_dir = Path(base_dir) if base_dir else Path.cwd()
    for field in PATH_FIELDS:
        if top.get(field) is not None:
            path = Path(top[field]).expanduser()
            top[field] = path if path.is_absolute() else base_dir / path

    for field in ("assets_manifest", "base_checkpoint"):
        if top.get(field) is not None and not Path(top[field]).exists():
            raise ConfigError(f"{field} does not exist: {top[field]}", field)

    try:
        return ExperimentConfig(**top, **built)
    except ValidationError as e:
        key = _validation_key(e, "top", origins)
        raise ConfigError(f"Invalid value for {key}: {e.errors()[0]['msg']}", key)


def load_experiment_config(path: Union[str, Path], overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    """Read a JSON config; ``overrides`` are flat keys applied on top of the file"""
    path = Path(path)
    if not path.exists():
        raise NotFoundError(f"config file not found: {path}")
    try:
        flat = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path} is not valid JSON: {e}")
    if not isinstance(flat, dict):
        raise ConfigError(f"{path} must contain a JSON object")
    flat.update(overrides or {})
    config = build_experiment_config(flat, base_dir=path.parent.resolve())
    return config.model_copy(update={"source_path": path})


def flatten_experiment_config(config: ExperimentConfig) -> Dict[str, Any]:
    """Inverse of build_experiment_config for display and for writing configs"""
    flat: Dict[str, Any] = {"config_version": CONFIG_VERSION}
    dumped = config.model_dump(mode="json")
    for field in sorted(EXPERIMENT_FIELDS - {"config_version"}):
        flat[field] = dumped[field]
    for key, value in dumped["train"].items():
        if key != "seed":
            flat[key] = value
    for prefix, section in SECTION_PREFIXES.items():
        for key, value in dumped[section].items():
            if key != "seed":
                flat[prefix + key] = value
    return flat
