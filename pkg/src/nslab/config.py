"""Experiment configuration: flat key=value sections (INI), desk-scale
defaults, and a --paper-scale switch restoring the full experiment sizes."""

import configparser
import hashlib
from dataclasses import dataclass, fields
from pathlib import Path

from nslab.errors import ConfigError

DATASET_KINDS = ("ellipsoid", "mnist_rotation")
VALID_SETUPS = ("relu_maxpool", "softplus_avepool")


@dataclass
class ExperimentConfig:
    # [experiment]
    kind: str = ""  # set by the CLI subcommand
    seed: int = 0
    out: str = "nslab-out"
    dataset: str = "ellipsoid"
    setups: tuple = VALID_SETUPS
    realizations: int = 3
    videos: int = 20
    paper_scale: bool = False
    jobs: int = 1
    # [dataset]
    train_images: int = 2000
    val_images: int = 500
    resolution: int = 28
    semi_a: float = 2.5
    semi_b: float = 4.0
    semi_c: float = 1.0
    window: float = 4.5
    light_z: float = 20.0
    light_range: float = 10.0
    templates: int = 8
    angles_per_template: int = 12
    val_angles_per_template: int = 4
    idx_images: str = ""
    idx_labels: str = ""
    digit: int = 7
    # [video]
    step: float = 0.1
    noise_frames: int = 100
    # [train]
    epochs: int = 20
    batch_size: int = 64
    learning_rate: float = 1e-3
    # [channels]
    tau_d: float = 0.02
    pool_split: float = 0.0025
    eps_zero_frac: float = 1e-6
    mc_trials: int = 64
    probe_videos: int = 1

    def __post_init__(self):
        if self.dataset not in DATASET_KINDS:
            raise ConfigError(f"unknown dataset kind {self.dataset!r}")
        for setup in self.setups:
            if setup not in VALID_SETUPS:
                raise ConfigError(f"unknown setup {setup!r}")
        for name in ("realizations", "videos", "train_images", "val_images",
                     "epochs", "batch_size", "mc_trials", "probe_videos", "jobs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("tau_d", "pool_split", "eps_zero_frac", "step", "learning_rate"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    def config_hash(self) -> str:
        """Stable hash of the experiment parameters that affect results
        (kind, output path, and worker count excluded)."""
        skip = {"kind", "out", "jobs"}
        lines = sorted(
            f"{f.name}={getattr(self, f.name)!r}"
            for f in fields(self)
            if f.name not in skip
        )
        return hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()


_SECTIONS = {
    "experiment": ("seed", "out", "dataset", "setups", "realizations", "videos",
                   "paper_scale", "jobs"),
    "dataset": ("train_images", "val_images", "resolution", "semi_a", "semi_b",
                "semi_c", "window", "light_z", "light_range", "templates",
                "angles_per_template", "val_angles_per_template", "idx_images",
                "idx_labels", "digit"),
    "video": ("step", "noise_frames"),
    "train": ("epochs", "batch_size", "learning_rate"),
    "channels": ("tau_d", "pool_split", "eps_zero_frac", "mc_trials", "probe_videos"),
}

_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _parse_value(name: str, raw: str):
    kind = _FIELD_TYPES[name]
    raw = raw.strip()
    try:
        if name == "setups":
            return tuple(s.strip() for s in raw.split(",") if s.strip())
        if kind is bool:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Config from an INI file plus CLI overrides; defaults when no file."""
    values: dict = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        parser = configparser.ConfigParser()
        try:
            parser.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from exc
        for section in parser.sections():
            if section not in _SECTIONS:
                raise ConfigError(f"unknown config section [{section}]")
            for key, raw in parser.items(section):
                if key not in _SECTIONS[section]:
                    raise ConfigError(f"unknown key {key!r} in section [{section}]")
                values[key] = _parse_value(key, raw)
    for key, val in (overrides or {}).items():
        if val is not None:
            values[key] = val
    try:
        config = ExperimentConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    if config.paper_scale:
        config = apply_paper_scale(config)
    return config


def apply_paper_scale(config: ExperimentConfig) -> ExperimentConfig:
    """Full experiment sizes: 10000/1000 images, ten realizations per setup,
    100 ellipsoid videos (ten noise videos), 60 rotation angles."""
    config.train_images = 10000
    config.val_images = 1000
    config.realizations = 10
    config.videos = 100 if config.dataset == "ellipsoid" else 10
    config.angles_per_template = 60
    config.val_angles_per_template = 60
    if config.dataset == "mnist_rotation":
        config.templates = 6265 if config.idx_images else 10
    return config
