"""Flat ``key = value`` run configuration for the command line tool.

Training keys are those of :class:`pcgen.training.TrainConfig` (``lambda`` for
the reconstruction weight); the rest describe the data, outputs and
evaluation.  Relative paths are resolved against the config file's directory.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .networks import ConfigError
from .pointcloud import FAMILIES, Dataset, load_dataset, normalize_dataset, split, synth_families
from .training import TRAIN_KEYS, TrainConfig, config_from_items

RUN_DEFAULTS = {
    "data_dir": "",              # directory of PLY files; empty means synthetic data
    "families": "sphere,torus,chair",
    "per_family": "200",
    "data_seed": "0",
    "split_seed": "0",
    "out": "run",
    "checkpoint_every": "10",
    "threads": "1",
    "eval_multiplier": "3",
    "eval_repeats": "3",
    "eval_seed": "0",
}
PATH_KEYS = ("data_dir", "out")
REQUIRED = ("mode",)


@dataclass
class RunConfig:
    train: TrainConfig
    data_dir: Path | None = None
    families: tuple = ("sphere", "torus", "chair")
    per_family: int = 200
    data_seed: int = 0
    split_seed: int = 0
    out: Path = Path("run")
    checkpoint_every: int = 10
    threads: int = 1
    eval_multiplier: int = 3
    eval_repeats: int = 3
    eval_seed: int = 0
    source: Path | None = field(default=None, compare=False)

    def dataset(self) -> Dataset:
        """Normalized, split dataset described by this config."""
        if self.data_dir is not None:
            ds = normalize_dataset(load_dataset(self.data_dir))
        else:
            ds = synth_families(self.families, self.per_family, n_points=self.train.n_points,
                                seed=self.data_seed)
        return split(ds, seed=self.split_seed)


def parse_lines(text: str, origin: str = "<config>") -> dict[str, str]:
    items: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in items:
            raise ConfigError(f"{origin}:{lineno}: duplicate key {key!r}")
        items[key] = value
    return items


def _int(items, key) -> int:
    try:
        return int(items[key])
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {items[key]!r}") from None


def from_items(items: dict[str, str], base: Path | None = None) -> RunConfig:
    for key in items:
        if key not in TRAIN_KEYS and key not in RUN_DEFAULTS:
            raise ConfigError(f"unknown key {key!r}")
    for key in REQUIRED:
        if key not in items:
            raise ConfigError(f"missing required key {key!r}")
    train = config_from_items({k: v for k, v in items.items() if k in TRAIN_KEYS})
    run = {**RUN_DEFAULTS, **{k: v for k, v in items.items() if k in RUN_DEFAULTS}}
    base = base or Path.cwd()
    paths = {}
    for key in PATH_KEYS:
        paths[key] = (base / run[key]).resolve() if run[key] else None
    families = tuple(f.strip() for f in run["families"].split(",") if f.strip())
    bad = [f for f in families if f not in FAMILIES]
    if bad or not families:
        raise ConfigError(f"families: unknown shape families {bad or families}")
    cfg = RunConfig(train, data_dir=paths["data_dir"], families=families, per_family=_int(run, "per_family"),
                    data_seed=_int(run, "data_seed"), split_seed=_int(run, "split_seed"),
                    out=paths["out"], checkpoint_every=_int(run, "checkpoint_every"),
                    threads=_int(run, "threads"), eval_multiplier=_int(run, "eval_multiplier"),
                    eval_repeats=_int(run, "eval_repeats"), eval_seed=_int(run, "eval_seed"))
    if cfg.per_family < 1 or cfg.checkpoint_every < 1 or cfg.threads < 1:
        raise ConfigError("per_family, checkpoint_every and threads must be >= 1")
    if cfg.eval_multiplier < 1 or cfg.eval_repeats < 1:
        raise ConfigError("eval_multiplier and eval_repeats must be >= 1")
    return cfg


def load(path) -> RunConfig:
    path = Path(path)
    text = path.read_text()
    cfg = from_items(parse_lines(text, str(path)), path.parent)
    cfg.source = path
    return cfg
