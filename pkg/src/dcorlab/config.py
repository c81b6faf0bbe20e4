"""Run configuration files and provenance stamps.

A run config is a JSON object::

    {
      "seed": 0,
      "output_dir": "runs/desk",
      "data": {"n_train": 5000, "n_test": 1000},
      "pair": {"alpha": 0.05, "epochs": 20},
      "attacks": [{"kind": "PGD", "epsilon": 0.05}],
      "models": {"f1": "runs/desk/f1.npz", "f2": "runs/desk/f2.npz"}
    }

Only ``seed`` and ``output_dir`` are required. The top-level seed overrides
any seed given inside the sections, so a single number fixes the whole run.
"""

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .exceptions import InvalidInputError
from .experiments import PairTrainConfig
from .nn import AttackConfig

DEFAULT_ATTACKS = (
    {"kind": "FGM", "epsilon": 0.03},
    {"kind": "FGM", "epsilon": 0.05},
    {"kind": "FGM", "epsilon": 0.1},
    {"kind": "PGD", "epsilon": 0.03},
    {"kind": "PGD", "epsilon": 0.05},
    {"kind": "PGD", "epsilon": 0.1},
)


def package_version():
    from . import __version__

    return __version__


def provenance(seed=None, n=None, m=None, **extra):
    """The fields stamped into every numeric report."""
    return {"seed": seed, "n": n, "m": m, "version": package_version(), **extra}


@dataclass
class RunConfig:
    seed: int
    output_dir: str
    data: dict = field(default_factory=dict)
    pair: dict = field(default_factory=dict)
    attacks: list = field(default_factory=lambda: [dict(a) for a in DEFAULT_ATTACKS])
    models: dict = field(default_factory=dict)

    def __post_init__(self):
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise InvalidInputError("seed must be a non-negative integer")
        if not isinstance(self.output_dir, str) or not self.output_dir:
            raise InvalidInputError("output_dir must be a non-empty string")

    def pair_config(self, **overrides):
        try:
            return PairTrainConfig(**{**self.pair, **overrides, "seed": self.seed})
        except TypeError as exc:
            raise InvalidInputError(f"bad 'pair' section: {exc}") from exc

    def attack_configs(self):
        try:
            return [AttackConfig(**a) for a in self.attacks]
        except TypeError as exc:
            raise InvalidInputError(f"bad 'attacks' entry: {exc}") from exc

    def data_kwargs(self):
        return {**self.data, "seed": self.seed}

    def out_path(self, name):
        out = Path(self.output_dir)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise InvalidInputError(f"cannot create output directory {out}: {exc}") from exc
        return out / name

    def to_dict(self):
        return asdict(self)


def load_config(path):
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise InvalidInputError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise InvalidInputError("config must be a JSON object")
    try:
        cfg = RunConfig(**doc)
    except TypeError as exc:
        raise InvalidInputError(f"bad config {path}: {exc}") from exc
    # Relative paths are taken relative to the config file.
    cfg.output_dir = str(path.parent / cfg.output_dir)
    if not isinstance(cfg.models, dict):
        raise InvalidInputError("'models' must map names to paths")
    cfg.models = {k: str(path.parent / v) for k, v in cfg.models.items()}
    return cfg
