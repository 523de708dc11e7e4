"""Flat ``key = value`` run configuration.

Lines are ``key = value``; ``#`` starts a comment.  Keys:

    source            synthetic | movielens | processed
    data_path         ratings file (movielens) or directory (processed)
    rating_threshold  keep ratings >= this (default 3)
    k_core            k-core size (default 10)
    ratios            train,valid,test fractions (default 0.6,0.2,0.2)
    seed              split / init / sampling seed (default 2024)
    seeds             comma list of seeds for ``ablate`` (default: seed)
    out               output directory
    synthetic.*       any SyntheticSkewConfig field
    model fields      K alpha lambda nonlinear include_layer0 side mode
                      embedding_dim leaky_slope freeze_users
    train fields      learning_rate batch_size neg_per_pos max_epochs patience
                      eval_every deterministic dtype beta1 beta2 eps
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .dataset import SyntheticSkewConfig
from .model import ModelConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


_MODEL_KEYS = {f.name for f in fields(ModelConfig)} | {"lambda"}
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - {"seed"}
_SYNTH_KEYS = {f.name for f in fields(SyntheticSkewConfig)}
_RUN_KEYS = {"source", "data_path", "rating_threshold", "k_core", "ratios", "seed", "seeds", "out"}


def _coerce(value: str, like):
    if isinstance(like, bool):
        low = value.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {value!r}")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    return value.strip()


def parse_text(text: str, origin: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


@dataclass
class RunConfig:
    source: str = "synthetic"
    data_path: str = ""
    rating_threshold: float = 3.0
    k_core: int = 10
    ratios: tuple = (0.6, 0.2, 0.2)
    seed: int = 2024
    seeds: tuple = ()
    out: str = "runs/default"
    synthetic: SyntheticSkewConfig = field(default_factory=SyntheticSkewConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.source not in ("synthetic", "movielens", "processed"):
            raise ConfigError(f"unknown source {self.source!r}")
        if self.source != "synthetic" and not self.data_path:
            raise ConfigError(f"source={self.source} needs data_path")

    @property
    def train_config(self) -> TrainConfig:
        return replace(self.train, seed=self.seed)

    @classmethod
    def from_mapping(cls, values: dict[str, str]) -> "RunConfig":
        run, model, train, synth = {}, {}, {}, {}
        for key, raw in values.items():
            if key.startswith("synthetic."):
                name = key.split(".", 1)[1]
                if name not in _SYNTH_KEYS:
                    raise ConfigError(f"unknown key {key!r}")
                synth[name] = _coerce(raw, getattr(SyntheticSkewConfig, name))
            elif key in _RUN_KEYS:
                if key == "ratios":
                    run[key] = tuple(float(x) for x in raw.split(","))
                elif key == "seeds":
                    run[key] = tuple(int(x) for x in raw.split(",") if x.strip())
                elif key in ("seed", "k_core"):
                    run[key] = int(raw)
                elif key == "rating_threshold":
                    run[key] = float(raw)
                else:
                    run[key] = raw.strip()
            elif key in _MODEL_KEYS:
                name = "lam" if key == "lambda" else key
                model[name] = _coerce(raw, getattr(ModelConfig, name))
            elif key in _TRAIN_KEYS:
                train[key] = _coerce(raw, getattr(TrainConfig, key))
            else:
                raise ConfigError(f"unknown key {key!r}")
        try:
            return cls(synthetic=SyntheticSkewConfig(**synth), model=ModelConfig(**model),
                       train=TrainConfig(**train), **run)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path=None, overrides: dict[str, str] | None = None) -> "RunConfig":
        values: dict[str, str] = {}
        if path is not None:
            values.update(parse_text(Path(path).read_text(), str(path)))
        values.update(overrides or {})
        return cls.from_mapping(values)

    def to_mapping(self) -> dict[str, str]:
        out = {
            "source": self.source,
            "data_path": self.data_path,
            "rating_threshold": repr(self.rating_threshold),
            "k_core": str(self.k_core),
            "ratios": ",".join(repr(r) for r in self.ratios),
            "seed": str(self.seed),
            "out": self.out,
        }
        if self.seeds:
            out["seeds"] = ",".join(str(s) for s in self.seeds)
        for k, v in asdict(self.synthetic).items():
            out[f"synthetic.{k}"] = _render(v)
        for k, v in self.model.to_dict().items():
            out["lambda" if k == "lam" else k] = _render(v)
        for k, v in self.train.to_dict().items():
            if k != "seed":
                out[k] = _render(v)
        return out

    def to_text(self) -> str:
        lines = ["# resolved run configuration"]
        lines += [f"{k} = {v}" for k, v in self.to_mapping().items()]
        return "\n".join(lines) + "\n"


def _render(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)
