"""Flat ``key=value`` run configuration with named presets."""
import os
from dataclasses import dataclass

from .model import ModelConfig
from .synth import GenConfig
from .train import TrainConfig


class ConfigError(ValueError):
    pass


PRESETS = {
    "paper": {
        "image_size": 256, "conv1": 32, "conv2": 64, "D": 128, "H": 512, "E": 512, "A": 256,
        "batch_size": 128, "dropout": 0.5,
    },
    "desk": {
        "image_size": 64, "conv1": 8, "conv2": 16, "D": 32, "H": 64, "E": 64, "A": 32,
        "batch_size": 8, "dropout": 0.5,
    },
}

DEFAULTS = {
    "preset": "desk",
    "coords": 1,
    "max_blocks": 10,
    "max_tokens": 16,
    "lr": 0.001,
    "beta1": 0.9,
    "beta2": 0.999,
    "eps": 1e-8,
    "clip_norm": 5.0,
    "epochs": 20,
    "steps": 0,
    "seed": 0,
    "min_rows": 2,
    "max_rows": 6,
    "min_leaves": 1,
    "max_leaves": 4,
    "threads": 1,
    **PRESETS["desk"],
}

_INT = {"image_size", "conv1", "conv2", "D", "H", "E", "A", "batch_size", "max_blocks",
        "max_tokens", "epochs", "steps", "seed", "min_rows", "max_rows", "min_leaves",
        "max_leaves", "threads", "coords"}
_FLOAT = {"dropout", "lr", "beta1", "beta2", "eps", "clip_norm"}


def _coerce(key, value):
    if key == "preset":
        if value not in PRESETS:
            raise ConfigError(f"unknown preset {value!r}")
        return value
    try:
        if key in _INT:
            return int(value, 0) if isinstance(value, str) else int(value)
        if key in _FLOAT:
            return float(value)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {value!r}") from None
    raise ConfigError(f"unknown config key {key!r}")


def parse_config_text(text):
    """Parse ``key=value`` lines; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {n}: expected key=value")
        key = key.strip()
        out[key] = _coerce(key, value.strip())
    return out


@dataclass(frozen=True)
class RunConfig:
    values: dict

    def __getitem__(self, key):
        return self.values[key]

    @property
    def model(self):
        v = self.values
        return ModelConfig(image_size=v["image_size"], conv=(v["conv1"], v["conv2"], v["D"]),
                           hidden=v["H"], embed=v["E"], attn=v["A"], max_blocks=v["max_blocks"],
                           max_tokens=v["max_tokens"], dropout=v["dropout"],
                           coords=bool(v["coords"]))

    @property
    def train(self):
        v = self.values
        return TrainConfig(epochs=v["epochs"], batch_size=v["batch_size"], lr=v["lr"],
                           beta1=v["beta1"], beta2=v["beta2"], eps=v["eps"],
                           clip_norm=v["clip_norm"], steps=v["steps"], seed=v["seed"])

    @property
    def gen(self):
        v = self.values
        return GenConfig(min_rows=v["min_rows"], max_rows=v["max_rows"],
                         min_leaves=v["min_leaves"], max_leaves=v["max_leaves"],
                         image_size=v["image_size"], seed=v["seed"])

    @property
    def threads(self):
        env = os.environ.get("GUICODER_THREADS")
        return int(env) if env else self.values["threads"]

    def format(self):
        return "".join(f"{k}={v}\n" for k, v in self.values.items())


def make_config(overrides=None):
    """Defaults, then the chosen preset, then explicit keys."""
    overrides = {k: _coerce(k, v) for k, v in (overrides or {}).items()}
    values = dict(DEFAULTS)
    preset = overrides.get("preset", values["preset"])
    values.update(PRESETS[preset])
    values["preset"] = preset
    values.update(overrides)
    return RunConfig(values)


def load_config(path=None, **overrides):
    values = {}
    if path:
        with open(path, encoding="utf-8") as f:
            values = parse_config_text(f.read())
    values.update({k: v for k, v in overrides.items() if v is not None})
    return make_config(values)
