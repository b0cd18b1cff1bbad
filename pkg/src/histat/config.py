"""Plain-text run configuration: ``key = value`` lines, ``#`` comments.

Every key has a documented default; unknown keys are rejected. Lists are
comma-separated, booleans are ``true``/``false``.
"""
from dataclasses import fields

from .errors import ConfigError
from .harness import TrainConfig
from .model import ModelConfig

DATA_DEFAULTS = {
    "num": 512,
    "eval_num": 128,
    "seq_len": 64,
    "n_primitives": 8,
    "seg_len": 16,
    "n_phases": 4,
    "noise_sigma": 0.01,
    "library_seed": 0,
    "labels": True,
}
PATH_DEFAULTS = {"data": "", "eval_data": "", "out": "", "checkpoint": ""}

MODEL_KEYS = tuple(f.name for f in fields(ModelConfig))
TRAIN_KEYS = tuple(f.name for f in fields(TrainConfig))


def _defaults():
    d = {}
    d.update(ModelConfig().to_dict())
    d.update({f.name: getattr(TrainConfig(), f.name) for f in fields(TrainConfig)})
    d.update(DATA_DEFAULTS)
    d.update(PATH_DEFAULTS)
    return d


DEFAULTS = _defaults()


def parse_value(key, raw):
    if key not in DEFAULTS:
        raise ConfigError(f"unknown config key {key!r}")
    default = DEFAULTS[key]
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, list):
            return [int(x) for x in raw.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ",".join(str(int(v)) for v in value)
    return str(value)


class RunConfig:
    """Resolved configuration: defaults, then a file, then explicit overrides."""

    def __init__(self, values=None):
        self.values = dict(DEFAULTS)
        self.explicit = set()
        if values:
            self.update(values)

    def update(self, values):
        for key, value in values.items():
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key {key!r}")
            if isinstance(value, str) and not isinstance(DEFAULTS[key], str):
                value = parse_value(key, value)
            self.values[key] = value
            self.explicit.add(key)

    def __getitem__(self, key):
        return self.values[key]

    @classmethod
    def from_text(cls, text, source="<config>"):
        parsed = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
            key, raw = line.split("=", 1)
            key = key.strip()
            try:
                parsed[key] = parse_value(key, raw)
            except ConfigError as exc:
                raise ConfigError(f"{source}:{lineno}: {exc}") from None
        cfg = cls()
        cfg.update(parsed)
        return cfg

    @classmethod
    def from_file(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read(), str(path))

    def to_text(self):
        lines = ["# resolved histat configuration"]
        for title, keys in (("model", MODEL_KEYS), ("training", TRAIN_KEYS),
                            ("data", tuple(DATA_DEFAULTS)), ("paths", tuple(PATH_DEFAULTS))):
            lines.append(f"# {title}")
            lines.extend(f"{k} = {format_value(self.values[k])}" for k in keys)
        return "\n".join(lines) + "\n"

    def model_config(self):
        return ModelConfig.from_dict({k: self.values[k] for k in MODEL_KEYS})

    def train_config(self):
        cfg = TrainConfig(**{k: self.values[k] for k in TRAIN_KEYS})
        cfg.validate()
        return cfg
