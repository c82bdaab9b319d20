"""Run configuration: defaults < config file < environment < command-line flags.

The canonical text form is one ``key = value`` line per field, sorted by key,
which is what every output artifact embeds.  Parsing the canonical text of a
resolved config yields the same config, byte for byte on re-serialisation.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .synth import SynthConfig

ENV_PREFIX = "LANDMARK_"
TASKS = ("predcls", "sgcls")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    # data
    n_entity_classes: int = 20
    n_predicates: int = 11
    n_channels: int = 32
    spatial: int = 7
    visual_dim: int = 32
    n_train: int = 2000
    n_eval: int = 400
    n_zeroshot: int = 200
    min_entities: int = 3
    max_entities: int = 8
    zipf_exponent: float = 1.2
    pattern_per_predicate: int = 2
    subject_support: int = 10
    object_support: int = 10
    n_zeroshot_pairs: int = 8
    subject_reuse: float = 0.3
    pattern_amplitude: float = 0.6
    background_amplitude: float = 0.3
    confuser_prob: float = 0.6
    noise_std: float = 1.0
    entity_noise: float = 1.0
    prototype_scale: float = 1.0
    spatial_jitter: float = 0.35
    smoothing_eps: float = 1e-3
    # model
    embed_dim: int = 64
    context_dim: int = 64
    embedding_scheme: str = "seeded-gaussian"
    share_tables: bool = False
    lcm_layers: int = 2
    lcm_heads: int = 4
    lcm_ffn_mult: int = 4
    lam_hidden: int = 16
    lam_kernel: int = 3
    lam_stride: int = 2
    lam_padding: int = 1
    lam_inner: str = "relu"
    eem_hidden: int = 64
    eem_head_hidden: int = 256
    eem_fusion: str = "product"
    eem_mse_on_softmax: bool = True
    eem_joint: bool = True
    relation_hidden: int = 128
    entity_hidden: int = 64
    # training
    lr: float = 0.05
    batch_size: int = 16
    iterations: int = 1500
    mu: float = 0.7
    lambda_mse: float = 1.0
    enable_eem: bool = True
    enable_lam: bool = True
    enable_lcm: bool = True
    task: str = "predcls"
    bg_ratio: int = 3
    eval_every: int = 0
    workers: int = 1
    # evaluation
    k_list: str = "20,50,100"
    topn_list: str = "1,5"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if not 0.0 <= self.mu <= 1.0:
            raise ConfigError(f"mu must lie in [0, 1], got {self.mu}")
        if self.lr <= 0 or self.batch_size < 1 or self.iterations < 0:
            raise ConfigError("lr must be > 0, batch_size >= 1, iterations >= 0")
        if self.context_dim % self.lcm_heads:
            raise ConfigError(f"context_dim {self.context_dim} not divisible by lcm_heads {self.lcm_heads}")
        if self.lam_inner not in ("relu", "sigmoid"):
            raise ConfigError("lam_inner must be relu or sigmoid")
        if self.eem_fusion not in ("product", "concat"):
            raise ConfigError("eem_fusion must be product or concat")
        if self.smoothing_eps < 0 or self.lambda_mse < 0 or self.bg_ratio < 0 or self.workers < 1:
            raise ConfigError("smoothing_eps, lambda_mse, bg_ratio must be >= 0 and workers >= 1")
        self.ks
        self.ns

    @property
    def ks(self) -> tuple[int, ...]:
        return _int_list(self.k_list, "k_list")

    @property
    def ns(self) -> tuple[int, ...]:
        return _int_list(self.topn_list, "topn_list")

    def synth(self) -> SynthConfig:
        names = {f.name for f in fields(SynthConfig)}
        return SynthConfig(**{k: v for k, v in asdict(self).items() if k in names})

    def with_overrides(self, **kw) -> "RunConfig":
        return resolve(base=self, overrides=kw)

    def to_text(self) -> str:
        return "".join(f"{k} = {_fmt(v)}\n" for k, v in sorted(asdict(self).items()))

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        return resolve(overrides=parse_text(text))


def _int_list(s: str, name: str) -> tuple[int, ...]:
    try:
        vals = tuple(int(x) for x in str(s).split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"{name} must be a comma-separated list of integers, got {s!r}") from None
    if not vals or any(v <= 0 for v in vals):
        raise ConfigError(f"{name} must hold positive integers, got {s!r}")
    return vals


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, value):
    if key not in _TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    kind = _TYPES[key]
    try:
        if kind == "bool":
            if isinstance(value, bool):
                return value
            s = str(value).strip().lower()
            if s in ("true", "1", "yes", "on"):
                return True
            if s in ("false", "0", "no", "off"):
                return False
            raise ValueError(value)
        if kind == "int":
            if isinstance(value, bool):
                raise ValueError(value)
            f = float(value)
            if f != int(f):
                raise ValueError(value)
            return int(f)
        if kind == "float":
            return float(value)
        if isinstance(value, (list, tuple)):
            return ",".join(str(x) for x in value)
        return str(value).strip()
    except (TypeError, ValueError):
        raise ConfigError(f"bad value {value!r} for {key} (expected {kind})") from None


def parse_text(text: str) -> dict:
    """Parse ``key = value`` lines (``#`` comments allowed) or a JSON object."""
    stripped = text.strip()
    if stripped.startswith("{"):
        try:
            data = json.loads(stripped)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON config: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("JSON config must be an object")
        return data
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {n}: expected 'key = value', got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def env_overrides(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    out = {}
    for k, v in environ.items():
        if k.startswith(ENV_PREFIX):
            key = k[len(ENV_PREFIX):].lower()
            if key not in _TYPES:
                raise ConfigError(f"unknown config key {key!r} from environment variable {k}")
            out[key] = v
    return out


def resolve(base: RunConfig | None = None, path: str | Path | None = None,
            overrides: dict | None = None, environ=None) -> RunConfig:
    """Layer file, environment and explicit overrides on top of ``base``."""
    cfg = base or RunConfig()
    layers = []
    if path is not None:
        try:
            text = Path(path).read_text()
        except FileNotFoundError:
            raise
        layers.append(parse_text(text))
    if environ is not None:
        layers.append(env_overrides(environ))
    if overrides:
        layers.append({k: v for k, v in overrides.items() if v is not None})
    values = {}
    for layer in layers:
        for k, v in layer.items():
            values[k] = _coerce(k, v)
    try:
        return replace(cfg, **values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
