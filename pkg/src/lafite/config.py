"""Pipeline configuration: ``key = value`` lines grouped under ``[section]``
headers. Unknown keys are rejected; missing keys take the defaults below.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending key."""

    def __init__(self, field_name: str, msg: str):
        super().__init__(f"{field_name}: {msg}")
        self.field = field_name


@dataclass(frozen=True)
class DataSection:
    n_classes: int = 3
    samples_per_class: int = 100
    test_per_class: int = 60
    h: int = 8
    w: int = 8
    c: int = 8
    anomaly_fraction: float = 0.5
    offset: float = 5.0
    std: float = 0.25


@dataclass(frozen=True)
class DiffusionSection:
    schedule: str = "cosine"
    T: int = 1000
    eta: float = 0.0
    dt: int = 0  # 0: ceil(tau / 20)
    tau: int = 300
    x0_denominator: str = "sqrt"


@dataclass(frozen=True)
class DenoiserSection:
    architecture: str = "conv_unet"
    base_channels: int = 16
    hidden: tuple[int, ...] = (64, 64)
    temb_dim: int = 32


@dataclass(frozen=True)
class TrainSection:
    steps: int = 1500
    batch_size: int = 32
    lr: float = 2e-3
    weight_decay: float = 1e-4
    lr_drop_frac: float = 0.8


@dataclass(frozen=True)
class BankSection:
    keep_rate: float = 0.10
    seed_index: int = 0


@dataclass(frozen=True)
class EditSection:
    K: int = 3
    weight_mode: str = "normalized"


@dataclass(frozen=True)
class ScoringSection:
    image_h: int = 32
    image_w: int = 32
    sigma: float = 4.0
    nominal_size: int = 224  # sigma and pool_k are quoted at this size; 0 disables rescaling
    pool_k: int = 0  # 0: 8 px at nominal size, rescaled


@dataclass(frozen=True)
class SynthSection:
    batch: int = 16
    normal_fraction: float = 0.5
    size_min: float = 0.1
    size_max: float = 0.3
    count_min: int = 1
    count_max: int = 2
    rotation_max: float = 180.0
    shapes: tuple[str, ...] = ("rectangle", "ellipse", "polygon")


@dataclass(frozen=True)
class TuneSection:
    tau_values: tuple[int, ...] = (25, 100, 200, 300, 450, 600, 800)
    k_values: tuple[int, ...] = (1, 3, 5)


@dataclass(frozen=True)
class EvalSection:
    fpr_limit: float = 0.3


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    data: DataSection = field(default_factory=DataSection)
    diffusion: DiffusionSection = field(default_factory=DiffusionSection)
    denoiser: DenoiserSection = field(default_factory=DenoiserSection)
    train: TrainSection = field(default_factory=TrainSection)
    bank: BankSection = field(default_factory=BankSection)
    edit: EditSection = field(default_factory=EditSection)
    scoring: ScoringSection = field(default_factory=ScoringSection)
    synth: SynthSection = field(default_factory=SynthSection)
    tune: TuneSection = field(default_factory=TuneSection)
    eval: EvalSection = field(default_factory=EvalSection)

    # --- derived values ---

    @property
    def sigma_px(self) -> float:
        s = self.scoring
        if s.nominal_size <= 0:
            return s.sigma
        return s.sigma * min(s.image_h, s.image_w) / s.nominal_size

    @property
    def pool_px(self) -> int:
        s = self.scoring
        if s.pool_k > 0:
            return s.pool_k
        size = min(s.image_h, s.image_w)
        nominal = s.nominal_size if s.nominal_size > 0 else size
        return max(1, min(size, round(8 * size / nominal)))

    def validate(self) -> "PipelineConfig":
        d, df, sc = self.data, self.diffusion, self.scoring
        _pos(self.data, "data", ("n_classes", "samples_per_class", "test_per_class", "h", "w", "c"))
        _in01("data.anomaly_fraction", d.anomaly_fraction)
        if df.schedule != "cosine":
            raise ConfigError("diffusion.schedule", f"only 'cosine' is implemented, got {df.schedule!r}")
        if df.T < 1:
            raise ConfigError("diffusion.T", "must be >= 1")
        if not 1 <= df.tau <= df.T:
            raise ConfigError("diffusion.tau", f"must be in [1, T={df.T}]")
        if df.dt < 0 or df.dt > df.tau:
            raise ConfigError("diffusion.dt", "must be 0 (auto) or in [1, tau]")
        if df.eta < 0:
            raise ConfigError("diffusion.eta", "must be >= 0")
        if df.x0_denominator not in ("sqrt", "as_printed"):
            raise ConfigError("diffusion.x0_denominator", "must be 'sqrt' or 'as_printed'")
        if self.denoiser.architecture not in ("mlp", "conv_unet"):
            raise ConfigError("denoiser.architecture", "must be 'mlp' or 'conv_unet'")
        if self.denoiser.architecture == "conv_unet" and (d.h % 4 or d.w % 4):
            raise ConfigError("denoiser.architecture", "conv_unet needs data.h and data.w divisible by 4")
        _pos(self.train, "train", ("steps", "batch_size"))
        if not 0 < self.bank.keep_rate <= 1:
            raise ConfigError("bank.keep_rate", "must be in (0, 1]")
        n_bank = d.n_classes * d.samples_per_class * d.h * d.w
        n_c = int(n_bank * self.bank.keep_rate)
        if n_c < 1:
            raise ConfigError("bank.keep_rate", "selects an empty core set")
        for name, k in [("edit.K", self.edit.K)] + [("tune.k_values", k) for k in self.tune.k_values]:
            if not 1 <= k <= n_c:
                raise ConfigError(name, f"K={k} must be in [1, n_C={n_c}]")
        if self.edit.weight_mode not in ("normalized", "verbatim"):
            raise ConfigError("edit.weight_mode", "must be 'normalized' or 'verbatim'")
        _pos(sc, "scoring", ("image_h", "image_w"))
        if sc.sigma <= 0:
            raise ConfigError("scoring.sigma", "must be > 0")
        if self.pool_px > min(sc.image_h, sc.image_w):
            raise ConfigError("scoring.pool_k", "larger than the score map")
        if self.synth.batch < 2:
            raise ConfigError("synth.batch", "must be >= 2")
        _in01("synth.normal_fraction", self.synth.normal_fraction)
        if not 0 < self.synth.size_min <= self.synth.size_max < 1:
            raise ConfigError("synth.size_min", "need 0 < size_min <= size_max < 1")
        if not self.tune.tau_values or max(self.tune.tau_values) > df.T or min(self.tune.tau_values) < 1:
            raise ConfigError("tune.tau_values", f"values must lie in [1, T={df.T}]")
        if not 0 < self.eval.fpr_limit <= 1:
            raise ConfigError("eval.fpr_limit", "must be in (0, 1]")
        return self


def _pos(section, name, keys):
    for k in keys:
        if getattr(section, k) < 1:
            raise ConfigError(f"{name}.{k}", "must be >= 1")


def _in01(name, v):
    if not 0 <= v <= 1:
        raise ConfigError(name, "must be in [0, 1]")


_SECTIONS = [f.name for f in fields(PipelineConfig) if f.name != "seed"]


def _parse_value(raw: str, default, key: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [x.strip() for x in raw.split(",") if x.strip()]
            if default and isinstance(default[0], int):
                return tuple(int(x) for x in items)
            return tuple(items)
    except ValueError:
        raise ConfigError(key, f"cannot parse {raw!r}") from None
    return raw


def _format_value(v) -> str:
    if isinstance(v, tuple):
        return ", ".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def from_text(text: str) -> PipelineConfig:
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    cp.optionxform = str  # keys are case-sensitive (T, K)
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError("config", str(e).splitlines()[0]) from None
    cfg = PipelineConfig()
    updates = {}
    for sec in cp.sections():
        if sec == "run":
            for key, raw in cp.items(sec):
                if key != "seed":
                    raise ConfigError(f"run.{key}", "unknown key")
                updates["seed"] = _parse_value(raw, 0, "run.seed")
            continue
        if sec not in _SECTIONS:
            raise ConfigError(sec, "unknown section")
        cur = getattr(cfg, sec)
        known = {f.name: getattr(cur, f.name) for f in fields(cur)}
        vals = {}
        for key, raw in cp.items(sec):
            if key not in known:
                raise ConfigError(f"{sec}.{key}", "unknown key")
            vals[key] = _parse_value(raw, known[key], f"{sec}.{key}")
        updates[sec] = replace(cur, **vals)
    return replace(cfg, **updates).validate()


def load(path) -> PipelineConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError("--config", f"cannot read {path}: {e.strerror}") from None
    return from_text(text)


def to_text(cfg: PipelineConfig) -> str:
    lines = ["[run]", f"seed = {cfg.seed}", ""]
    for sec in _SECTIONS:
        lines.append(f"[{sec}]")
        obj = getattr(cfg, sec)
        for f in fields(obj):
            lines.append(f"{f.name} = {_format_value(getattr(obj, f.name))}")
        lines.append("")
    return "\n".join(lines)


def save(cfg: PipelineConfig, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(to_text(cfg), encoding="utf-8")
