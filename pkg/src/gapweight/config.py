"""Experiment configuration: a small TOML-style file format with strict keys.

The format accepts `[section]` headers, `key = value` pairs, `#` comments,
and scalar values (quoted strings, integers, floats, booleans) plus
single-line arrays of scalars.  Unknown sections or keys are errors that
name the offending dotted key, so typos fail fast.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

from .errors import ConfigurationError
from .net import NetworkConfig
from .perturb import PredictorConfig, default_num_draws


def _parse_scalar(text: str, where: str):
    text = text.strip()
    if not text:
        raise ConfigurationError(f"{where}: empty value")
    if text.startswith('"') and text.endswith('"') and len(text) >= 2:
        return text[1:-1]
    if text in ("true", "false"):
        return text == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        raise ConfigurationError(f"{where}: cannot parse value {text!r}") from None


def _strip_comment(line: str) -> str:
    out, in_string = [], False
    for ch in line:
        if ch == '"':
            in_string = not in_string
        if ch == "#" and not in_string:
            break
        out.append(ch)
    return "".join(out)


def parse_toml_subset(text: str) -> dict:
    """Parse the supported TOML subset into nested dicts."""
    data: dict = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        where = f"line {lineno}"
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigurationError(f"{where}: malformed section header {line!r}")
            section = line[1:-1].strip()
            if not section:
                raise ConfigurationError(f"{where}: empty section name")
            data.setdefault(section, {})
            continue
        if "=" not in line:
            raise ConfigurationError(f"{where}: expected key = value, got {line!r}")
        if section is None:
            raise ConfigurationError(f"{where}: key outside any [section]")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if value.startswith("["):
            if not value.endswith("]"):
                raise ConfigurationError(f"{where}: arrays must close on the same line")
            inner = value[1:-1].strip()
            parsed = (
                [] if not inner else [_parse_scalar(v, where) for v in inner.split(",")]
            )
        else:
            parsed = _parse_scalar(value, where)
        data[section][key] = parsed
    return data


@dataclass
class NetworkSection:
    d: int = 8
    m: int = 64
    L: int = 1
    sigma1: float = 1.0
    activation: str = "tanh"


@dataclass
class PredictorSection:
    loss_kind: str = "square"
    c_p: float = 1.0
    S: int = 0  # 0 means: use the width default max(16, ceil(8 log m))
    z: float = 0.01


@dataclass
class OgdSection:
    mu: float = 128.0
    rho_scale: float = 1.0  # rho = rho_scale * sqrt(T) / lambda0_hat
    rho1: float = 1.0
    T: int = 100
    comparator_epochs: int = 200


@dataclass
class PolicySection:
    kind: str = "neu_squarecb"
    gamma0: float = 2.0
    gamma_schedule: str = "sqrt_kt"


@dataclass
class EnvironmentSection:
    kind: str = "classification"
    dataset: str = ""
    label_column: str = "label"
    K: int = 2
    feature_dim: int = 0           # classification: 0 means network.d // K
    noise_sd: float = 0.0
    ordering: str = "iid_shuffle"
    class_spread: float = 0.25     # synthetic separable classes
    teacher_link_scale: float = 2.0  # plain teacher streams (diagnostics)
    teacher_bias: float = 0.5      # perturbed-class teacher: mean ridge level
    teacher_spread: float = 1.0    # perturbed-class teacher: block displacement


@dataclass
class RunSection:
    seeds: list = field(default_factory=lambda: [1])
    output_dir: str = "out"
    threads: int = 1


@dataclass
class DiagnoseSection:
    widths: list = field(default_factory=lambda: [64, 256])
    hessian_samples: int = 20
    hessian_probes: int = 15
    convexity_pairs: int = 100
    interpolation_points: int = 20
    interpolation_epochs: int = 300
    gradient_samples: int = 20


@dataclass
class BoundsSection:
    lambda_reg: float = 1.0
    context_cap: int = 200  # lambda0 measured on the first min(T*K, cap) contexts


_SECTIONS = {
    "network": NetworkSection,
    "predictor": PredictorSection,
    "ogd": OgdSection,
    "policy": PolicySection,
    "environment": EnvironmentSection,
    "run": RunSection,
    "diagnose": DiagnoseSection,
    "bounds": BoundsSection,
}


@dataclass
class ExperimentConfig:
    network: NetworkSection = field(default_factory=NetworkSection)
    predictor: PredictorSection = field(default_factory=PredictorSection)
    ogd: OgdSection = field(default_factory=OgdSection)
    policy: PolicySection = field(default_factory=PolicySection)
    environment: EnvironmentSection = field(default_factory=EnvironmentSection)
    run: RunSection = field(default_factory=RunSection)
    diagnose: DiagnoseSection = field(default_factory=DiagnoseSection)
    bounds: BoundsSection = field(default_factory=BoundsSection)

    def network_config(self) -> NetworkConfig:
        n = self.network
        return NetworkConfig(d=n.d, m=n.m, L=n.L, sigma1=n.sigma1, activation=n.activation)

    def predictor_config(self) -> PredictorConfig:
        p = self.predictor
        S = p.S if p.S > 0 else default_num_draws(self.network.m)
        return PredictorConfig(loss_kind=p.loss_kind, c_p=p.c_p, S=S, z=p.z)

    def effective(self) -> dict:
        """Fully-resolved settings for manifests (defaults applied)."""
        out = {}
        for name in _SECTIONS:
            section = getattr(self, name)
            out[name] = {f.name: getattr(section, f.name) for f in fields(section)}
        out["predictor"]["S"] = self.predictor_config().S
        return out


def config_from_dict(data: dict) -> ExperimentConfig:
    cfg = ExperimentConfig()
    for section_name, entries in data.items():
        if section_name not in _SECTIONS:
            raise ConfigurationError(f"unknown section {section_name}")
        section = getattr(cfg, section_name)
        known = {f.name: f for f in fields(section)}
        for key, value in entries.items():
            if key not in known:
                raise ConfigurationError(f"unknown key {section_name}.{key}")
            current = getattr(section, key)
            if isinstance(current, bool) and not isinstance(value, bool):
                raise ConfigurationError(f"{section_name}.{key}: expected a boolean")
            if isinstance(current, float) and isinstance(value, int):
                value = float(value)
            if type(value) is not type(current):
                raise ConfigurationError(
                    f"{section_name}.{key}: expected {type(current).__name__}, "
                    f"got {type(value).__name__}"
                )
            setattr(section, key, value)
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig):
    if not cfg.run.seeds:
        raise ConfigurationError("run.seeds must be nonempty")
    if any((not isinstance(s, int)) or s < 0 for s in cfg.run.seeds):
        raise ConfigurationError("run.seeds must be nonnegative integers")
    if cfg.run.threads < 1:
        raise ConfigurationError("run.threads must be >= 1")
    if cfg.ogd.T < 1:
        raise ConfigurationError("ogd.T must be >= 1")
    if cfg.ogd.mu <= 0:
        raise ConfigurationError("ogd.mu must be positive")
    if cfg.ogd.rho_scale <= 0 or cfg.ogd.rho1 <= 0:
        raise ConfigurationError("ogd radii must be positive")
    # construct the value objects so their own validation runs now
    cfg.network_config()
    cfg.predictor_config()


def parse_config(path) -> ExperimentConfig:
    """Read and validate a config file, applying documented defaults."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    return config_from_dict(parse_toml_subset(text))
