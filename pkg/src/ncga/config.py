"""Experiment configuration as ``key = value`` text.

Keys mirror the command-line flag names (``pop-size``, ``file-blocks``...).
Lists are comma separated.  Blank lines and ``#`` comments are ignored.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any

from .coding import FitnessCoefficients
from .errors import NcgaError
from .ga import GaParams


class ConfigError(ValueError):
    pass


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(",") if x.strip())


def _strs(text: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in text.split(",") if x.strip())


def _opt_str(text: str):
    return text or None


@dataclass(frozen=True)
class ExperimentConfig:
    # network: a file, or generator parameters
    network: str | None = None
    nodes: int = 30
    links: int = 90
    receivers: int = 20
    rate: int = 5
    # GA
    pop_size: int = 50
    crossover_prob: float = 0.8
    mutation_prob: float = 0.01
    max_generations: int = 100
    elite_count: int = 2
    p_uniform: float = 0.5
    p_struct: float = 0.1
    improvement_threshold: float = 1e-3
    stall_generations: int = 10
    eval_trials: int = 3
    q: int = 8
    churn_links: int = 0
    churn_down_prob: float = 0.2
    churn_tolerance: float = 1.0
    churn_max_trials: int = 30
    # fitness weights
    a1: float = 10.0
    a2: float = 10.0
    a3: float = 1.0
    a4: float = 1.0
    a5: float = 100.0
    a6: float = 100.0
    # simulation
    block_size: int = 16
    blocks_per_segment: int = 8
    file_blocks: tuple[int, ...] = (64, 128, 256)
    dynamic_links: tuple[int, ...] = (0,)
    strategies: tuple[str, ...] = ("GANS", "RSN", "CAN", "NONE")
    rsn_count: int = 0
    deadline: int = 1000
    window: int = 8
    ideal: str = "peer"
    trace: bool = False
    # run
    seed: int = 0
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4, 5, 6, 7, 8, 9)
    out: str = "out"

    def ga_params(self) -> GaParams:
        names = {f.name for f in fields(GaParams)}
        return GaParams(**{k: getattr(self, k) for k in names})

    def coefficients(self, target_rate: int) -> FitnessCoefficients:
        return FitnessCoefficients(self.a1, self.a2, self.a3, self.a4, self.a5, self.a6, target_rate)

    def validate(self) -> "ExperimentConfig":
        try:
            self.ga_params()
            self.coefficients(max(self.rate, 1))
        except (ValueError, NcgaError) as e:
            raise ConfigError(str(e)) from None
        if self.network not in (None, "butterfly") and not Path(self.network).is_file():
            raise ConfigError(f"network file not found: {self.network}")
        if self.block_size < 1 or self.blocks_per_segment < 1 or self.window < 1 or self.deadline < 0:
            raise ConfigError("block-size, blocks-per-segment and window must be positive, deadline >= 0")
        if not self.file_blocks or min(self.file_blocks) < 1:
            raise ConfigError("file-blocks must list positive sizes")
        if not self.dynamic_links or min(self.dynamic_links) < 0:
            raise ConfigError("dynamic-links must list non-negative counts")
        if any(s not in ("GANS", "RSN", "CAN", "NONE") for s in self.strategies):
            raise ConfigError(f"unknown strategy in {self.strategies}")
        if self.ideal not in ("peer", "tree"):
            raise ConfigError("ideal must be peer or tree")
        if not self.seeds:
            raise ConfigError("seeds must not be empty")
        return self


_PARSERS: dict[str, Any] = {
    int: int,
    float: float,
    bool: lambda s: {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}[s.lower()],
    "tuple[int, ...]": _ints,
    "tuple[str, ...]": _strs,
    "str | None": _opt_str,
    str: str,
}

_FIELDS = {f.name: f for f in fields(ExperimentConfig)}


def key_of(name: str) -> str:
    return name.replace("_", "-")


def _parse_value(name: str, text: str):
    f = _FIELDS[name]
    typ = f.type if f.type in _PARSERS else {"int": int, "float": float, "bool": bool, "str": str}.get(f.type, f.type)
    try:
        return _PARSERS[typ](text.strip())
    except (KeyError, ValueError):
        raise ConfigError(f"bad value for {key_of(name)}: {text!r}") from None


def _format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    values = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        name = k.replace("-", "_")
        if name not in _FIELDS:
            raise ConfigError(f"line {n}: unknown key {k!r}")
        values[name] = _parse_value(name, v)
    return replace(base or ExperimentConfig(), **values)


def serialize_config(cfg: ExperimentConfig) -> str:
    return "".join(f"{key_of(f.name)} = {_format_value(getattr(cfg, f.name))}\n" for f in fields(cfg))


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return parse_config(text)


def with_overrides(cfg: ExperimentConfig, overrides: dict[str, str]) -> ExperimentConfig:
    """Apply flag values given as text (``None`` means not given)."""
    vals = {k: _parse_value(k, v) for k, v in overrides.items() if v is not None}
    return replace(cfg, **vals)
