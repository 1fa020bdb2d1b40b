"""Declarative run configuration: one YAML document covering the simulator,
featurizer, both networks, thresholds, and class weights. Unknown keys are
rejected; flag overrides take precedence over the file, which takes
precedence over defaults. Every run logs the resolved configuration."""
from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field, replace
from typing import Any, Optional

import yaml

from .domain import Direction
from .evaluate import ValidationSettings
from .network import DenseNetConfig, RecurrentNetConfig
from .simulate import CohortSpec, PhysicianPolicy

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


# defaults sized for desk-scale synthetic work; the full-scale settings
# (10x512 layers, 1000 epochs) are one YAML file away
DEFAULT_ESA_NET = dict(hidden_layers=3, units=64, dropout_rate=0.10,
                       l1_coefficient=1e-4, learning_rate=1e-3, epochs=100,
                       batch_size=64, seed=11)
DEFAULT_IS_NET = dict(hidden_layers=2, units=64, dropout_rate=0.10,
                      l1_coefficient=1e-4, learning_rate=1e-3, epochs=60,
                      batch_size=64, seed=12)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 7
    history_len: int = 4
    lookahead: int = 3
    esa_net: dict = field(default_factory=lambda: dict(DEFAULT_ESA_NET))
    is_net: dict = field(default_factory=lambda: dict(DEFAULT_IS_NET))
    threshold_mode: str = "select_on_train"
    esa_threshold: float = 0.475
    is_threshold: float = 0.470
    esa_class_weights: Optional[dict[str, float]] = None  # None = inverse frequency
    is_class_weights: Optional[dict[str, float]] = None
    simulator: dict = field(default_factory=dict)

    def esa_config(self) -> DenseNetConfig:
        return DenseNetConfig(output_classes=3, **self.esa_net)

    def is_config(self) -> RecurrentNetConfig:
        return RecurrentNetConfig(output_classes=2, **self.is_net)

    def validation_settings(self) -> ValidationSettings:
        def parse_weights(raw):
            if raw is None:
                return None
            return {Direction(k): float(v) for k, v in raw.items()}
        return ValidationSettings(
            esa_config=self.esa_config(),
            is_config=self.is_config(),
            history_len=self.history_len,
            esa_weights=parse_weights(self.esa_class_weights),
            is_weights=parse_weights(self.is_class_weights),
            threshold_mode=self.threshold_mode,
            esa_threshold=self.esa_threshold,
            is_threshold=self.is_threshold,
            lookahead=self.lookahead,
        )

    def cohort_spec(self) -> CohortSpec:
        sim = dict(self.simulator)
        policy_keys = {f.name for f in dataclasses.fields(PhysicianPolicy)}
        policy_args = {k: sim.pop(k) for k in list(sim) if k in policy_keys}
        spec_keys = {f.name for f in dataclasses.fields(CohortSpec)} - {"policy"}
        unknown = set(sim) - spec_keys
        if unknown:
            raise ConfigError(f"unknown simulator keys: {sorted(unknown)}")
        return CohortSpec(seed=self.seed, policy=PhysicianPolicy(**policy_args), **sim)

    def resolved(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)


_NET_KEYS = {"hidden_layers", "units", "dropout_rate", "l1_coefficient",
             "learning_rate", "epochs", "batch_size", "seed", "input_dim"}


def _check_keys(mapping: dict, allowed: set[str], context: str) -> None:
    unknown = set(mapping) - allowed
    if unknown:
        raise ConfigError(f"unknown {context} keys: {sorted(unknown)}")


def load_config(path: Optional[str] = None,
                overrides: Optional[dict[str, Any]] = None) -> RunConfig:
    """Defaults, overlaid with the YAML file (if given), overlaid with flag
    overrides. The resolved document is logged."""
    data: dict[str, Any] = {}
    if path:
        with open(path, "r", encoding="utf-8") as fh:
            loaded = yaml.safe_load(fh) or {}
        if not isinstance(loaded, dict):
            raise ConfigError("config file must be a mapping")
        data.update(loaded)
    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value

    top_keys = {f.name for f in dataclasses.fields(RunConfig)}
    _check_keys(data, top_keys, "config")
    for net_key in ("esa_net", "is_net"):
        if net_key in data:
            _check_keys(data[net_key], _NET_KEYS, net_key)
            merged = dict(DEFAULT_ESA_NET if net_key == "esa_net" else DEFAULT_IS_NET)
            merged.update(data[net_key])
            data[net_key] = merged
    config = RunConfig(**data)
    logger.info("resolved config:\n%s", config.resolved())
    return config
