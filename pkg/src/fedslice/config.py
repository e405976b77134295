"""Scenario configuration: defaults, YAML loading, strict validation.

The YAML tree mirrors the dataclass field names exactly; unknown keys are
rejected rather than ignored, since a silently dropped key is the easiest
way to ruin a reproduction run.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import yaml

SLICES = ("embb", "urllc", "mmtc")
N_SLICES = 3


class ConfigError(ValueError):
    """Invalid or unknown configuration content."""


@dataclass
class ChannelSettings:
    pathloss_exponent: float = 3.7
    shadowing_sigma_db: float = 6.0
    noise_power_w: float = 3.9810717055349695e-14  # -104 dBm over 20 MHz
    tx_power_w: float = 1.0
    inter_site_m: float = 500.0
    min_ue_distance_m: float = 10.0
    sinr_cap: float = 1e3
    interference_budget_dbm: float = -15.0

    @property
    def interference_budget_w(self) -> float:
        return 10.0 ** (self.interference_budget_dbm / 10.0) * 1e-3


@dataclass
class TrafficSettings:
    lambda_embb: float = 1.5
    lambda_urllc: float = 4.0
    lambda_mmtc: float = 1.0
    urllc_deadline_slots: int = 1
    packet_bits_embb: float = 100_000.0
    packet_bits_urllc: float = 1_000.0
    packet_bits_mmtc: float = 500.0
    required_rate_bps_embb: float = 5e7
    required_rate_bps_urllc: float = 0.0
    required_rate_bps_mmtc: float = 0.0

    def arrival_rates(self):
        return (self.lambda_embb, self.lambda_urllc, self.lambda_mmtc)

    def packet_bits(self):
        return (self.packet_bits_embb, self.packet_bits_urllc, self.packet_bits_mmtc)

    def required_rates_bps(self):
        return (
            self.required_rate_bps_embb,
            self.required_rate_bps_urllc,
            self.required_rate_bps_mmtc,
        )


@dataclass
class RewardSettings:
    tput_weight: tuple = (1.0, 1.0, 1.0)
    qos_weight: tuple = (0.1, 10.0, 0.1)
    recfg_weight: tuple = (0.1, 0.1, 0.1)


@dataclass
class AgentSettings:
    hidden: tuple = (128, 128)
    learning_rate: float = 3e-3
    discount: float = 0.99
    clip_ratio: float = 0.2
    entropy_weight: float = 0.01
    update_epochs: int = 4
    minibatch_size: int = 64
    advantage_steps: int = 1  # 1 = one-step TD error
    normalize_advantages: bool = True
    dual_step_sizes: tuple = (0.01, 0.01, 0.01)
    dual_tolerance: float = 1e-3
    dual_per_step: bool = False


@dataclass
class FederationSettings:
    rounds: int = 200
    local_steps: int = 1000
    sync_mode: str = "always"  # "always" or "loss"
    sync_threshold: float = 0.0
    distill_weight: float = 0.1
    distill_probes: int = 256


@dataclass
class RunSettings:
    seeds: int = 5
    base_seed: int = 0
    trace_gnb: int = 0
    eval_stochastic: bool = False


@dataclass
class ScenarioConfig:
    n_gnbs: int = 7
    ues_per_cell: int = 10
    bandwidth_hz: float = 20e6
    slot_seconds: float = 1e-3
    channel: ChannelSettings = field(default_factory=ChannelSettings)
    traffic: TrafficSettings = field(default_factory=TrafficSettings)
    reward: RewardSettings = field(default_factory=RewardSettings)
    agent: AgentSettings = field(default_factory=AgentSettings)
    federation: FederationSettings = field(default_factory=FederationSettings)
    run: RunSettings = field(default_factory=RunSettings)

    def validate(self) -> "ScenarioConfig":
        ch, tr = self.channel, self.traffic
        checks = [
            (self.n_gnbs >= 1, "n_gnbs must be >= 1"),
            (self.ues_per_cell >= 1, "ues_per_cell must be >= 1"),
            (self.bandwidth_hz > 0, "bandwidth_hz must be positive"),
            (self.slot_seconds > 0, "slot_seconds must be positive"),
            (ch.pathloss_exponent > 0, "pathloss_exponent must be positive"),
            (ch.shadowing_sigma_db >= 0, "shadowing_sigma_db must be >= 0"),
            (ch.noise_power_w > 0, "noise_power_w must be positive"),
            (ch.tx_power_w > 0, "tx_power_w must be positive"),
            (ch.inter_site_m > 0, "inter_site_m must be positive"),
            (0 < ch.min_ue_distance_m < ch.inter_site_m / 2,
             "min_ue_distance_m must lie inside the cell radius"),
            (min(tr.arrival_rates()) >= 0, "arrival rates must be >= 0"),
            (tr.urllc_deadline_slots >= 1, "urllc_deadline_slots must be >= 1"),
            (min(tr.packet_bits()) > 0, "packet sizes must be positive"),
            (0 < self.agent.discount < 1, "discount must be in (0, 1)"),
            (self.agent.clip_ratio > 0, "clip_ratio must be positive"),
            (self.agent.entropy_weight >= 0, "entropy_weight must be >= 0"),
            (self.agent.advantage_steps >= 1, "advantage_steps must be >= 1"),
            (min(self.agent.dual_step_sizes) >= 0, "dual step sizes must be >= 0"),
            (self.federation.rounds >= 0, "rounds must be >= 0"),
            (self.federation.local_steps >= 1, "local_steps must be >= 1"),
            (self.federation.sync_mode in ("always", "loss"),
             "sync_mode must be 'always' or 'loss'"),
            (self.run.seeds >= 1, "seeds must be >= 1"),
            (0 <= self.run.trace_gnb < self.n_gnbs, "trace_gnb out of range"),
            (min(self.reward.tput_weight + self.reward.qos_weight
                 + self.reward.recfg_weight) >= 0, "reward weights must be >= 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        return self


def apply_smoke(cfg: ScenarioConfig) -> ScenarioConfig:
    """Reduced-scale settings (20 rounds x 200 steps) for CI-speed runs."""
    cfg.federation.rounds = 20
    cfg.federation.local_steps = 200
    return cfg


def _merge(obj, data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"expected a mapping at '{path or '<root>'}'")
    fields = {f.name: f for f in dataclasses.fields(obj)}
    for key, value in data.items():
        if key not in fields:
            raise ConfigError(f"unknown config key '{path + key}'")
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current):
            _merge(current, value, path + key + ".")
        elif isinstance(current, tuple):
            if not isinstance(value, (list, tuple)) or len(value) != len(current):
                raise ConfigError(f"'{path + key}' must be a list of length {len(current)}")
            setattr(obj, key, tuple(type(c)(v) for c, v in zip(current, value)))
        elif isinstance(current, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"'{path + key}' must be a boolean")
            setattr(obj, key, value)
        elif isinstance(current, int):
            if isinstance(value, bool) or int(value) != value:
                raise ConfigError(f"'{path + key}' must be an integer")
            setattr(obj, key, int(value))
        elif isinstance(current, float):
            setattr(obj, key, float(value))
        elif isinstance(current, str):
            setattr(obj, key, str(value))
        else:  # pragma: no cover - no other field types exist
            raise ConfigError(f"unsupported field type at '{path + key}'")
    return obj


def from_dict(data: dict) -> ScenarioConfig:
    return _merge(ScenarioConfig(), data or {}, "").validate()


def load(path: str) -> ScenarioConfig:
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    return from_dict(data)


def to_dict(cfg: ScenarioConfig) -> dict:
    def conv(value):
        if dataclasses.is_dataclass(value):
            return {f.name: conv(getattr(value, f.name)) for f in dataclasses.fields(value)}
        if isinstance(value, tuple):
            return list(value)
        return value

    return conv(cfg)


def resolved_json(cfg: ScenarioConfig) -> str:
    """Canonical single-line dump used in reproducibility headers."""
    return json.dumps(to_dict(cfg), sort_keys=True, separators=(",", ":"))
