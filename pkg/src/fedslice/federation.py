"""Round orchestration: broadcast, local training, weighted averaging.

Each communication round broadcasts the global actor, lets every
participating agent roll out and train locally, then averages the uploaded
actor parameters weighted by local sample counts. Critics and dual
variables never leave their gNB; only scalar summaries travel. Rounds are
synchronous: an agent failure aborts the round rather than aggregating a
partial set.
"""

from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from fedslice import agent as agent_mod
from fedslice import nn
from fedslice.errors import ContractViolation, NumericalError


@dataclass(frozen=True)
class RoundPlan:
    """One communication round: who participates and for how long."""

    round_index: int
    participants: tuple
    local_steps: int
    weights: tuple | None = None  # None = derive from sample counts

    def __post_init__(self):
        if len(self.participants) == 0:
            raise ContractViolation("a round needs at least one participant")
        if len(set(self.participants)) != len(self.participants):
            raise ContractViolation("duplicate participants in round plan")
        if self.local_steps < 1:
            raise ContractViolation("local_steps must be >= 1")
        if self.weights is not None:
            if len(self.weights) != len(self.participants):
                raise ContractViolation("one weight per participant required")
            if abs(sum(self.weights) - 1.0) > 1e-12:
                raise ContractViolation("aggregation weights must sum to 1")


@dataclass
class ModelUpdate:
    """What one gNB uploads after local training."""

    gnb: int
    params: nn.ParamSet
    n_samples: int
    loss: float
    duals: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if self.n_samples <= 0:
            raise ContractViolation("sample count must be positive")
        if not self.params.all_finite():
            raise ContractViolation("uploaded parameters must be finite")

    def to_payload(self) -> dict:
        return {
            "gnb": self.gnb,
            "n_samples": self.n_samples,
            "loss": self.loss,
            "duals": [float(v) for v in self.duals],
            "params": base64.b64encode(nn.serialize(self.params)).decode("ascii"),
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "ModelUpdate":
        return cls(
            gnb=int(payload["gnb"]),
            params=nn.deserialize(base64.b64decode(payload["params"])),
            n_samples=int(payload["n_samples"]),
            loss=float(payload["loss"]),
            duals=np.asarray(payload["duals"], dtype=float),
        )

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_payload(), fh, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "ModelUpdate":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_payload(json.load(fh))


def params_checksum(params: nn.ParamSet) -> str:
    return hashlib.sha256(nn.serialize(params)).hexdigest()


def fedavg(updates, weights=None) -> nn.ParamSet:
    """Sample-count-weighted elementwise mean of uploaded parameters."""
    if not updates:
        raise ContractViolation("cannot aggregate an empty update list")
    sizes = updates[0].params.sizes
    for u in updates:
        if u.params.sizes != sizes:
            raise ContractViolation("shape mismatch across model updates")
    if weights is None:
        total = float(sum(u.n_samples for u in updates))
        weights = [u.n_samples / total for u in updates]
    elif abs(sum(weights) - 1.0) > 1e-12:
        raise ContractViolation("explicit weights must sum to 1")
    out = nn.ParamSet(sizes=updates[0].params.sizes)
    for w_n, update in zip(weights, updates):
        out.flat += w_n * update.params.flat
    return out


def sync_trigger(losses, threshold: float) -> bool:
    """Aggregate when the mean local loss strictly exceeds the threshold."""
    losses = np.asarray(losses, dtype=float)
    if losses.size == 0 or not np.all(np.isfinite(losses)):
        raise ContractViolation("losses must be a nonempty finite list")
    return bool(losses.mean() > threshold)


def distillation_loss(local: nn.ParamSet, global_params: nn.ParamSet,
                      probe_obs: np.ndarray) -> float:
    """Mean squared distance between local and global mean allocations."""
    probe_obs = np.atleast_2d(np.asarray(probe_obs, dtype=float))
    if probe_obs.shape[0] == 0:
        raise ContractViolation("probe batch must be nonempty")
    mu_local = agent_mod.dirichlet_mean(
        agent_mod.policy_concentrations(local, probe_obs)
    )
    mu_global = agent_mod.dirichlet_mean(
        agent_mod.policy_concentrations(global_params, probe_obs)
    )
    return float(np.mean(np.sum((mu_local - mu_global) ** 2, axis=1)))


def run_round(plan: RoundPlan, global_params: nn.ParamSet, agents, env,
              sync_mode: str = "always", sync_threshold: float = 0.0,
              distill_weight: float = 0.0, n_probes: int = 0,
              broadcast: bool = True):
    """Execute one synchronous round.

    Returns (new_global_params, per_gnb_records, aggregated_flag). The
    records carry the per-gNB rollout means and training stats the caller
    folds into round files.
    """
    n_agents = len(agents)
    if broadcast:
        for idx in plan.participants:
            agents[idx].set_actor(global_params)

    obs = env.reset()
    sums = {
        "reward": np.zeros(n_agents),
        "g": np.zeros((n_agents, 3)),
        "alloc": np.zeros((n_agents, 3)),
    }
    ep_return = np.zeros(n_agents)
    disc = 1.0
    participating = set(plan.participants)
    bank = agent_mod.ActorBank(
        [ag.actor for ag in agents], [ag.policy_rng for ag in agents]
    )
    for t in range(plan.local_steps):
        actions, logps = bank.act_all(obs)
        outcome = env.step(actions)
        done = t == plan.local_steps - 1
        for i, ag in enumerate(agents):
            if i in participating:
                ag.observe(
                    obs[i], actions[i], logps[i], float(outcome.rewards[i]),
                    outcome.constraints[i], outcome.obs[i], done,
                )
        sums["reward"] += outcome.rewards
        sums["g"] += outcome.constraints
        sums["alloc"] += actions
        ep_return += disc * outcome.rewards
        disc *= agents[0].hyper.discount
        obs = outcome.obs

    bound = env.weights.max_slot_reward / (1.0 - agents[0].hyper.discount)
    if np.any(ep_return > bound + 1e-9):
        raise NumericalError("episode return exceeded its theoretical bound")

    updates, records = [], []
    for i, ag in enumerate(agents):
        record = {
            "gnb": i,
            "reward_raw": float(sums["reward"][i] / plan.local_steps),
            "g1": float(sums["g"][i, 0] / plan.local_steps),
            "g2": float(sums["g"][i, 1] / plan.local_steps),
            "g3": float(sums["g"][i, 2] / plan.local_steps),
            "alloc": [float(a / plan.local_steps) for a in sums["alloc"][i]],
        }
        if i in participating:
            stats = ag.update(
                distill_to=global_params, distill_weight=distill_weight,
                n_probes=n_probes,
            )
            updates.append(
                ModelUpdate(
                    gnb=i, params=ag.actor, n_samples=stats["samples"],
                    loss=stats["critic_loss"], duals=ag.duals.values.copy(),
                )
            )
            record.update(
                actor_loss=stats["actor_loss"],
                critic_loss=stats["critic_loss"],
                entropy=stats["entropy"],
                distill=stats["distill"],
                duals=[float(v) for v in ag.duals.values],
            )
        records.append(record)

    aggregate = bool(updates) and (
        sync_mode == "always"
        or sync_trigger([u.loss for u in updates], sync_threshold)
    )
    new_global = fedavg(updates) if aggregate else global_params
    return new_global, records, aggregate
