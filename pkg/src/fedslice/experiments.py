"""Experiment suites: training runs, delay CDFs, traces, and load sweeps.

Every output file opens with a reproducibility header carrying the fully
resolved configuration, the seed(s), and the normalization constants; no
timestamps or environment-dependent content, so identical seeds produce
byte-identical files.
"""

from __future__ import annotations

import copy
import json
import os
from pathlib import Path

import numpy as np

from fedslice import agent as agent_mod
from fedslice import baselines, config as config_mod, federation, nn, seeding
from fedslice.agent import SliceAgent, mean_action
from fedslice.baselines import BaselineKind
from fedslice.config import N_SLICES, ScenarioConfig
from fedslice.env import OBS_DIM, SlicingEnv, URLLC, clip_to_simplex
from fedslice.errors import ConfigError, NumericalError

LEARNED_POLICY = "fedppo"
POLICY_KINDS = (LEARNED_POLICY, "equal", "queueprop", "random")

GLOBAL_ACTOR_FILE = "global_actor.bin"
ROUNDS_FILE = "rounds.jsonl"


def _check_policy(policy: str):
    if policy not in POLICY_KINDS:
        raise ConfigError(f"unknown policy '{policy}'; choose from {POLICY_KINDS}")


def _header(cfg: ScenarioConfig, seeds, extra=None) -> dict:
    head = {
        "type": "header",
        "config": json.loads(config_mod.resolved_json(cfg)),
        "seeds": list(seeds),
        "normalization": {
            "throughput_norm_bits_per_slot": cfg.bandwidth_hz
            * cfg.slot_seconds
            * float(np.log2(1.0 + cfg.channel.sinr_cap)),
            "reward_per_hz_divisor": cfg.bandwidth_hz,
        },
    }
    if extra:
        head.update(extra)
    return head


def _write_csv(path: Path, header: dict, columns, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def seed_list(cfg: ScenarioConfig) -> list:
    return [cfg.run.base_seed + i for i in range(cfg.run.seeds)]


# -- training ------------------------------------------------------------------


def _baseline_actions(kind: BaselineKind, env: SlicingEnv, rngs) -> np.ndarray:
    policy = baselines.make_policy(kind)
    queues = env.queue_lengths()
    return np.stack([policy(queues[n], rngs[n]) for n in range(env.n)])


def train_one_seed(cfg: ScenarioConfig, policy: str, seed: int,
                   out_dir: Path | None = None, dump_updates: bool = False):
    """Run the full round schedule for one seed; returns per-round records."""
    _check_policy(policy)
    env = SlicingEnv(cfg, seed)
    fed = cfg.federation
    writer = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        writer = open(out_dir / ROUNDS_FILE, "w", encoding="utf-8")
        writer.write(json.dumps(_header(cfg, [seed], {"policy": policy}),
                                sort_keys=True) + "\n")

    records = []
    try:
        if policy == LEARNED_POLICY:
            agents = [SliceAgent(n, cfg, seed) for n in range(cfg.n_gnbs)]
            global_actor = nn.ParamSet.init(
                [OBS_DIM] + list(cfg.agent.hidden) + [N_SLICES],
                seeding.stream(seed, seeding.NET_INIT, cfg.n_gnbs),
            )
            broadcast = True
            for k in range(fed.rounds):
                plan = federation.RoundPlan(
                    round_index=k,
                    participants=tuple(range(cfg.n_gnbs)),
                    local_steps=fed.local_steps,
                )
                global_actor, gnb_records, aggregated = federation.run_round(
                    plan, global_actor, agents, env,
                    sync_mode=fed.sync_mode, sync_threshold=fed.sync_threshold,
                    distill_weight=fed.distill_weight, n_probes=fed.distill_probes,
                    broadcast=broadcast,
                )
                broadcast = aggregated
                record = _round_record(cfg, k, gnb_records, aggregated,
                                       federation.params_checksum(global_actor))
                _emit_round(record, records, writer, out_dir)
                if dump_updates and out_dir is not None:
                    upd_dir = out_dir / "updates"
                    upd_dir.mkdir(exist_ok=True)
                    for rec, ag in zip(gnb_records, agents):
                        federation.ModelUpdate(
                            gnb=ag.gnb, params=ag.actor,
                            n_samples=fed.local_steps,
                            loss=rec.get("critic_loss", 0.0),
                            duals=ag.duals.values.copy(),
                        ).save(upd_dir / f"round{k:04d}_gnb{ag.gnb}.json")
            if out_dir is not None:
                with open(out_dir / GLOBAL_ACTOR_FILE, "wb") as fh:
                    fh.write(nn.serialize(global_actor))
            return records, global_actor
        else:
            kind = BaselineKind(policy)
            rngs = [seeding.stream(seed, seeding.BASELINE, n)
                    for n in range(cfg.n_gnbs)]
            for k in range(fed.rounds):
                obs = env.reset()
                sums = {"reward": np.zeros(cfg.n_gnbs),
                        "g": np.zeros((cfg.n_gnbs, 3)),
                        "alloc": np.zeros((cfg.n_gnbs, N_SLICES))}
                for _ in range(fed.local_steps):
                    actions = _baseline_actions(kind, env, rngs)
                    outcome = env.step(actions)
                    sums["reward"] += outcome.rewards
                    sums["g"] += outcome.constraints
                    sums["alloc"] += actions
                    obs = outcome.obs
                gnb_records = [
                    {
                        "gnb": n,
                        "reward_raw": float(sums["reward"][n] / fed.local_steps),
                        "g1": float(sums["g"][n, 0] / fed.local_steps),
                        "g2": float(sums["g"][n, 1] / fed.local_steps),
                        "g3": float(sums["g"][n, 2] / fed.local_steps),
                        "alloc": [float(a / fed.local_steps)
                                  for a in sums["alloc"][n]],
                    }
                    for n in range(cfg.n_gnbs)
                ]
                record = _round_record(cfg, k, gnb_records, False, None)
                _emit_round(record, records, writer, out_dir)
            return records, None
    finally:
        if writer is not None:
            writer.close()


def _round_record(cfg, k, gnb_records, aggregated, checksum):
    def net_mean(key):
        return float(np.mean([r[key] for r in gnb_records]))

    record = {
        "type": "round",
        "round": k,
        "aggregated": aggregated,
        "per_gnb": gnb_records,
        "reward_raw": net_mean("reward_raw"),
        "reward_per_hz": net_mean("reward_raw") / cfg.bandwidth_hz,
        "g1": net_mean("g1"),
        "g2": net_mean("g2"),
        "g3": net_mean("g3"),
        "alloc": [
            float(np.mean([r["alloc"][s] for r in gnb_records]))
            for s in range(N_SLICES)
        ],
    }
    if "actor_loss" in gnb_records[0]:
        record["actor_loss"] = net_mean("actor_loss")
        record["critic_loss"] = net_mean("critic_loss")
    if checksum is not None:
        record["global_checksum"] = checksum
    return record


def _emit_round(record, records, writer, out_dir):
    for key in ("reward_raw", "g1", "g2", "g3"):
        if not np.isfinite(record[key]):
            if out_dir is not None:
                with open(Path(out_dir) / f"diagnostic_round_{record['round']}.json",
                          "w", encoding="utf-8") as fh:
                    json.dump(record, fh, sort_keys=True, indent=1)
            raise NumericalError(
                f"non-finite metric {key} at round {record['round']}"
            )
    records.append(record)
    if writer is not None:
        writer.write(json.dumps(record, sort_keys=True) + "\n")
        writer.flush()


def run_training(cfg: ScenarioConfig, policy: str, out_dir: Path,
                 dump_updates: bool = False):
    """Train (or roll out a baseline) for every configured seed."""
    _check_policy(policy)
    out_dir = Path(out_dir)
    per_seed = {}
    for seed in seed_list(cfg):
        records, _ = train_one_seed(
            cfg, policy, seed, out_dir / f"seed{seed}", dump_updates=dump_updates
        )
        per_seed[seed] = records
    _export_fig1(cfg, policy, out_dir, per_seed)
    return per_seed


def _export_fig1(cfg, policy, out_dir, per_seed):
    seeds = sorted(per_seed)
    rounds = range(cfg.federation.rounds)
    head = _header(cfg, seeds, {"policy": policy})
    reward_rows, constraint_rows = [], []
    for k in rounds:
        raw = np.array([per_seed[s][k]["reward_raw"] for s in seeds])
        per_hz = np.array([per_seed[s][k]["reward_per_hz"] for s in seeds])
        g1 = np.array([per_seed[s][k]["g1"] for s in seeds])
        g2 = np.array([per_seed[s][k]["g2"] for s in seeds])
        reward_rows.append(
            (k, float(raw.mean()), float(raw.std()), float(per_hz.mean()),
             float(per_hz.std()))
        )
        constraint_rows.append(
            (k, float(g1.mean()), float(g1.std()), float(g2.mean()),
             float(g2.std()))
        )
    _write_csv(out_dir / "fig1_reward.csv", head,
               ["round", "reward_raw_mean", "reward_raw_std",
                "reward_per_hz_mean", "reward_per_hz_std"], reward_rows)
    _write_csv(out_dir / "fig1_constraints.csv", head,
               ["round", "g1_mean", "g1_std", "g2_mean", "g2_std"],
               constraint_rows)


# -- evaluation ----------------------------------------------------------------


def load_global_actor(models_dir: Path, seed: int) -> nn.ParamSet:
    path = Path(models_dir) / f"seed{seed}" / GLOBAL_ACTOR_FILE
    if not path.exists():
        raise ConfigError(f"no trained model at {path}")
    return nn.deserialize(path.read_bytes())


class EvalPolicy:
    """Uniform acting interface over trained actors and baselines."""

    def __init__(self, name: str, cfg: ScenarioConfig, seed: int,
                 actor: nn.ParamSet | None = None):
        _check_policy(name)
        self.name = name
        self.stochastic = cfg.run.eval_stochastic
        self.actor = actor
        if name == LEARNED_POLICY and actor is None:
            raise ConfigError("learned policy evaluation requires a trained actor")
        self._kind = None if name == LEARNED_POLICY else BaselineKind(name)
        self._rngs = [
            seeding.stream(seed, seeding.EVAL + 10, n) for n in range(cfg.n_gnbs)
        ]
        self._fn = None if self._kind is None else baselines.make_policy(self._kind)

    def actions(self, obs: np.ndarray, queues: np.ndarray) -> np.ndarray:
        n = obs.shape[0]
        if self._fn is not None:
            return np.stack([self._fn(queues[i], self._rngs[i]) for i in range(n)])
        if self.stochastic:
            return np.stack(
                [agent_mod.act(self.actor, obs[i], self._rngs[i])[0]
                 for i in range(n)]
            )
        # one trained actor serves every gNB: a single batched forward
        alpha = agent_mod.policy_concentrations(self.actor, obs)
        mu = agent_mod.dirichlet_mean(alpha)
        for i in range(n):
            mu[i] = clip_to_simplex(mu[i])
        return mu


def evaluate_policy(cfg: ScenarioConfig, policy: EvalPolicy, seed: int,
                    slots: int, collect_traces: bool = False,
                    lambda_urllc: float | None = None):
    """Roll a fixed policy for ``slots`` slots on evaluation streams.

    Episodes follow the training horizon so shadowing is refreshed at the
    same cadence. Returns delay statistics, per-slot means, and optional
    traces.
    """
    cfg = copy.deepcopy(cfg)
    if lambda_urllc is not None:
        cfg.traffic.lambda_urllc = float(lambda_urllc)
    env = SlicingEnv(cfg, seed, rng_domain=seeding.EVAL)
    horizon = cfg.federation.local_steps
    episodes = max(1, int(np.ceil(slots / horizon)))
    delays = []
    arrivals = 0
    g2_total = 0.0
    reward_total = 0.0
    steps = 0
    traces = {"queues": [], "alloc": []} if collect_traces else None
    for _ in range(episodes):
        obs = env.reset()
        for _ in range(horizon):
            actions = policy.actions(obs, env.queue_lengths())
            outcome = env.step(actions)
            g2_total += float(outcome.constraints[:, 1].mean())
            reward_total += float(outcome.rewards.mean())
            steps += 1
            if collect_traces:
                traces["queues"].append(outcome.queue_lengths.copy())
                traces["alloc"].append(actions.copy())
            obs = outcome.obs
        for n in range(cfg.n_gnbs):
            q = env.queues[n][URLLC]
            delays.extend(q.served_delays)
            arrivals += q.arrivals_total
    result = {
        "delays": np.asarray(delays, dtype=int),
        "arrivals": arrivals,
        "mean_g2": g2_total / steps,
        "mean_reward_raw": reward_total / steps,
        "mean_reward_per_hz": reward_total / steps / cfg.bandwidth_hz,
        "slots": steps,
    }
    if collect_traces:
        result["queues"] = np.stack(traces["queues"])  # (T, N, S)
        result["alloc"] = np.stack(traces["alloc"])    # (T, N, S)
    return result


def delay_cdf(delays: np.ndarray, arrivals: int, grid) -> list:
    """Empirical CDF over all arrived packets (uncompleted count as late)."""
    if arrivals <= 0:
        return [(int(d), 0.0) for d in grid]
    return [(int(d), float(np.sum(delays <= d) / arrivals)) for d in grid]


def _eval_policies(cfg, policies, models_dir):
    out = []
    for name in policies:
        _check_policy(name)
        out.append(name)
    if LEARNED_POLICY in out and models_dir is None:
        raise ConfigError("evaluating the learned policy requires --models")
    return out


def run_delay_cdf(cfg: ScenarioConfig, policies, models_dir, slots: int,
                  out_dir: Path, max_delay: int = 20):
    """Delay CDF per policy over at least ``slots`` evaluation slots."""
    policies = _eval_policies(cfg, policies, models_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = seed_list(cfg)
    per_policy = {}
    rows = []
    grid = range(1, max_delay + 1)
    per_seed_slots = max(1, slots // len(seeds))
    for name in policies:
        delays, arrivals = [], 0
        for seed in seeds:
            actor = (load_global_actor(models_dir, seed)
                     if name == LEARNED_POLICY else None)
            res = evaluate_policy(
                cfg, EvalPolicy(name, cfg, seed, actor), seed, per_seed_slots
            )
            delays.append(res["delays"])
            arrivals += res["arrivals"]
        cdf = delay_cdf(np.concatenate(delays), arrivals, grid)
        per_policy[name] = dict(cdf)
        rows.extend((name, d, c) for d, c in cdf)
    _write_csv(out_dir / "fig2_cdf.csv", _header(cfg, seeds,
               {"policies": policies, "slots_per_seed": per_seed_slots}),
               ["policy", "delay_slots", "cdf"], rows)
    return per_policy


def run_queue_traces(cfg: ScenarioConfig, policies, models_dir, slots: int,
                     out_dir: Path):
    """Per-slot queue and allocation series for the designated gNB."""
    policies = _eval_policies(cfg, policies, models_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = seed_list(cfg)
    gnb = cfg.run.trace_gnb
    rows = []
    results = {}
    for name in policies:
        per_seed = {}
        for seed in seeds:
            actor = (load_global_actor(models_dir, seed)
                     if name == LEARNED_POLICY else None)
            res = evaluate_policy(
                cfg, EvalPolicy(name, cfg, seed, actor), seed, slots,
                collect_traces=True,
            )
            per_seed[seed] = res
            if seed == seeds[0]:
                for t in range(res["queues"].shape[0]):
                    q = res["queues"][t, gnb]
                    a = res["alloc"][t, gnb]
                    rows.append((name, t, int(q[0]), int(q[1]), int(q[2]),
                                 float(a[0]), float(a[1]), float(a[2])))
        results[name] = per_seed
    _write_csv(out_dir / "fig3_traces.csv", _header(cfg, seeds,
               {"policies": policies, "trace_gnb": gnb, "trace_seed": seeds[0]}),
               ["policy", "slot", "queue_embb", "queue_urllc", "queue_mmtc",
                "alloc_embb", "alloc_urllc", "alloc_mmtc"], rows)
    return results


def allocation_variance(alloc: np.ndarray) -> float:
    """Mean over gNBs and slices of the per-series allocation variance."""
    return float(np.mean(np.var(alloc, axis=0)))


def run_load_sweep(cfg: ScenarioConfig, policies, models_dir, lambdas,
                   slots: int, out_dir: Path):
    """Reward and URLLC-violation means across the offered-load grid."""
    policies = _eval_policies(cfg, policies, models_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = seed_list(cfg)
    rows = []
    table = {}
    for name in policies:
        for lam in lambdas:
            g2s, rewards = [], []
            for seed in seeds:
                actor = (load_global_actor(models_dir, seed)
                         if name == LEARNED_POLICY else None)
                res = evaluate_policy(
                    cfg, EvalPolicy(name, cfg, seed, actor), seed, slots,
                    lambda_urllc=float(lam),
                )
                g2s.append(res["mean_g2"])
                rewards.append(res["mean_reward_per_hz"])
            g2s, rewards = np.asarray(g2s), np.asarray(rewards)
            table[(name, float(lam))] = {
                "g2_mean": float(g2s.mean()), "g2_std": float(g2s.std()),
                "reward_mean": float(rewards.mean()),
                "reward_std": float(rewards.std()),
            }
            rows.append((name, float(lam), float(rewards.mean()),
                         float(rewards.std()), float(g2s.mean()),
                         float(g2s.std())))
    _write_csv(out_dir / "fig4_sweep.csv", _header(cfg, seeds,
               {"policies": policies, "lambda_grid": [float(x) for x in lambdas],
                "slots_per_point": slots}),
               ["policy", "lambda_urllc", "reward_per_hz_mean",
                "reward_per_hz_std", "g2_mean", "g2_std"], rows)
    return table


def output_dir(flag_value: str | None) -> Path:
    """Output directory from the flag or the FEDSLICE_OUT override."""
    if flag_value:
        return Path(flag_value)
    return Path(os.environ.get("FEDSLICE_OUT", "out"))
