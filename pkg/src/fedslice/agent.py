"""Per-gNB constrained actor-critic.

The actor maps an observation to Dirichlet concentrations (softplus of the
network output plus one), so sampled allocations live on the 3-simplex and
the feasibility signal is zero by construction. Training is on-policy:
clipped-surrogate policy updates with an entropy bonus, a one-step TD
critic, and projected ascent on the nonnegative multipliers that price the
constraint signals into the adjusted reward.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import digamma, expit, gammaln, polygamma

from fedslice import nn, seeding
from fedslice.config import N_SLICES, AgentSettings
from fedslice.env import OBS_DIM, clip_to_simplex
from fedslice.errors import ContractViolation, NumericalError, PolicyFault

N_CONSTRAINTS = 3


# -- Dirichlet head ----------------------------------------------------------

def concentrations(raw: np.ndarray) -> np.ndarray:
    """softplus(raw) + 1: strictly positive, bounded away from the corners."""
    return np.maximum(raw, 0.0) + np.log1p(np.exp(-np.abs(raw))) + 1.0


def _conc_slope(raw: np.ndarray) -> np.ndarray:
    """d concentrations / d raw output (the logistic sigmoid)."""
    return expit(raw)


def dirichlet_mean(alpha: np.ndarray) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=float)
    return alpha / alpha.sum(axis=-1, keepdims=True)


def dirichlet_log_prob(alpha: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Log density on the simplex; broadcasts over leading batch axes."""
    alpha = np.asarray(alpha, dtype=float)
    x = np.asarray(x, dtype=float)
    log_x = np.log(np.maximum(x, 1e-300))
    a0 = alpha.sum(axis=-1)
    return ((alpha - 1.0) * log_x).sum(axis=-1) + gammaln(a0) - gammaln(alpha).sum(axis=-1)


def dirichlet_entropy(alpha: np.ndarray) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=float)
    a0 = alpha.sum(axis=-1)
    k = alpha.shape[-1]
    log_beta = gammaln(alpha).sum(axis=-1) - gammaln(a0)
    return log_beta + (a0 - k) * digamma(a0) - ((alpha - 1.0) * digamma(alpha)).sum(axis=-1)


def _d_log_prob_d_alpha(alpha, x):
    a0 = alpha.sum(axis=-1, keepdims=True)
    return np.log(np.maximum(x, 1e-300)) + digamma(a0) - digamma(alpha)


def _d_entropy_d_alpha(alpha):
    a0 = alpha.sum(axis=-1, keepdims=True)
    k = alpha.shape[-1]
    return (a0 - k) * polygamma(1, a0) - (alpha - 1.0) * polygamma(1, alpha)


# -- dual variables ----------------------------------------------------------

@dataclass(frozen=True)
class DualVariables:
    """Nonnegative constraint multipliers with their ascent step sizes."""

    values: np.ndarray = field(default_factory=lambda: np.zeros(N_CONSTRAINTS))
    step_sizes: np.ndarray = field(
        default_factory=lambda: np.full(N_CONSTRAINTS, 0.01)
    )

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        object.__setattr__(self, "step_sizes", np.asarray(self.step_sizes, dtype=float))
        if np.any(self.values < 0):
            raise ContractViolation("dual variables must be nonnegative")


def dual_update(duals: DualVariables, g_hat) -> DualVariables:
    """Projected ascent: lambda <- max(0, lambda + step * g_hat)."""
    g_hat = np.asarray(g_hat, dtype=float)
    if not np.all(np.isfinite(g_hat)):
        raise ContractViolation("constraint estimates must be finite")
    new = np.maximum(0.0, duals.values + duals.step_sizes * g_hat)
    return DualVariables(values=new, step_sizes=duals.step_sizes)


def adjusted_reward(reward: float, g, duals: DualVariables) -> float:
    """Lagrangian-adjusted reward: r minus the priced constraint signals."""
    g = np.asarray(g, dtype=float)
    return float(reward - np.dot(duals.values, g))


# -- transitions and hyperparameters ----------------------------------------

@dataclass
class Transition:
    state: np.ndarray
    action: np.ndarray
    adjusted: float
    raw_reward: float
    constraints: np.ndarray
    next_state: np.ndarray
    log_prob: float
    done: bool


@dataclass(frozen=True)
class AgentHyper:
    discount: float = 0.99
    clip_ratio: float = 0.2
    entropy_weight: float = 0.01
    update_epochs: int = 4
    minibatch_size: int = 64
    advantage_steps: int = 1
    normalize_advantages: bool = True
    dual_tolerance: float = 1e-3

    @classmethod
    def from_settings(cls, s: AgentSettings) -> "AgentHyper":
        return cls(
            discount=s.discount,
            clip_ratio=s.clip_ratio,
            entropy_weight=s.entropy_weight,
            update_epochs=s.update_epochs,
            minibatch_size=s.minibatch_size,
            advantage_steps=s.advantage_steps,
            normalize_advantages=s.normalize_advantages,
            dual_tolerance=s.dual_tolerance,
        )


def _stack(transitions):
    return {
        "obs": np.stack([t.state for t in transitions]),
        "actions": np.stack([t.action for t in transitions]),
        "adjusted": np.array([t.adjusted for t in transitions]),
        "raw": np.array([t.raw_reward for t in transitions]),
        "g": np.stack([t.constraints for t in transitions]),
        "next_obs": np.stack([t.next_state for t in transitions]),
        "logp": np.array([t.log_prob for t in transitions]),
        "done": np.array([t.done for t in transitions], dtype=float),
    }


def _minibatches(n, size, rng):
    order = rng.permutation(n)
    for start in range(0, n, size):
        yield order[start : start + size]


# -- acting ------------------------------------------------------------------

def policy_concentrations(actor: nn.ParamSet, obs: np.ndarray) -> np.ndarray:
    raw, _ = nn.forward(actor, obs)
    if not np.all(np.isfinite(raw)):
        raise PolicyFault(f"policy produced non-finite output {raw!r}")
    return concentrations(raw)


def act(actor: nn.ParamSet, obs: np.ndarray, rng: np.random.Generator):
    """Sample an allocation from the Dirichlet head; returns (action, log_prob)."""
    alpha = policy_concentrations(actor, obs)
    action = clip_to_simplex(rng.dirichlet(alpha))
    log_prob = float(dirichlet_log_prob(alpha, action))
    return action, log_prob


def mean_action(actor: nn.ParamSet, obs: np.ndarray) -> np.ndarray:
    """Deterministic evaluation action: the Dirichlet mean."""
    return clip_to_simplex(dirichlet_mean(policy_concentrations(actor, obs)))


class ActorBank:
    """Stacked per-agent actor weights for one vectorized acting pass.

    Valid for a whole rollout because actors only change between rounds.
    Sampling still draws from each agent's private stream so trajectories
    are independent of how acting is batched.
    """

    def __init__(self, actors, rngs):
        self.rngs = rngs
        self.n = len(actors)
        self.w = []
        self.b = []
        for layer in range(len(actors[0].layers)):
            self.w.append(np.stack([a.layers[layer][0] for a in actors]))
            self.b.append(np.stack([a.layers[layer][1] for a in actors])[:, :, None])

    def concentrations(self, obs: np.ndarray) -> np.ndarray:
        a = obs[:, :, None]
        last = len(self.w) - 1
        for i, (w, b) in enumerate(zip(self.w, self.b)):
            z = w @ a
            z += b
            a = np.maximum(z, 0.0, out=z) if i != last else z
        raw = a[:, :, 0]
        if not np.isfinite(raw).all():
            raise PolicyFault("policy produced non-finite outputs")
        return concentrations(raw)

    def act_all(self, obs: np.ndarray):
        """Actions and log-probabilities for every agent at once."""
        alpha = self.concentrations(obs)
        actions = np.empty_like(alpha)
        for i in range(self.n):
            actions[i] = self.rngs[i].dirichlet(alpha[i])
        np.clip(actions, 0.0, None, out=actions)
        actions /= actions.sum(axis=1, keepdims=True)
        for i in np.nonzero(actions.sum(axis=1) > 1.0)[0]:
            actions[i] = clip_to_simplex(actions[i])
        return actions, dirichlet_log_prob(alpha, actions)


# -- updates -----------------------------------------------------------------

def td_targets(critic: nn.ParamSet, batch, discount: float) -> np.ndarray:
    v_next, _ = nn.forward(critic, batch["next_obs"])
    return batch["adjusted"] + discount * v_next[:, 0] * (1.0 - batch["done"])


def critic_update(critic: nn.ParamSet, transitions, hyper: AgentHyper,
                  opt: nn.AdamState, rng: np.random.Generator):
    """Regress the value net onto bootstrapped targets frozen at entry.

    Returns (critic, per-minibatch squared-TD losses).
    """
    if not transitions:
        raise ContractViolation("critic update requires a nonempty batch")
    batch = _stack(transitions)
    targets = td_targets(critic, batch, hyper.discount)
    n = len(transitions)
    losses = []
    grads = nn.GradientSet(sizes=critic.sizes)
    for _ in range(hyper.update_epochs):
        for idx in _minibatches(n, hyper.minibatch_size, rng):
            v, cache = nn.forward(critic, batch["obs"][idx])
            err = v[:, 0] - targets[idx]
            losses.append(float(np.mean(err**2)))
            grad_out = (2.0 * err / idx.size)[:, None]
            nn.backward(critic, cache, grad_out, into=grads)
            nn.adam_step(critic, grads, opt, direction="descent")
    if not critic.all_finite():
        raise NumericalError("critic parameters became non-finite")
    return critic, losses


def advantage_estimates(critic: nn.ParamSet, batch, duals: DualVariables,
                        hyper: AgentHyper) -> np.ndarray:
    """n-step TD errors of the Lagrangian-adjusted reward (default one step)."""
    adjusted = batch["raw"] - batch["g"] @ duals.values
    v_s, _ = nn.forward(critic, batch["obs"])
    v_next, _ = nn.forward(critic, batch["next_obs"])
    v_s, v_next = v_s[:, 0], v_next[:, 0]
    n = adjusted.shape[0]
    k = hyper.advantage_steps
    if k == 1:
        return adjusted + hyper.discount * v_next * (1.0 - batch["done"]) - v_s
    adv = np.empty(n)
    for t in range(n):
        total, disc = 0.0, 1.0
        end = min(t + k, n)
        terminated = False
        for i in range(t, end):
            total += disc * adjusted[i]
            disc *= hyper.discount
            if batch["done"][i]:
                terminated = True
                break
        if not terminated:
            bootstrap = v_s[end] if end < n else v_next[n - 1]
            total += disc * bootstrap
        adv[t] = total - v_s[t]
    return adv


def surrogate_terms(new_logp, old_logp, advantages, clip_ratio):
    """Clipped-surrogate pieces: per-sample objective and the gradient mask."""
    ratio = np.exp(new_logp - old_logp)
    unclipped = ratio * advantages
    clipped = np.clip(ratio, 1.0 - clip_ratio, 1.0 + clip_ratio) * advantages
    objective = np.minimum(unclipped, clipped)
    active = unclipped <= clipped
    return ratio, objective, active


def policy_update(actor: nn.ParamSet, transitions, critic: nn.ParamSet,
                  duals: DualVariables, hyper: AgentHyper, opt: nn.AdamState,
                  rng: np.random.Generator, distill_to: nn.ParamSet | None = None,
                  distill_weight: float = 0.0, probe_obs: np.ndarray | None = None):
    """Clipped-surrogate ascent with entropy bonus and optional distillation.

    Advantages are TD errors from ``critic``; the adjusted reward is
    recomputed from raw rewards and the current duals. The distillation
    term toward ``distill_to`` is applied once per call, on the first
    minibatch. Returns (actor, stats dict).
    """
    if not transitions:
        raise ContractViolation("policy update requires a nonempty batch")
    batch = _stack(transitions)
    adv = advantage_estimates(critic, batch, duals, hyper)
    if hyper.normalize_advantages and adv.size > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)

    probe_mu_target = None
    if distill_to is not None and distill_weight > 0.0 and probe_obs is not None:
        probe_mu_target = dirichlet_mean(policy_concentrations(distill_to, probe_obs))

    n = len(transitions)
    losses, entropies, distills = [], [], []
    grads = nn.GradientSet(sizes=actor.sizes)
    grads_probe = nn.GradientSet(sizes=actor.sizes)
    distill_pending = probe_mu_target is not None
    for _ in range(hyper.update_epochs):
        for idx in _minibatches(n, hyper.minibatch_size, rng):
            obs_mb = batch["obs"][idx]
            raw, cache = nn.forward(actor, obs_mb)
            alpha = concentrations(raw)
            new_logp = dirichlet_log_prob(alpha, batch["actions"][idx])
            ratio, objective, active = surrogate_terms(
                new_logp, batch["logp"][idx], adv[idx], hyper.clip_ratio
            )
            entropy = dirichlet_entropy(alpha)
            loss = -float(np.mean(objective)) - hyper.entropy_weight * float(
                np.mean(entropy)
            )

            d_surr_d_logp = np.where(active, ratio * adv[idx], 0.0) / idx.size
            d_loss_d_alpha = (
                -d_surr_d_logp[:, None]
                * _d_log_prob_d_alpha(alpha, batch["actions"][idx])
                - (hyper.entropy_weight / idx.size) * _d_entropy_d_alpha(alpha)
            )
            nn.backward(actor, cache, d_loss_d_alpha * _conc_slope(raw), into=grads)

            if distill_pending:
                distill_pending = False
                raw_p, cache_p = nn.forward(actor, probe_obs)
                alpha_p = concentrations(raw_p)
                mu = dirichlet_mean(alpha_p)
                diff = mu - probe_mu_target
                distill_value = float(np.mean(np.sum(diff**2, axis=1)))
                a0 = alpha_p.sum(axis=1, keepdims=True)
                d_dist_d_alpha = (2.0 / a0) * (
                    diff - np.sum(diff * mu, axis=1, keepdims=True)
                )
                scale = distill_weight / probe_obs.shape[0]
                nn.backward(
                    actor, cache_p, scale * d_dist_d_alpha * _conc_slope(raw_p),
                    into=grads_probe,
                )
                grads.flat += grads_probe.flat
                loss += distill_weight * distill_value
                distills.append(distill_value)

            if not np.isfinite(loss):
                raise NumericalError("actor loss became non-finite")
            losses.append(loss)
            entropies.append(float(np.mean(entropy)))
            nn.adam_step(actor, grads, opt, direction="descent")
    if not actor.all_finite():
        raise NumericalError("actor parameters became non-finite")
    stats = {
        "actor_loss": float(np.mean(losses)),
        "entropy": float(np.mean(entropies)),
        "distill": float(np.mean(distills)) if distills else 0.0,
    }
    return actor, stats


def banded_constraint_estimate(g_values: np.ndarray, tolerance: float) -> np.ndarray:
    """Rollout-mean constraint signals, zeroed inside the tolerance band.

    The target for every constraint is exactly zero; the band keeps rare
    one-off violations from ratcheting the multipliers upward forever.
    """
    g_hat = np.asarray(g_values, dtype=float).mean(axis=0)
    return np.where(g_hat > tolerance, g_hat, 0.0)


# -- the per-gNB agent --------------------------------------------------------

class SliceAgent:
    """Self-contained learner: actor, critic, optimizers, duals, buffer."""

    def __init__(self, gnb: int, cfg, seed: int):
        s = cfg.agent
        self.gnb = gnb
        self.hyper = AgentHyper.from_settings(s)
        sizes_in = [OBS_DIM] + list(s.hidden)
        init_rng = seeding.stream(seed, seeding.NET_INIT, gnb)
        self.actor = nn.ParamSet.init(sizes_in + [N_SLICES], init_rng)
        self.critic = nn.ParamSet.init(sizes_in + [1], init_rng)
        self.actor_opt = nn.AdamState(self.actor, s.learning_rate)
        self.critic_opt = nn.AdamState(self.critic, s.learning_rate)
        self.duals = DualVariables(
            values=np.zeros(N_CONSTRAINTS),
            step_sizes=np.asarray(s.dual_step_sizes, dtype=float),
        )
        self.dual_per_step = s.dual_per_step
        self.policy_rng = seeding.stream(seed, seeding.POLICY, gnb)
        self.update_rng = seeding.stream(seed, seeding.UPDATE, gnb)
        self.buffer: list[Transition] = []

    def set_actor(self, params: nn.ParamSet):
        """Adopt broadcast global parameters (optimizer state is kept)."""
        self.actor = params.copy()

    def act(self, obs: np.ndarray):
        return act(self.actor, obs, self.policy_rng)

    def observe(self, obs, action, log_prob, reward, g, next_obs, done):
        adj = adjusted_reward(reward, g, self.duals)
        self.buffer.append(
            Transition(obs, action, adj, reward, np.asarray(g, dtype=float),
                       next_obs, log_prob, done)
        )
        if self.dual_per_step:
            g_eff = np.where(
                np.asarray(g, dtype=float) > self.hyper.dual_tolerance, g, 0.0
            )
            self.duals = dual_update(self.duals, g_eff)

    def update(self, distill_to: nn.ParamSet | None = None,
               distill_weight: float = 0.0, n_probes: int = 0):
        """One round of local training on the buffered rollout."""
        if not self.buffer:
            raise ContractViolation("update requires a collected rollout")
        self.critic, critic_losses = critic_update(
            self.critic, self.buffer, self.hyper, self.critic_opt, self.update_rng
        )
        probe_obs = None
        if distill_to is not None and distill_weight > 0.0 and n_probes > 0:
            all_obs = np.stack([t.state for t in self.buffer])
            pick = self.update_rng.choice(
                all_obs.shape[0], size=min(n_probes, all_obs.shape[0]), replace=False
            )
            probe_obs = all_obs[pick]
        self.actor, stats = policy_update(
            self.actor, self.buffer, self.critic, self.duals, self.hyper,
            self.actor_opt, self.update_rng, distill_to=distill_to,
            distill_weight=distill_weight, probe_obs=probe_obs,
        )
        if not self.dual_per_step:
            g_all = np.stack([t.constraints for t in self.buffer])
            g_hat = banded_constraint_estimate(g_all, self.hyper.dual_tolerance)
            self.duals = dual_update(self.duals, g_hat)
        stats["critic_loss"] = float(np.mean(critic_losses))
        stats["samples"] = len(self.buffer)
        self.buffer = []
        return stats
