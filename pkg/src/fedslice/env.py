"""Per-gNB constrained MDP assembled on top of channel and traffic.

One global ``step`` advances every cell together: it redraws small-scale
fading, computes all SINRs with cross-cell interference, converts each
slice's bandwidth fraction into drain capacity (equal split across the
slice's UEs), moves the queues, and emits per-gNB rewards and constraint
signals. The slot sequencing is fixed — observe, act, arrivals, serve —
so a packet can complete in its arrival slot (delay 1) only if the acting
policy provisioned capacity for it in advance.

All randomness flows through per-entity streams, so two runs with the
same seed produce bit-identical trajectories.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fedslice import channel, kernels, seeding, traffic
from fedslice.config import N_SLICES, ScenarioConfig
from fedslice.errors import ContractViolation

# Observation layout (dimension 12)
OBS_DIM = 12
CSI = slice(0, 3)          # per-slice mean spectral efficiency / cap
QUEUES = slice(3, 6)       # per-slice queue length / running max
PREV_ACTION = slice(6, 9)  # previous bandwidth fractions
PERF = slice(9, 12)        # [total normalized throughput, URLLC late count,
#                             leakage / budget]

URLLC = 1  # slice index within the fixed (eMBB, URLLC, mMTC) order


@dataclass(frozen=True)
class RewardWeights:
    """Per-slice weights for throughput, QoS penalty, reconfiguration cost."""

    tput: np.ndarray
    qos: np.ndarray
    recfg: np.ndarray

    @classmethod
    def from_settings(cls, s) -> "RewardWeights":
        return cls(
            tput=np.asarray(s.tput_weight, dtype=float),
            qos=np.asarray(s.qos_weight, dtype=float),
            recfg=np.asarray(s.recfg_weight, dtype=float),
        )

    @property
    def max_slot_reward(self) -> float:
        # total normalized throughput across slices is at most 1
        return float(np.max(self.tput))


@dataclass(frozen=True)
class ConstraintSignals:
    """Instantaneous violations: leakage excess, late URLLC count, simplex excess."""

    g1: float
    g2: float
    g3: float

    def as_array(self) -> np.ndarray:
        return np.array([self.g1, self.g2, self.g3])


@dataclass
class SlotOutcome:
    """Everything one global slot produced, row-per-gNB."""

    obs: np.ndarray            # (N, 12)
    rewards: np.ndarray        # (N,)
    constraints: np.ndarray    # (N, 3) = [g1, g2, g3]
    throughput_bits: np.ndarray  # (N, S) served bits this slot
    throughput_norm: np.ndarray  # (N, S) served bits / normalizer
    recfg_cost: np.ndarray     # (N, S) |a_t - a_{t-1}|
    leakage_w: np.ndarray      # (N,)
    queue_lengths: np.ndarray  # (N, S) packets after service

    def signals(self, gnb: int) -> ConstraintSignals:
        g = self.constraints[gnb]
        return ConstraintSignals(float(g[0]), float(g[1]), float(g[2]))


def clip_to_simplex(fractions: np.ndarray) -> np.ndarray:
    """Project near-simplex fractions so the total never exceeds 1.0 in floats.

    Normalizes, then shaves float-rounding excess off the largest entry so
    the feasibility signal g3 is exactly zero for every emitted action.
    """
    a = np.clip(np.asarray(fractions, dtype=float), 0.0, None)
    total = a.sum()
    if total > 0:
        a = a / total
    else:
        a = np.full(a.shape, 1.0 / a.size)
    excess = a.sum() - 1.0
    while excess > 0.0:
        a[int(np.argmax(a))] -= excess
        excess = a.sum() - 1.0
    return a


def compute_reward(eta_norm, delta, rho, weights: RewardWeights) -> float:
    """Weighted slice sum: throughput minus QoS penalty minus change cost."""
    eta_norm = np.asarray(eta_norm, dtype=float)
    delta = np.asarray(delta, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if not (np.all(np.isfinite(eta_norm)) and np.all(np.isfinite(delta))
            and np.all(np.isfinite(rho))):
        raise ContractViolation("reward components must be finite")
    return float(
        np.sum(weights.tput * eta_norm - weights.qos * delta - weights.recfg * rho)
    )


def constraint_g1(leakage_w: float, budget_w: float) -> float:
    """Interference leakage above the budget, in watts."""
    if leakage_w < 0 or budget_w <= 0:
        raise ContractViolation("leakage must be >= 0 and budget positive")
    return max(0.0, leakage_w - budget_w)


def constraint_g2(completed, backlog, deadline: int, slot: int) -> int:
    """URLLC deadline violations this slot (delegates to the queue logic)."""
    return traffic.deadline_violations(completed, backlog, deadline, slot)


def constraint_g3(fractions) -> float:
    """Bandwidth-fraction total above 1; slack is not a violation."""
    return max(0.0, float(np.sum(fractions)) - 1.0)


class SlicingEnv:
    """Deterministic multi-cell slicing world for one scenario seed."""

    def __init__(self, cfg: ScenarioConfig, seed: int, rng_domain: int = seeding.CHANNEL):
        cfg.validate()
        self.cfg = cfg
        self.seed = seed
        self.n = cfg.n_gnbs
        self.params = channel.FadingParams(
            pathloss_exponent=cfg.channel.pathloss_exponent,
            shadowing_sigma_db=cfg.channel.shadowing_sigma_db,
            noise_power_w=cfg.channel.noise_power_w,
            tx_power_w=cfg.channel.tx_power_w,
        )
        self.topology = channel.build_topology(
            cfg.n_gnbs,
            cfg.ues_per_cell,
            cfg.channel.inter_site_m,
            cfg.channel.min_ue_distance_m,
            seeding.stream(seed, seeding.TOPOLOGY),
        )
        # rng_domain separates training from evaluation channel/traffic noise
        self._chan_rngs = [
            seeding.stream(seed, rng_domain, n) for n in range(self.n)
        ]
        self._traffic_rngs = [
            seeding.stream(seed, seeding.TRAFFIC + 100 * rng_domain, n)
            for n in range(self.n)
        ]
        self._tx_power = np.full(self.n, cfg.channel.tx_power_w)
        self._lambdas = np.asarray(cfg.traffic.arrival_rates(), dtype=float)
        self._packet_bits = cfg.traffic.packet_bits()
        self._required = np.asarray(cfg.traffic.required_rates_bps(), dtype=float)
        self._target_bits = self._required * cfg.slot_seconds
        self._deadline = cfg.traffic.urllc_deadline_slots
        self._budget_w = cfg.channel.interference_budget_w
        self._se_cap = float(np.log2(1.0 + cfg.channel.sinr_cap))
        # bits/slot that would fill the whole band at the SINR cap
        self.throughput_norm_bits = cfg.bandwidth_hz * cfg.slot_seconds * self._se_cap
        self.weights = RewardWeights.from_settings(cfg.reward)
        self.queues = [
            [traffic.SliceQueue(s, self._packet_bits[s]) for s in range(N_SLICES)]
            for _ in range(self.n)
        ]
        self._counts = self.topology.slice_ue_counts.astype(float)
        # reciprocal UE counts avoid per-slot guarded divisions
        self._inv_counts = np.where(self._counts > 0, 1.0 / np.maximum(self._counts, 1.0), 0.0)
        self._large_scale = np.zeros((self.n, self.topology.n_ues))
        self._h2 = np.zeros_like(self._large_scale)
        self._small = np.zeros_like(self._large_scale)
        self.slot = 0
        self.episode = -1
        self._prev_actions = np.full((self.n, N_SLICES), 1.0 / N_SLICES)
        self._queue_max = np.ones((self.n, N_SLICES))
        self._lengths = np.zeros((self.n, N_SLICES))
        self._csi = np.zeros((self.n, N_SLICES))
        self._last_perf = np.zeros((self.n, N_SLICES))

    # -- channel plumbing -------------------------------------------------

    def _redraw_large_scale(self):
        for n in range(self.n):
            self._large_scale[n] = channel.sample_large_scale(
                self.topology.distances[n], self.params, self._chan_rngs[n]
            )

    def _redraw_small_scale(self):
        for n in range(self.n):
            self._small[n] = channel.sample_small_scale(
                self._chan_rngs[n], size=self.topology.n_ues
            )
        np.multiply(self._large_scale, self._small, out=self._h2)

    def gain_matrix(self) -> channel.GainMatrix:
        return channel.GainMatrix(
            large_scale=self._large_scale.copy(),
            small_scale_power=self._small.copy(),
            combined=self._h2.copy(),
            slot=self.slot,
        )

    def _spectral_state(self):
        gamma = kernels.sinr_all(
            self._h2, self._tx_power, self.topology.ue_cell, self.params.noise_power_w
        )
        se = np.log2(1.0 + np.minimum(gamma, self.cfg.channel.sinr_cap))
        se_sums = kernels.slice_se_sums(
            se, self.topology.ue_cell, self.topology.ue_slice, self.n, N_SLICES
        )
        return gamma, se, se_sums

    # -- episode control ---------------------------------------------------

    def queue_lengths(self) -> np.ndarray:
        return self._lengths.copy()

    def reset(self) -> np.ndarray:
        """Start a new episode: fresh shadowing, empty queues, initial CSI."""
        self.episode += 1
        self.slot = 0
        self._redraw_large_scale()
        self._redraw_small_scale()
        _, _, se_sums = self._spectral_state()
        self._csi = se_sums * (self._inv_counts / self._se_cap)
        for row in self.queues:
            for q in row:
                q.clear()
        self._prev_actions = np.full((self.n, N_SLICES), 1.0 / N_SLICES)
        self._queue_max = np.ones((self.n, N_SLICES))
        self._lengths = np.zeros((self.n, N_SLICES))
        self._last_perf = np.zeros((self.n, N_SLICES))
        return self._build_obs()

    def _build_obs(self) -> np.ndarray:
        obs = np.empty((self.n, OBS_DIM))
        obs[:, CSI] = self._csi
        obs[:, QUEUES] = self._lengths / self._queue_max
        obs[:, PREV_ACTION] = self._prev_actions
        obs[:, PERF] = self._last_perf
        return obs

    # -- the global slot ---------------------------------------------------

    def step(self, actions: np.ndarray) -> SlotOutcome:
        actions = np.asarray(actions, dtype=float)
        if actions.shape != (self.n, N_SLICES):
            raise ContractViolation(
                f"actions must have shape {(self.n, N_SLICES)}, got {actions.shape}"
            )
        if not np.all(np.isfinite(actions)) or np.any(actions < 0):
            raise ContractViolation("actions must be finite and nonnegative")

        self.slot += 1
        self._redraw_small_scale()
        _, _, se_sums = self._spectral_state()
        overlap = kernels.band_overlap(actions)
        leakage = kernels.leakage_all(
            self._h2,
            self._tx_power,
            self.topology.ue_cell,
            self.topology.ue_slice,
            overlap,
        )

        # equal split of the slice band across its UEs: capacity in bits/slot
        band = actions * (self.cfg.bandwidth_hz * self.cfg.slot_seconds)
        cap_bits = band * se_sums * self._inv_counts

        served = np.zeros((self.n, N_SLICES))
        delta = np.zeros((self.n, N_SLICES))
        g2 = np.zeros(self.n)
        lengths = self._lengths
        target = self._target_bits.tolist()
        cap_list = cap_bits.tolist()
        slot = self.slot
        for n in range(self.n):
            arrivals = self._traffic_rngs[n].poisson(self._lambdas).tolist()
            row = self.queues[n]
            caps = cap_list[n]
            for s in range(N_SLICES):
                q = row[s]
                traffic.enqueue(q, arrivals[s], slot)
                pre_bits = q.bits_backlog
                _, completions, served_bits = traffic.serve(q, caps[s], slot)
                served[n, s] = served_bits
                lengths[n, s] = len(q.packets)
                if s == URLLC:
                    g2[n] = constraint_g2(completions, q, self._deadline, slot)
                elif target[s] > 0:
                    demand = min(pre_bits, target[s])
                    delta[n, s] = max(0.0, demand - served_bits) / target[s]
        delta[:, URLLC] = g2

        eta_norm = served / self.throughput_norm_bits
        rho = np.abs(actions - self._prev_actions)
        rewards = (
            self.weights.tput * eta_norm
            - self.weights.qos * delta
            - self.weights.recfg * rho
        ).sum(axis=1)

        g1 = np.maximum(0.0, leakage - self._budget_w)
        g3 = np.maximum(0.0, actions.sum(axis=1) - 1.0)
        constraints = np.stack([g1, g2, g3], axis=1)

        self._csi = se_sums * (self._inv_counts / self._se_cap)
        np.maximum(self._queue_max, lengths, out=self._queue_max)
        self._prev_actions = actions.copy()
        self._last_perf = np.stack(
            [eta_norm.sum(axis=1), g2, leakage / self._budget_w], axis=1
        )

        return SlotOutcome(
            obs=self._build_obs(),
            rewards=rewards,
            constraints=constraints,
            throughput_bits=served,
            throughput_norm=eta_norm,
            recfg_cost=rho,
            leakage_w=leakage,
            queue_lengths=lengths.copy(),
        )
