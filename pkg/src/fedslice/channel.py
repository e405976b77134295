"""Composite-fading channel model, SINR, rate, and interference leakage.

Large-scale gain is distance^(-alpha) path loss times log-normal shadowing
and persists for a whole episode; small-scale power is Exponential(1)
(squared magnitude of a unit circularly-symmetric complex Gaussian) and is
redrawn every slot (block fading). SINR divides serving power by noise
plus the full transmit power of every other cell. Leakage is the
aggressor-side sum of the power a gNB lands on other cells' UEs, scaled
by the spectral overlap between its slice band and the victim's.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fedslice.config import N_SLICES


@dataclass(frozen=True)
class FadingParams:
    """Physical-layer constants shared by all links."""

    pathloss_exponent: float = 3.7
    shadowing_sigma_db: float = 6.0
    noise_power_w: float = 3.9810717055349695e-14
    tx_power_w: float = 1.0

    def __post_init__(self):
        if self.pathloss_exponent <= 0:
            raise ValueError("pathloss_exponent must be positive")
        if self.shadowing_sigma_db < 0:
            raise ValueError("shadowing_sigma_db must be >= 0")
        if self.noise_power_w <= 0:
            raise ValueError("noise_power_w must be positive")
        if self.tx_power_w <= 0:
            raise ValueError("tx_power_w must be positive")


@dataclass(frozen=True)
class LinkGain:
    """One gNB-to-UE channel power decomposition."""

    large_scale: float
    small_scale_power: float

    @property
    def combined(self) -> float:
        return self.large_scale * self.small_scale_power


@dataclass
class GainMatrix:
    """All gNB-to-UE power gains for one slot.

    Rows are gNBs, columns are UEs in global order (cell 0's UEs first).
    ``combined`` is exactly ``large_scale * small_scale_power`` elementwise.
    """

    large_scale: np.ndarray      # (N, NU)
    small_scale_power: np.ndarray  # (N, NU)
    combined: np.ndarray         # (N, NU)
    slot: int

    def link(self, gnb: int, ue: int) -> LinkGain:
        return LinkGain(
            large_scale=float(self.large_scale[gnb, ue]),
            small_scale_power=float(self.small_scale_power[gnb, ue]),
        )


def sample_large_scale(distance_m, params: FadingParams, rng: np.random.Generator):
    """Path-loss times log-normal shadowing gain; distance may be an array."""
    distance_m = np.asarray(distance_m, dtype=float)
    if np.any(distance_m <= 0):
        raise ValueError("distance must be positive")
    shadow_db = rng.normal(0.0, params.shadowing_sigma_db, size=distance_m.shape)
    gain = distance_m ** (-params.pathloss_exponent) * 10.0 ** (shadow_db / 10.0)
    return gain if gain.shape else float(gain)


def sample_small_scale(rng: np.random.Generator, size=None):
    """Squared magnitude of unit complex Gaussian fading: Exponential(1)."""
    draw = rng.standard_exponential(size=size)
    return draw if size is not None else float(draw)


def sinr(serving: int, ue: int, gains: GainMatrix, params: FadingParams) -> float:
    """Reference single-link SINR (the kernels vectorize the same formula)."""
    h2 = gains.combined
    acc = 0.0
    for m in range(h2.shape[0]):
        if m != serving:
            acc += params.tx_power_w * h2[m, ue]
    return params.tx_power_w * h2[serving, ue] / (params.noise_power_w + acc)


def achievable_rate(bandwidth_hz: float, gamma: float) -> float:
    """Shannon rate in bits/second."""
    if bandwidth_hz < 0 or gamma < 0:
        raise ValueError("bandwidth and SINR must be >= 0")
    return bandwidth_hz * np.log2(1.0 + gamma)


def slice_band_edges(actions: np.ndarray):
    """Contiguous sub-band layout per cell, fixed slice order eMBB|URLLC|mMTC.

    actions : (N, S) bandwidth fractions. Returns (lo, hi), each (N, S),
    as fractions of the system band starting at 0.
    """
    hi = np.cumsum(actions, axis=1)
    lo = hi - actions
    return lo, hi


def spectral_overlap(actions: np.ndarray) -> np.ndarray:
    """Pairwise same-slice band overlap, as a fraction of the victim band.

    Entry [n, m, s] is |band_n^s ∩ band_m^s| / width_m^s: how much of
    victim cell m's slice-s band the aggressor n's slice-s band covers
    (0 when the victim band has zero width). Aligning allocations
    maximizes it, so an agent can cut its leakage by staggering its bands
    relative to neighbors or shrinking a slice.
    """
    lo, hi = slice_band_edges(actions)
    inter = np.minimum(hi[:, None, :], hi[None, :, :]) - np.maximum(
        lo[:, None, :], lo[None, :, :]
    )
    np.clip(inter, 0.0, None, out=inter)
    width = hi - lo
    out = np.zeros_like(inter)
    np.divide(inter, width[None, :, :], out=out, where=width[None, :, :] > 0)
    return out


def interference_leakage(
    aggressor: int,
    gains: GainMatrix,
    actions: np.ndarray,
    params: FadingParams,
    ue_cell: np.ndarray,
    ue_slice: np.ndarray,
) -> float:
    """Total power gNB ``aggressor`` imposes on other cells' UEs, in watts.

    Each victim term is tx_power * combined gain, scaled by the spectral
    overlap between the aggressor's slice band and the victim UE's slice
    band. Reference double loop; the kernel computes all rows at once.
    """
    overlap = spectral_overlap(np.asarray(actions, dtype=float))
    h2 = gains.combined
    acc = 0.0
    for u in range(h2.shape[1]):
        m = int(ue_cell[u])
        if m != aggressor:
            acc += (
                params.tx_power_w
                * h2[aggressor, u]
                * overlap[aggressor, m, int(ue_slice[u])]
            )
    return acc


@dataclass
class CellTopology:
    """Static geometry and UE-to-slice assignment for one scenario seed."""

    gnb_xy: np.ndarray    # (N, 2)
    ue_xy: np.ndarray     # (NU, 2)
    ue_cell: np.ndarray   # (NU,) int
    ue_slice: np.ndarray  # (NU,) int
    distances: np.ndarray  # (N, NU)
    slice_ue_counts: np.ndarray  # (N, S) int

    @property
    def n_cells(self) -> int:
        return self.gnb_xy.shape[0]

    @property
    def n_ues(self) -> int:
        return self.ue_xy.shape[0]


def slice_assignment(ues_per_cell: int) -> np.ndarray:
    """Static per-cell UE partition across the three slices.

    Balanced counts with the remainder going to eMBB first, then URLLC;
    10 UEs/cell gives the 4/3/3 split.
    """
    base, rem = divmod(ues_per_cell, N_SLICES)
    counts = [base + (1 if s < rem else 0) for s in range(N_SLICES)]
    return np.repeat(np.arange(N_SLICES), counts)


def build_topology(
    n_gnbs: int,
    ues_per_cell: int,
    inter_site_m: float,
    min_ue_distance_m: float,
    rng: np.random.Generator,
) -> CellTopology:
    """Hexagonal site layout (center + ring) with uniform-in-disk UEs.

    Cells are disks of radius inter_site/2 around each gNB; UE distance to
    the serving gNB is at least ``min_ue_distance_m``. For fewer than 7
    gNBs the same ring construction simply stops early.
    """
    gnb_xy = np.zeros((n_gnbs, 2))
    for k in range(1, n_gnbs):
        ang = 2.0 * np.pi * (k - 1) / max(n_gnbs - 1, 1)
        gnb_xy[k] = inter_site_m * np.array([np.cos(ang), np.sin(ang)])

    radius = inter_site_m / 2.0
    per_cell_slices = slice_assignment(ues_per_cell)
    ue_xy = np.zeros((n_gnbs * ues_per_cell, 2))
    ue_cell = np.repeat(np.arange(n_gnbs), ues_per_cell)
    ue_slice = np.tile(per_cell_slices, n_gnbs)
    for n in range(n_gnbs):
        u = rng.random(ues_per_cell)
        r = np.sqrt(u * (radius**2 - min_ue_distance_m**2) + min_ue_distance_m**2)
        theta = rng.random(ues_per_cell) * 2.0 * np.pi
        offsets = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
        ue_xy[n * ues_per_cell : (n + 1) * ues_per_cell] = gnb_xy[n] + offsets

    distances = np.linalg.norm(gnb_xy[:, None, :] - ue_xy[None, :, :], axis=2)
    counts = np.zeros((n_gnbs, N_SLICES), dtype=int)
    for n in range(n_gnbs):
        for s in range(N_SLICES):
            counts[n, s] = int(np.sum(per_cell_slices == s))
    return CellTopology(
        gnb_xy=gnb_xy,
        ue_xy=ue_xy,
        ue_cell=ue_cell,
        ue_slice=ue_slice,
        distances=distances,
        slice_ue_counts=counts,
    )
