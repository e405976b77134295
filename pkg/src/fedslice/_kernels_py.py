"""Pure-numpy implementations of the per-slot hot kernels.

These mirror ``fedslice._core`` (the Cython extension) operation for
operation. Accumulation order is pinned — interferer sums run over gNB
index ascending, victim sums over global UE index ascending — so both
backends produce bit-identical floats. Keep any change in lockstep with
the .pyx file.
"""

from __future__ import annotations

import numpy as np

BACKEND = "python"


def sinr_all(h2, tx_power, ue_cell, noise_power):
    """Per-UE SINR: serving power over noise plus all cross-cell power.

    h2 : (N, NU) combined channel power gains
    tx_power : (N,) transmit powers in watts
    ue_cell : (NU,) serving cell index per UE
    noise_power : receiver noise in watts
    """
    n_cells, n_ues = h2.shape
    interf = np.zeros(n_ues)
    for m in range(n_cells):
        term = tx_power[m] * h2[m]
        interf = interf + np.where(ue_cell == m, 0.0, term)
    signal = tx_power[ue_cell] * h2[ue_cell, np.arange(n_ues)]
    return signal / (noise_power + interf)


def slice_se_sums(se, ue_cell, ue_slice, n_cells, n_slices):
    """Sum spectral efficiencies per (cell, slice), UE index ascending."""
    out = np.zeros((n_cells, n_slices))
    np.add.at(out, (ue_cell, ue_slice), se)
    return out


def band_overlap(actions):
    """Pairwise same-slice band overlap as a fraction of the victim band.

    actions : (N, S) bandwidth fractions laid out contiguously from 0 in
    fixed slice order. Returns (N, N, S).
    """
    hi = np.cumsum(actions, axis=1)
    lo = hi - actions
    inter = np.minimum(hi[:, None, :], hi[None, :, :]) - np.maximum(
        lo[:, None, :], lo[None, :, :]
    )
    np.clip(inter, 0.0, None, out=inter)
    width = hi - lo
    out = np.zeros_like(inter)
    np.divide(inter, width[None, :, :], out=out, where=width[None, :, :] > 0)
    return out


def leakage_all(h2, tx_power, ue_cell, ue_slice, overlap):
    """Per-gNB outgoing interference power onto other cells' UEs.

    overlap : (N, N, S) spectral-overlap factor in [0, 1] between the
    aggressor's slice band and the victim cell's same-slice band.
    """
    n_cells, n_ues = h2.shape
    factor = overlap[:, ue_cell, ue_slice]          # (N, NU)
    term = tx_power[:, None] * h2 * factor
    term[np.arange(n_cells)[:, None] == ue_cell[None, :]] = 0.0
    # cumsum is strictly sequential, matching the C loop's u-ascending order
    return np.cumsum(term, axis=1)[:, -1]
