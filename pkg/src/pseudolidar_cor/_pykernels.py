"""Pure-numpy kernels; the fallback when the compiled ``_kernels`` is unavailable.

Both implementations share one layout. Occupied cells are indexed ``u``
(ascending flat bin), ``order[cstart[u]:cstart[u+1]]`` lists the points of
cell ``u`` in ascending index, and a *group* ``g`` is one (source cell
``g_u[g]``, offset ``offsets[g_k[g]]``) combination whose target bin is
stored at slot ``g_slot[g]``. Groups are sorted by ``(g_u, g_k)`` and the
offsets are lexicographic, so a point visits its target bins in ascending
order and a target bin receives its neighbour terms in ascending source
order. Pairs are laid out group after group.
"""

from __future__ import annotations

import numpy as np


def cell_groups(ucell_idx, offsets, counts):
    """Groups ``(g_u, g_k)`` whose target bin is inside the grid, sorted, and
    each group's flat target bin."""
    counts = np.asarray(counts, dtype=np.int64)
    target_idx = ucell_idx[:, None, :] + offsets[None, :, :]
    ok = np.all((target_idx >= 0) & (target_idx < counts), axis=2)
    g_u, g_k = np.nonzero(ok)
    t = target_idx[g_u, g_k]
    g_target = (t[:, 0] * counts[1] + t[:, 1]) * counts[2] + t[:, 2]
    return g_u.astype(np.int64), g_k.astype(np.int64), g_target.astype(np.int64)


def _pair_layout(order, cstart, ccount, g_u):
    sizes = ccount[g_u]
    n_groups = len(g_u)
    pair_group = np.repeat(np.arange(n_groups, dtype=np.int64), sizes)
    group_start = np.zeros(n_groups + 1, dtype=np.int64)
    np.cumsum(sizes, out=group_start[1:])
    within = np.arange(group_start[-1], dtype=np.int64) - group_start[:-1][pair_group]
    pair_point = order[cstart[g_u][pair_group] + within]
    return pair_group, pair_point


def _group_centers(ucell_idx, offsets, g_u, g_k, origin, bin_size):
    target = ucell_idx[g_u] + offsets[g_k]
    return origin + (target + 0.5) * bin_size


def soft_forward(points, order, cstart, ccount, ucell_idx, offsets, g_u, g_k, g_slot,
                 n_slots, origin, bin_size, sigma_sq, center_k, n_neighbors):
    """Return ``(values, pair_point, pair_group, pair_weight)``."""
    pair_group, pair_point = _pair_layout(order, cstart, ccount, g_u)
    centers = _group_centers(ucell_idx, offsets, g_u, g_k, origin, bin_size)
    diff = points[pair_point] - centers[pair_group]
    d2 = diff[:, 0] * diff[:, 0] + diff[:, 1] * diff[:, 1] + diff[:, 2] * diff[:, 2]
    weight = np.exp(-d2 / sigma_sq)

    summed = np.bincount(pair_group, weights=weight, minlength=len(g_u))
    t_pair = summed / ccount[g_u]
    is_self = g_k == center_k
    self_term = np.zeros(n_slots)
    self_term[g_slot[is_self]] = t_pair[is_self]
    nbr_sum = np.bincount(g_slot[~is_self], weights=t_pair[~is_self], minlength=n_slots)
    values = self_term + nbr_sum / n_neighbors
    return values, pair_point, pair_group, weight


def soft_backward(points, pair_point, pair_group, pair_weight, ccount, ucell_idx, offsets,
                  g_u, g_k, g_slot, slot_grad, origin, bin_size, sigma_sq, center_k,
                  n_neighbors):
    """Return ``(N, 3)`` gradient of ``sum_m slot_grad[m] * T(m)`` wrt the points."""
    n_points = len(points)
    coef = np.where(g_k == center_k, 1.0, 1.0 / n_neighbors)
    group_factor = slot_grad[g_slot] * coef / ccount[g_u]
    scale = -2.0 / sigma_sq
    factor = group_factor[pair_group] * pair_weight * scale
    centers = _group_centers(ucell_idx, offsets, g_u, g_k, origin, bin_size)
    diff = points[pair_point] - centers[pair_group]
    out = np.empty((n_points, 3))
    for axis in range(3):
        out[:, axis] = np.bincount(pair_point, weights=factor * diff[:, axis], minlength=n_points)
    return out


def angular_select(bin_id, dist, r, n_bins):
    """Per bin, the index minimising ``(dist, r, index)``; ascending output.

    ``bin_id < 0`` marks a point outside every bin.
    """
    idx = np.flatnonzero(bin_id >= 0)
    if idx.size == 0:
        return idx.astype(np.int64)
    # lexsort: last key is primary
    order = np.lexsort((idx, r[idx], dist[idx], bin_id[idx]))
    ranked = idx[order]
    b = bin_id[ranked]
    first = np.ones(b.size, dtype=bool)
    first[1:] = b[1:] != b[:-1]
    return np.sort(ranked[first]).astype(np.int64)
