# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels; see ``_pykernels`` for the shared data layout."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()

ctypedef cnp.int64_t i64


def cell_groups(const i64[:, ::1] ucell_idx, const i64[:, ::1] offsets, counts):
    cdef Py_ssize_t n_cells = ucell_idx.shape[0], n_off = offsets.shape[0]
    cdef Py_ssize_t u, k, n = 0
    cdef i64 nx = counts[0], ny = counts[1], nz = counts[2], tx, ty, tz

    with nogil:
        for u in range(n_cells):
            for k in range(n_off):
                tx = ucell_idx[u, 0] + offsets[k, 0]
                ty = ucell_idx[u, 1] + offsets[k, 1]
                tz = ucell_idx[u, 2] + offsets[k, 2]
                if 0 <= tx < nx and 0 <= ty < ny and 0 <= tz < nz:
                    n += 1
    gu_arr = np.empty(n, dtype=np.int64)
    gk_arr = np.empty(n, dtype=np.int64)
    gt_arr = np.empty(n, dtype=np.int64)
    cdef i64[::1] g_u = gu_arr
    cdef i64[::1] g_k = gk_arr
    cdef i64[::1] g_target = gt_arr
    with nogil:
        n = 0
        for u in range(n_cells):
            for k in range(n_off):
                tx = ucell_idx[u, 0] + offsets[k, 0]
                ty = ucell_idx[u, 1] + offsets[k, 1]
                tz = ucell_idx[u, 2] + offsets[k, 2]
                if 0 <= tx < nx and 0 <= ty < ny and 0 <= tz < nz:
                    g_u[n] = u
                    g_k[n] = k
                    g_target[n] = (tx * ny + ty) * nz + tz
                    n += 1
    return gu_arr, gk_arr, gt_arr


def soft_forward(const double[:, ::1] points, const i64[::1] order, const i64[::1] cstart,
                 const i64[::1] ccount, const i64[:, ::1] ucell_idx, const i64[:, ::1] offsets,
                 const i64[::1] g_u, const i64[::1] g_k, const i64[::1] g_slot,
                 Py_ssize_t n_slots, origin, bin_size, double sigma_sq, i64 center_k,
                 double n_neighbors):
    cdef Py_ssize_t n_groups = g_u.shape[0]
    cdef Py_ssize_t g, j, p, n_pairs = 0
    cdef i64 u, k, i
    cdef double ox = origin[0], oy = origin[1], oz = origin[2]
    cdef double wx = bin_size[0], wy = bin_size[1], wz = bin_size[2]
    cdef double cx, cy, cz, dx, dy, dz, d2, w, s, t

    for g in range(n_groups):
        n_pairs += ccount[g_u[g]]

    values_arr = np.zeros(n_slots, dtype=np.float64)
    nbr_arr = np.zeros(n_slots, dtype=np.float64)
    pp_arr = np.empty(n_pairs, dtype=np.int64)
    pg_arr = np.empty(n_pairs, dtype=np.int64)
    pw_arr = np.empty(n_pairs, dtype=np.float64)
    cdef double[::1] self_term = values_arr
    cdef double[::1] nbr_sum = nbr_arr
    cdef i64[::1] pair_point = pp_arr
    cdef i64[::1] pair_group = pg_arr
    cdef double[::1] pair_weight = pw_arr

    with nogil:
        p = 0
        for g in range(n_groups):
            u = g_u[g]
            k = g_k[g]
            cx = ox + ((ucell_idx[u, 0] + offsets[k, 0]) + 0.5) * wx
            cy = oy + ((ucell_idx[u, 1] + offsets[k, 1]) + 0.5) * wy
            cz = oz + ((ucell_idx[u, 2] + offsets[k, 2]) + 0.5) * wz
            s = 0.0
            for j in range(cstart[u], cstart[u + 1]):
                i = order[j]
                dx = points[i, 0] - cx
                dy = points[i, 1] - cy
                dz = points[i, 2] - cz
                d2 = dx * dx + dy * dy + dz * dz
                w = exp(-d2 / sigma_sq)
                s = s + w
                pair_point[p] = i
                pair_group[p] = g
                pair_weight[p] = w
                p += 1
            t = s / ccount[u]
            if k == center_k:
                self_term[g_slot[g]] = t
            else:
                nbr_sum[g_slot[g]] += t
        for j in range(n_slots):
            self_term[j] = self_term[j] + nbr_sum[j] / n_neighbors
    return values_arr, pp_arr, pg_arr, pw_arr


def soft_backward(const double[:, ::1] points, const i64[::1] pair_point, const i64[::1] pair_group,
                  const double[::1] pair_weight, const i64[::1] ccount,
                  const i64[:, ::1] ucell_idx, const i64[:, ::1] offsets,
                  const i64[::1] g_u, const i64[::1] g_k, const i64[::1] g_slot,
                  const double[::1] slot_grad, origin, bin_size, double sigma_sq,
                  i64 center_k, double n_neighbors):
    cdef Py_ssize_t n_pairs = pair_point.shape[0]
    cdef Py_ssize_t p
    cdef i64 g, u, k, i
    cdef double ox = origin[0], oy = origin[1], oz = origin[2]
    cdef double wx = bin_size[0], wy = bin_size[1], wz = bin_size[2]
    cdef double scale = -2.0 / sigma_sq
    cdef double coef, gf = 0.0, factor, cx = 0.0, cy = 0.0, cz = 0.0
    cdef i64 last_g = -1

    out_arr = np.zeros((points.shape[0], 3), dtype=np.float64)
    cdef double[:, ::1] out = out_arr

    with nogil:
        for p in range(n_pairs):
            g = pair_group[p]
            if g != last_g:
                u = g_u[g]
                k = g_k[g]
                coef = 1.0 if k == center_k else 1.0 / n_neighbors
                gf = slot_grad[g_slot[g]] * coef / ccount[u]
                cx = ox + ((ucell_idx[u, 0] + offsets[k, 0]) + 0.5) * wx
                cy = oy + ((ucell_idx[u, 1] + offsets[k, 1]) + 0.5) * wy
                cz = oz + ((ucell_idx[u, 2] + offsets[k, 2]) + 0.5) * wz
                last_g = g
            i = pair_point[p]
            factor = gf * pair_weight[p] * scale
            out[i, 0] += factor * (points[i, 0] - cx)
            out[i, 1] += factor * (points[i, 1] - cy)
            out[i, 2] += factor * (points[i, 2] - cz)
    return out_arr


def angular_select(const i64[::1] bin_id, const double[::1] dist, const double[::1] r, i64 n_bins):
    cdef Py_ssize_t n = bin_id.shape[0]
    cdef Py_ssize_t i, j, n_kept = 0
    cdef i64 b, cur
    best_arr = np.full(n_bins, -1, dtype=np.int64)
    cdef i64[::1] best = best_arr

    with nogil:
        for i in range(n):
            b = bin_id[i]
            if b < 0:
                continue
            cur = best[b]
            # ascending scan: equal (dist, r) keeps the earlier index
            if cur < 0 or dist[i] < dist[cur] or (dist[i] == dist[cur] and r[i] < r[cur]):
                if cur < 0:
                    n_kept += 1
                best[b] = i

    kept_arr = np.empty(n_kept, dtype=np.int64)
    cdef i64[::1] kept = kept_arr
    with nogil:
        j = 0
        for b in range(n_bins):
            if best[b] >= 0:
                kept[j] = best[b]
                j += 1
    kept_arr.sort()
    return kept_arr
