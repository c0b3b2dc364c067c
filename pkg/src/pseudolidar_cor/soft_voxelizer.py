"""Hard and RBF-soft occupancy voxelization with an exact backward pass.

Bins are addressed by a row-major flat index ``(ix * Ny + iy) * Nz + iz``,
so ascending flat index is lexicographic ``(ix, iy, iz)`` order. Tensors are
sparse: only bins that some point can influence are stored.

Soft occupancy of bin ``m``::

    T(m, m') = mean over points p in bin m' of exp(-|p - c_m|^2 / sigma_sq)
    T(m)     = T(m, m) + (1 / 26) * sum over the 26 neighbours m' of T(m, m')

The divisor stays 26 at grid borders; neighbours outside the grid add 0.
"""

from __future__ import annotations

import itertools
import os
from dataclasses import dataclass

import numpy as np

from ._backend import select as _select_kernels
from .projection import ProvenancedCloud

NEIGHBORHOODS = ("none", "cube26")
N_CUBE_NEIGHBORS = 26
# above this many bins the stored-bin lookup switches from a dense scratch
# array to sorting
_DENSE_LOOKUP_LIMIT = 1 << 26


@dataclass(frozen=True)
class GridSpec:
    origin: tuple[float, float, float]
    bin_size: tuple[float, float, float]
    counts: tuple[int, int, int]
    sigma_sq: float = 0.01
    neighborhood: str = "cube26"

    def __post_init__(self):
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        object.__setattr__(self, "bin_size", tuple(float(v) for v in self.bin_size))
        object.__setattr__(self, "counts", tuple(int(v) for v in self.counts))
        object.__setattr__(self, "sigma_sq", float(self.sigma_sq))
        if len(self.origin) != 3 or len(self.bin_size) != 3 or len(self.counts) != 3:
            raise ValueError("origin, bin_size and counts must have three components")
        if min(self.bin_size) <= 0:
            raise ValueError(f"bin_size must be positive, got {self.bin_size}")
        if min(self.counts) < 1:
            raise ValueError(f"counts must be >= 1, got {self.counts}")
        if not self.sigma_sq > 0:
            raise ValueError(f"sigma_sq must be positive, got {self.sigma_sq}")
        if self.neighborhood not in NEIGHBORHOODS:
            raise ValueError(f"neighborhood must be one of {NEIGHBORHOODS}")

    @classmethod
    def kitti(cls, sigma_sq=0.01, neighborhood="cube26"):
        """Full-scale 0.1 m grid in camera coordinates, 800 x 35 x 700 bins.

        x (lateral) spans [-40, 40] m, y (down) spans [-1, 2.5] m and z
        (forward) spans [0, 70] m.
        """
        return cls((-40.0, -1.0, 0.0), (0.1, 0.1, 0.1), (800, 35, 700), sigma_sq, neighborhood)

    @property
    def n_bins(self) -> int:
        nx, ny, nz = self.counts
        return nx * ny * nz

    def replace(self, **changes) -> GridSpec:
        fields = dict(origin=self.origin, bin_size=self.bin_size, counts=self.counts,
                      sigma_sq=self.sigma_sq, neighborhood=self.neighborhood)
        fields.update(changes)
        return GridSpec(**fields)

    def flat(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        _, ny, nz = self.counts
        return (idx[..., 0] * ny + idx[..., 1]) * nz + idx[..., 2]

    def unflat(self, keys) -> np.ndarray:
        keys = np.asarray(keys, dtype=np.int64)
        _, ny, nz = self.counts
        return np.stack([keys // (ny * nz), (keys // nz) % ny, keys % nz], axis=-1)

    def centers(self, keys) -> np.ndarray:
        return np.asarray(self.origin) + (self.unflat(keys) + 0.5) * np.asarray(self.bin_size)

    def offsets(self) -> np.ndarray:
        if self.neighborhood == "none":
            return np.zeros((1, 3), dtype=np.int64)
        return np.array(list(itertools.product((-1, 0, 1), repeat=3)), dtype=np.int64)

    def header(self) -> str:
        fmt = lambda vals: " ".join(repr(v) for v in vals)
        return (f"origin={fmt(self.origin)};bin_size={fmt(self.bin_size)};"
                f"counts={fmt(self.counts)};sigma_sq={self.sigma_sq!r};neighborhood={self.neighborhood}")

    @classmethod
    def from_header(cls, text: str) -> GridSpec:
        fields = dict(part.split("=", 1) for part in text.strip().split(";"))
        return cls(
            tuple(float(v) for v in fields["origin"].split()),
            tuple(float(v) for v in fields["bin_size"].split()),
            tuple(int(v) for v in fields["counts"].split()),
            float(fields["sigma_sq"]),
            fields["neighborhood"],
        )


class OccupancyTensor:
    """Sparse map from bin to value on a fixed grid.

    Used for predicted tensors, occupancy targets and per-bin gradients alike.
    ``keys`` is sorted ascending and unique; absent bins read as 0.
    """

    def __init__(self, grid: GridSpec, keys=(), values=()):
        self.grid = grid
        keys = np.asarray(keys, dtype=np.int64).ravel()
        values = np.asarray(values, dtype=np.float64).ravel()
        if keys.shape != values.shape:
            raise ValueError("keys and values differ in length")
        if keys.size and np.any(np.diff(keys) <= 0):
            order = np.argsort(keys, kind="stable")
            keys, values = keys[order], values[order]
            if np.any(np.diff(keys) == 0):
                raise ValueError("duplicate bin keys")
        if keys.size and (keys[0] < 0 or keys[-1] >= grid.n_bins):
            raise ValueError("bin key outside the grid")
        self.keys = keys
        self.values = values

    @classmethod
    def from_dict(cls, grid: GridSpec, mapping) -> OccupancyTensor:
        """Build from ``{(ix, iy, iz): value}`` or ``{flat: value}``."""
        items = list(mapping.items())
        if not items:
            return cls(grid)
        keys = [grid.flat(k) if isinstance(k, tuple) else k for k, _ in items]
        return cls(grid, np.array(keys, dtype=np.int64), [v for _, v in items])

    def __len__(self):
        return len(self.keys)

    def __getitem__(self, ijk):
        key = int(self.grid.flat(ijk)) if isinstance(ijk, tuple) else int(ijk)
        pos = np.searchsorted(self.keys, key)
        if pos < len(self.keys) and self.keys[pos] == key:
            return float(self.values[pos])
        return 0.0

    def __contains__(self, ijk):
        key = int(self.grid.flat(ijk)) if isinstance(ijk, tuple) else int(ijk)
        pos = np.searchsorted(self.keys, key)
        return bool(pos < len(self.keys) and self.keys[pos] == key)

    def indices(self) -> np.ndarray:
        return self.grid.unflat(self.keys)

    def to_dict(self) -> dict:
        return {tuple(int(c) for c in ijk): float(v) for ijk, v in zip(self.indices(), self.values)}

    def restrict(self, keys) -> OccupancyTensor:
        """Entries whose bin is in ``keys``."""
        mask = np.isin(self.keys, keys)
        return OccupancyTensor(self.grid, self.keys[mask], self.values[mask])

    def to_dense(self) -> np.ndarray:
        dense = np.zeros(self.grid.n_bins)
        dense[self.keys] = self.values
        return dense.reshape(self.grid.counts)

    def __repr__(self):
        return f"OccupancyTensor({len(self)} bins, counts={self.grid.counts})"


@dataclass
class BinAssignment:
    """Per point cell index ``(N, 3)`` and flat bin (``-1`` outside the grid)."""

    index: np.ndarray
    flat: np.ndarray

    @property
    def inside(self) -> np.ndarray:
        return self.flat >= 0


@dataclass
class VoxelBackwardMap:
    """Everything the backward pass needs from one soft forward pass.

    Pairs are stored group by group (see ``_pykernels``); ``pairs(bin)``
    regroups them per target bin for inspection.
    """

    grid: GridSpec
    keys: np.ndarray
    n_points: int
    ucell: np.ndarray
    ucell_idx: np.ndarray
    ccount: np.ndarray
    offsets: np.ndarray
    g_u: np.ndarray
    g_k: np.ndarray
    g_slot: np.ndarray
    pair_point: np.ndarray
    pair_group: np.ndarray
    pair_weight: np.ndarray
    backend: str | None = None

    def __len__(self):
        return len(self.pair_point)

    def pairs(self, ijk) -> list[tuple[int, tuple[int, int, int], float, int]]:
        """``(point, source bin, rbf weight, |P_source|)`` for every pair feeding ``ijk``."""
        key = int(self.grid.flat(ijk)) if isinstance(ijk, tuple) else int(ijk)
        slot = np.searchsorted(self.keys, key)
        if slot >= len(self.keys) or self.keys[slot] != key:
            raise KeyError(ijk)
        groups = np.flatnonzero(self.g_slot == slot)
        sel = np.flatnonzero(np.isin(self.pair_group, groups))
        out = []
        for p in sel:
            g = self.pair_group[p]
            u = self.g_u[g]
            out.append((int(self.pair_point[p]), tuple(int(c) for c in self.ucell_idx[u]),
                        float(self.pair_weight[p]), int(self.ccount[u])))
        return sorted(out)


def _as_points(cloud) -> np.ndarray:
    if isinstance(cloud, ProvenancedCloud):
        cloud = cloud.points
    return np.ascontiguousarray(np.asarray(cloud, dtype=np.float64).reshape(-1, 3))


def assign_bins(cloud, grid: GridSpec) -> BinAssignment:
    """Floor-division cell of each point; a point on a cell face goes to the higher cell."""
    pts = _as_points(cloud)
    with np.errstate(invalid="ignore"):
        rel = (pts - np.asarray(grid.origin)) / np.asarray(grid.bin_size)
        finite = np.isfinite(rel).all(axis=1)
        idx = np.zeros(pts.shape, dtype=np.int64)
        idx[finite] = np.floor(rel[finite]).astype(np.int64)
    inside = finite & np.all((idx >= 0) & (idx < np.asarray(grid.counts)), axis=1)
    flat = np.full(len(pts), -1, dtype=np.int64)
    flat[inside] = grid.flat(idx[inside])
    return BinAssignment(idx, flat)


def hard_voxelize(cloud, grid: GridSpec) -> OccupancyTensor:
    flat = assign_bins(cloud, grid).flat
    keys = np.unique(flat[flat >= 0])
    return OccupancyTensor(grid, keys, np.ones(keys.size))


def _stored_bins(targets, n_bins):
    """Sorted unique target bins and the slot of every target."""
    if n_bins <= _DENSE_LOOKUP_LIMIT:
        mark = np.zeros(n_bins, dtype=bool)
        mark[targets] = True
        keys = np.flatnonzero(mark)
        slot_of = np.empty(n_bins, dtype=np.int64)
        slot_of[keys] = np.arange(keys.size)
        return keys, slot_of[targets]
    keys, slots = np.unique(targets, return_inverse=True)
    return keys, slots.astype(np.int64)


def soft_voxelize(cloud, grid: GridSpec, backend: str | None = None) -> tuple[OccupancyTensor, VoxelBackwardMap]:
    """Soft occupancy of every bin some point can influence, plus the backward map.

    ``backend`` picks the kernels ("cython" or "python"); default is the one
    selected at import.
    """
    kernels = _select_kernels(backend)
    pts = _as_points(cloud)
    flat = assign_bins(pts, grid).flat
    valid = np.flatnonzero(flat >= 0)
    order = valid[np.argsort(flat[valid], kind="stable")]
    ucell, cstart_, ccount = np.unique(flat[order], return_index=True, return_counts=True)
    cstart = np.append(cstart_, order.size).astype(np.int64)
    ccount = ccount.astype(np.int64)
    ucell_idx = np.ascontiguousarray(grid.unflat(ucell))
    offsets = grid.offsets()

    # (u, k) groups whose target bin lies inside the grid, sorted by (u, k)
    g_u, g_k, g_target = kernels.cell_groups(ucell_idx, offsets, grid.counts)
    keys, g_slot = _stored_bins(g_target, grid.n_bins)

    center_k = len(offsets) // 2
    values, pair_point, pair_group, pair_weight = kernels.soft_forward(
        pts, order, cstart, ccount, ucell_idx, offsets, g_u, g_k, g_slot, keys.size,
        grid.origin, grid.bin_size, grid.sigma_sq, center_k, float(N_CUBE_NEIGHBORS),
    )
    tensor = OccupancyTensor.__new__(OccupancyTensor)
    tensor.grid, tensor.keys, tensor.values = grid, keys, values
    bwd = VoxelBackwardMap(grid, keys, len(pts), ucell, ucell_idx, ccount, offsets,
                           g_u, g_k, g_slot, pair_point, pair_group, pair_weight, backend)
    return tensor, bwd


def voxelize_backward(bwd: VoxelBackwardMap, tensor_grad, cloud) -> np.ndarray:
    """Gradient of ``sum_m tensor_grad[m] * T(m)`` wrt every point, ``(N, 3)``.

    ``tensor_grad`` is an :class:`OccupancyTensor` (or ``{bin: value}``
    mapping) whose bins must all be stored in the forward tensor. Points
    outside the grid get exactly zero.
    """
    pts = _as_points(cloud)
    if len(pts) != bwd.n_points:
        raise ValueError(f"cloud has {len(pts)} points, forward pass saw {bwd.n_points}")
    if not isinstance(tensor_grad, OccupancyTensor):
        tensor_grad = OccupancyTensor.from_dict(bwd.grid, dict(tensor_grad))
    if np.array_equal(tensor_grad.keys, bwd.keys):
        slot_grad = np.asarray(tensor_grad.values, dtype=np.float64)
    else:
        slot = np.searchsorted(bwd.keys, tensor_grad.keys)
        known = slot < bwd.keys.size
        known[known] = bwd.keys[slot[known]] == tensor_grad.keys[known]
        if not known.all():
            bad = tuple(int(c) for c in bwd.grid.unflat(tensor_grad.keys[~known][0]))
            raise KeyError(f"gradient given for bin {bad}, which the forward pass did not store")
        slot_grad = np.zeros(bwd.keys.size)
        slot_grad[slot] = tensor_grad.values
    if bwd.pair_point.size == 0:
        return np.zeros((len(pts), 3))
    return _select_kernels(bwd.backend).soft_backward(
        pts, bwd.pair_point, bwd.pair_group, bwd.pair_weight, bwd.ccount, bwd.ucell_idx,
        bwd.offsets, bwd.g_u, bwd.g_k, bwd.g_slot, slot_grad, bwd.grid.origin,
        bwd.grid.bin_size, bwd.grid.sigma_sq, len(bwd.offsets) // 2, float(N_CUBE_NEIGHBORS),
    )


def write_tensor_dump(tensor: OccupancyTensor, path: str | os.PathLike, mode: str = "soft") -> None:
    """Text dump: a ``# grid ...`` header then ``ix iy iz value`` lines in bin order."""
    with open(path, "w") as fh:
        fh.write(f"# grid {tensor.grid.header()}\n")
        fh.write(f"# mode {mode}\n")
        for (ix, iy, iz), v in zip(tensor.indices(), tensor.values):
            fh.write(f"{ix} {iy} {iz} {float(v)!r}\n")


def read_tensor_dump(path: str | os.PathLike) -> OccupancyTensor:
    from .errors import FormatError

    grid, idx, vals = None, [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("# grid "):
                grid = GridSpec.from_header(line[len("# grid "):])
            elif line.startswith("#"):
                continue
            else:
                parts = line.split()
                if len(parts) != 4:
                    raise FormatError(f"{path}:{lineno}: expected 'ix iy iz value'")
                idx.append([int(p) for p in parts[:3]])
                vals.append(float(parts[3]))
    if grid is None:
        raise FormatError(f"{path}: missing '# grid' header")
    keys = grid.flat(np.array(idx, dtype=np.int64).reshape(-1, 3))
    return OccupancyTensor(grid, keys, vals)
