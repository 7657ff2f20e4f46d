"""Agreement measures between two segmentations of the same bundle.

Volumetric measures work on binary voxel masks sharing one grid; the
streamline Dice works on streamline identities and only makes sense when
both bundles come from the same tractogram.
"""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .core import length

logger = logging.getLogger(__name__)

MODES = ("run-rerun", "scan-rescan")


class GridMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    voxel_size: float
    affine: np.ndarray  # grid index -> world mm
    dims: tuple

    def __post_init__(self):
        aff = np.array(self.affine, dtype=float)
        if aff.shape != (4, 4) or abs(np.linalg.det(aff[:3, :3])) < 1e-12:
            raise ValueError("grid affine must be an invertible 4x4 matrix")
        if not self.voxel_size > 0:
            raise ValueError("voxel_size must be positive")
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or min(dims) < 1:
            raise ValueError("dims must be 3 positive integers, got %s" % (self.dims,))
        aff.setflags(write=False)
        object.__setattr__(self, "affine", aff)
        object.__setattr__(self, "dims", dims)

    def __eq__(self, other):
        return (isinstance(other, GridSpec) and self.dims == other.dims
                and self.voxel_size == other.voxel_size
                and np.array_equal(self.affine, other.affine))

    __hash__ = None

    @property
    def voxel_volume(self):
        # isotropic grid: voxel_size**3 equals |det| without its rounding
        return float(self.voxel_size) ** 3

    def world_to_index(self, points):
        inv = np.linalg.inv(self.affine)
        ijk = np.asarray(points, dtype=float) @ inv[:3, :3].T + inv[:3, 3]
        return np.floor(ijk + 0.5).astype(np.int64)

    def index_to_world(self, ijk):
        ijk = np.asarray(ijk, dtype=float)
        return ijk @ self.affine[:3, :3].T + self.affine[:3, 3]

    def shifted(self, lower, dims):
        """Same orientation, origin moved to integer index ``lower``."""
        shift = np.eye(4)
        shift[:3, 3] = lower
        return GridSpec(self.voxel_size, self.affine @ shift, dims)


def fit_grid(bundles, voxel_size=1.0, pad=2) -> GridSpec:
    """Axis-aligned grid covering every point of ``bundles``, padded.

    The origin snaps to a multiple of ``voxel_size`` so that whole-voxel
    translations of a bundle translate its mask exactly.
    """
    pts = [np.asarray(s, dtype=float) for bundle in bundles for s in bundle]
    if pts:
        allp = np.concatenate(pts)
        lo = np.floor(allp.min(axis=0) / voxel_size + 0.5) - pad
        hi = np.floor(allp.max(axis=0) / voxel_size + 0.5) + pad
    else:
        lo = np.zeros(3)
        hi = np.zeros(3)
    affine = np.diag([voxel_size, voxel_size, voxel_size, 1.0])
    affine[:3, 3] = lo * voxel_size
    return GridSpec(voxel_size, affine, tuple((hi - lo + 1).astype(int)))


@dataclass(frozen=True)
class VoxelMask:
    grid: GridSpec
    occupancy: np.ndarray = field(repr=False)

    def __post_init__(self):
        occ = np.asarray(self.occupancy, dtype=bool)
        if occ.shape != self.grid.dims:
            raise ValueError("occupancy shape %s does not match grid dims %s"
                             % (occ.shape, self.grid.dims))
        object.__setattr__(self, "occupancy", occ)

    @property
    def count(self):
        return int(self.occupancy.sum())


def _sample_polyline(pts, max_step):
    seg = np.diff(pts, axis=0)
    n = np.maximum(1, np.ceil(np.linalg.norm(seg, axis=1) / max_step)).astype(np.int64)
    seg_of = np.repeat(np.arange(len(seg)), n)
    local = np.arange(n.sum()) - np.repeat(np.cumsum(n) - n, n)
    t = local / np.repeat(n, n)
    samples = pts[seg_of] + t[:, None] * seg[seg_of]
    return np.concatenate([samples, pts[-1:]])


def voxelize(bundle, grid: Optional[GridSpec] = None, voxel_size=1.0) -> VoxelMask:
    """Binary mask of every voxel a streamline of ``bundle`` passes through.

    Segments are sampled every ``voxel_size / 2`` at most. Without ``grid`` a
    padded axis-aligned grid is fitted; a grid that does not contain the
    bundle is grown (same orientation and spacing) to cover it.
    """
    if grid is None:
        grid = fit_grid([bundle], voxel_size)
    samples = [_sample_polyline(np.asarray(s, dtype=float), grid.voxel_size / 2.0)
               for s in bundle if len(s) > 0]
    if not samples:
        return VoxelMask(grid, np.zeros(grid.dims, dtype=bool))
    ijk = grid.world_to_index(np.concatenate(samples))
    dims = np.array(grid.dims)
    lower = np.minimum(ijk.min(axis=0), 0)
    upper = np.maximum(ijk.max(axis=0), dims - 1)
    if np.any(lower < 0) or np.any(upper > dims - 1):
        logger.warning("bundle extends outside the grid, growing it")
        grid = grid.shifted(lower, tuple(upper - lower + 1))
        ijk = ijk - lower
    occ = np.zeros(grid.dims, dtype=bool)
    occ[ijk[:, 0], ijk[:, 1], ijk[:, 2]] = True
    return VoxelMask(grid, occ)


def _same_grid(a, b):
    if a.grid != b.grid:
        raise GridMismatchError("masks are defined on different grids")


def dice(a: VoxelMask, b: VoxelMask) -> float:
    _same_grid(a, b)
    total = a.count + b.count
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a.occupancy, b.occupancy).sum()) / total


def adjacency(a: VoxelMask, b: VoxelMask) -> float:
    """Mean distance (mm) from non-overlapping voxels to the other mask.

    Distances from ``A \\ B`` to the nearest voxel of ``B`` and from
    ``B \\ A`` to the nearest voxel of ``A`` are pooled into one mean.
    Identical masks give 0.
    """
    _same_grid(a, b)
    only_a = a.occupancy & ~b.occupancy
    only_b = b.occupancy & ~a.occupancy
    if not only_a.any() and not only_b.any():
        return 0.0
    if a.count == 0 or b.count == 0:
        raise ValueError("adjacency is undefined when one mask is empty")
    world = a.grid.index_to_world
    dists = []
    for src, dst in ((only_a, b.occupancy), (only_b, a.occupancy)):
        if src.any():
            tree = cKDTree(world(np.argwhere(dst)))
            dists.append(tree.query(world(np.argwhere(src)))[0])
    return float(np.concatenate(dists).mean())


def volume(mask: VoxelMask) -> float:
    return mask.count * mask.grid.voxel_volume


def id_dice(ids_a, ids_b) -> float:
    """Dice of two collections of hashable identities (multiset-aware)."""
    ca, cb = Counter(ids_a), Counter(ids_b)
    total = sum(ca.values()) + sum(cb.values())
    if total == 0:
        return 1.0
    return 2.0 * sum((ca & cb).values()) / total


def streamline_dice(a, b) -> float:
    """Dice of the selected streamline IDs of two results on one tractogram."""
    if a.provenance != b.provenance:
        raise ValueError("streamline Dice needs both results from the same tractogram "
                         "(%r vs %r)" % (a.provenance, b.provenance))
    return id_dice(np.asarray(a.selected_ids).tolist(), np.asarray(b.selected_ids).tolist())


def mean_length(streamlines) -> float:
    if len(streamlines) == 0:
        return 0.0
    return float(np.mean([length(s) for s in streamlines]))


@dataclass(frozen=True)
class ComparisonReport:
    name: str
    mode: str
    dice: float
    adjacency: float
    volume_a: float
    volume_b: float
    volume_delta: float
    count_a: int
    count_b: int
    count_delta: int
    mean_length_a: float
    mean_length_b: float
    mean_length_delta: float
    streamline_dice: Optional[float] = None


def streamline_keys(streamlines):
    """Float32 byte strings identifying streamlines copied from one tractogram."""
    return [np.asarray(s, dtype="<f4").tobytes() for s in streamlines]


def compare_bundles(a, b, mode="scan-rescan", voxel_size=1.0, grid=None, name="bundle"):
    """Compare two segmentations of one bundle.

    Parameters
    ----------
    a, b : Tractogram
        Bundle streamlines. ``metadata['ids']``, when present, gives the
        tractogram IDs used by the run-rerun streamline Dice; otherwise
        streamlines are identified by their exact coordinates.
    mode : {'run-rerun', 'scan-rescan'}
        Streamline Dice is only reported in run-rerun mode, which also
        requires matching provenance.
    voxel_size : float
        Spacing of the grid fitted to both bundles when ``grid`` is None.
    grid : GridSpec, optional

    Returns
    -------
    ComparisonReport
    """
    if mode not in MODES:
        raise ValueError("mode must be one of %s, got %r" % (MODES, mode))
    sa, sb = list(a.streamlines), list(b.streamlines)
    grid = grid or fit_grid([sa, sb], voxel_size)
    ma, mb = voxelize(sa, grid), voxelize(sb, grid)
    if ma.grid != grid or mb.grid != grid:
        raise GridMismatchError("bundles do not fit inside the requested grid")
    sdice = None
    if mode == "run-rerun":
        if a.provenance != b.provenance:
            raise ValueError("run-rerun comparison needs both bundles from the same "
                             "tractogram (%r vs %r)" % (a.provenance, b.provenance))
        if "ids" in a.metadata and "ids" in b.metadata:
            sdice = id_dice(list(a.metadata["ids"]), list(b.metadata["ids"]))
        else:
            sdice = id_dice(streamline_keys(sa), streamline_keys(sb))
    va, vb = volume(ma), volume(mb)
    la, lb = mean_length(sa), mean_length(sb)
    return ComparisonReport(
        name=name, mode=mode, dice=dice(ma, mb), adjacency=adjacency(ma, mb),
        volume_a=va, volume_b=vb, volume_delta=abs(va - vb),
        count_a=len(sa), count_b=len(sb), count_delta=abs(len(sa) - len(sb)),
        mean_length_a=la, mean_length_b=lb, mean_length_delta=abs(la - lb),
        streamline_dice=sdice)
