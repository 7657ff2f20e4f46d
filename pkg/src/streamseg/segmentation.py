"""Iterative bundle segmentation: alternate exact radius search and SLR.

For every radius of a decreasing schedule the (transformed) model bundle
is searched against the tractogram index, then re-registered onto the
streamlines it matched. After the last step, the streamlines within the
prune radius of the final model are the bundle.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import Transform, apply_transform, resample_many
from .registration import OptimizerConfig, slr_fit
from .search import FssIndex, MatchSet, min_distance_map, radius_search

logger = logging.getLogger(__name__)

DEFAULT_SCHEDULE_STEPS = 3
DEFAULT_START_FACTOR = 2.0


def make_schedule(prune_radius, n_steps=DEFAULT_SCHEDULE_STEPS,
                  start_factor=DEFAULT_START_FACTOR):
    """Geometric radii from ``start_factor * prune_radius`` down to ``prune_radius``.

    >>> [round(r, 2) for r in make_schedule(8, 3, 2.0)]
    [16.0, 11.31, 8.0]
    """
    if not prune_radius > 0:
        raise ValueError("prune_radius must be positive")
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if start_factor < 1:
        raise ValueError("start_factor must be >= 1")
    if n_steps == 1:
        return [float(prune_radius)]
    radii = [prune_radius * start_factor ** (1.0 - k / (n_steps - 1)) for k in range(n_steps)]
    radii[-1] = float(prune_radius)
    out = []
    for r in radii:
        if not out or r < out[-1]:
            out.append(float(r))
    out[-1] = float(prune_radius)
    return out


@dataclass(frozen=True)
class BundleModel:
    name: str
    streamlines: np.ndarray  # (n, m, 3) resampled model, atlas space
    prune_radius: float
    schedule: tuple = ()

    def __post_init__(self):
        sl = np.asarray(self.streamlines, dtype=float)
        if sl.ndim != 3 or sl.shape[2] != 3 or len(sl) == 0:
            raise ValueError("model %r needs a non-empty (n, m, 3) resampled bundle" % self.name)
        if not self.prune_radius > 0:
            raise ValueError("model %r: prune radius must be positive" % self.name)
        schedule = tuple(float(r) for r in (self.schedule or make_schedule(self.prune_radius)))
        if any(b >= a for a, b in zip(schedule, schedule[1:])):
            raise ValueError("model %r: schedule must be strictly decreasing" % self.name)
        if schedule[-1] != float(self.prune_radius):
            raise ValueError("model %r: schedule must end at the prune radius" % self.name)
        sl.setflags(write=False)
        object.__setattr__(self, "streamlines", sl)
        object.__setattr__(self, "schedule", schedule)

    @classmethod
    def from_streamlines(cls, name, streamlines, prune_radius, m,
                         n_steps=DEFAULT_SCHEDULE_STEPS, start_factor=DEFAULT_START_FACTOR):
        """Resample raw model streamlines and derive the schedule."""
        return cls(name, resample_many(streamlines, m), prune_radius,
                   tuple(make_schedule(prune_radius, n_steps, start_factor)))


@dataclass(frozen=True)
class RegistrationConfig:
    kind: str = "rigid"
    enabled: bool = True
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)


@dataclass(frozen=True)
class IterationRecord:
    radius: float
    n_matches: int
    cost: Optional[float]


@dataclass(frozen=True)
class BundleResult:
    name: str
    selected_ids: np.ndarray
    distances: np.ndarray
    final_transform: Transform
    iteration_log: tuple
    provenance: str = "synthetic"
    warning: Optional[str] = None

    def __len__(self):
        return len(self.selected_ids)


def segment_bundle(idx: FssIndex, model: BundleModel, reg_cfg: Optional[RegistrationConfig] = None,
                   global_affine: Optional[Transform] = None, provenance="synthetic",
                   search_fn: Callable[..., MatchSet] = radius_search) -> BundleResult:
    """Segment one bundle from an indexed tractogram.

    Parameters
    ----------
    idx : FssIndex
    model : BundleModel
        Resampled with ``idx.m`` points.
    reg_cfg : RegistrationConfig, optional
    global_affine : Transform, optional
        Maps atlas space toward subject space; identity when omitted.
    provenance : str
        Recorded on the result, identifies the tractogram.
    search_fn : callable
        ``search_fn(idx, queries, radius) -> MatchSet``. Swappable so an
        exhaustive search can drive the identical loop.

    Returns
    -------
    BundleResult
        Empty with ``warning`` set when some step matches nothing.
    """
    reg_cfg = reg_cfg or RegistrationConfig()
    if model.streamlines.shape[1] != idx.m:
        raise ValueError("model %r resampled to m=%d, index uses m=%d"
                         % (model.name, model.streamlines.shape[1], idx.m))
    transform = global_affine or Transform.identity("affine")
    log = []

    def empty(reason):
        logger.warning("bundle %s: %s", model.name, reason)
        return BundleResult(model.name, np.empty(0, dtype=np.int64), np.empty(0), transform,
                            tuple(log), provenance, reason)

    for radius in model.schedule:
        current = apply_transform(model.streamlines, transform)
        matches = search_fn(idx, current, radius)
        targets = np.unique(matches.target_ids)
        if len(targets) == 0:
            log.append(IterationRecord(radius, 0, None))
            return empty("no streamline within %.6g mm" % radius)
        cost = None
        if reg_cfg.enabled:
            fit = slr_fit(current, idx.resampled(targets), reg_cfg.kind, cfg=reg_cfg.optimizer)
            transform = fit.transform.compose(transform)
            cost = fit.cost
        log.append(IterationRecord(radius, int(len(targets)), cost))
        logger.debug("bundle %s: radius %.3f -> %d matches", model.name, radius, len(targets))

    final = apply_transform(model.streamlines, transform)
    nearest = min_distance_map(search_fn(idx, final, model.prune_radius))
    if not nearest:
        return empty("no streamline within the prune radius after registration")
    ids = np.array(sorted(nearest), dtype=np.int64)
    dists = np.array([nearest[i] for i in ids.tolist()])
    return BundleResult(model.name, ids, dists, transform, tuple(log), provenance)


def segment_all(idx, models, reg_cfg=None, global_affine=None, threads=1,
                provenance="synthetic", search_fn=radius_search):
    """Segment every model independently; results keep the model order."""
    models = list(models)

    def run(model):
        return segment_bundle(idx, model, reg_cfg, global_affine, provenance, search_fn)

    if threads <= 1 or len(models) <= 1:
        return [run(m) for m in models]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(run, models))
