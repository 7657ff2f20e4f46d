"""Streamline-based linear registration (SLR) with a seed-free optimizer.

The refinement transform rotates/scales about the centroid of the moving
bundle, which decouples rotation from translation and makes the fitted
parameters independent of where the bundles sit in world space.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy.spatial.transform import Rotation

from .core import TRANSFORM_KINDS, Transform, apply_transform
from .distance import bundle_cost

MAX_COST_STREAMLINES = 500


@dataclass(frozen=True)
class OptimizerConfig:
    max_iterations: int = 200
    translation_step: float = 2.0
    rotation_step: float = 0.05
    scale_step: float = 0.05
    convergence_tol: float = 1e-4
    min_step_ratio: float = 1e-2

    def __post_init__(self):
        for name in ("max_iterations", "translation_step", "rotation_step", "scale_step",
                     "convergence_tol", "min_step_ratio"):
            if not getattr(self, name) > 0:
                raise ValueError("OptimizerConfig.%s must be positive" % name)

    def initial_steps(self, kind):
        t, r, s = self.translation_step, self.rotation_step, self.scale_step
        if kind == "rigid":
            return np.array([t, t, t, r, r, r])
        if kind == "rigid+scale":
            return np.array([t, t, t, r, r, r, s])
        if kind == "affine":
            return np.array([s, s, s, t] * 3)
        raise ValueError("unknown transform kind %r" % kind)


class MinimizeResult(NamedTuple):
    params: np.ndarray
    cost: float
    converged: bool
    iterations: int


def identity_params(kind):
    if kind == "rigid":
        return np.zeros(6)
    if kind == "rigid+scale":
        return np.array([0.0, 0, 0, 0, 0, 0, 1.0])
    if kind == "affine":
        return np.array([1.0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0])
    raise ValueError("unknown transform kind %r" % kind)


def params_to_transform(params, kind="rigid", center=None) -> Transform:
    """Build a transform from a parameter vector.

    Rigid parameters are ``(tx, ty, tz, rx, ry, rz)`` with intrinsic x-y-z
    rotations in radians; ``rigid+scale`` appends an isotropic scale; affine
    takes the 12 entries of the top 3x4 block, row-major. The linear part
    acts about ``center`` (origin by default).
    """
    p = np.asarray(params, dtype=float)
    if kind == "affine":
        if p.shape != (12,):
            raise ValueError("affine needs 12 parameters")
        block = p.reshape(3, 4)
        linear, trans = block[:, :3], block[:, 3]
    else:
        expected = 6 if kind == "rigid" else 7
        if kind not in TRANSFORM_KINDS or p.shape != (expected,):
            raise ValueError("%s needs %d parameters, got %s" % (kind, expected, p.shape))
        linear = Rotation.from_euler("XYZ", p[3:6]).as_matrix()
        if kind == "rigid+scale":
            if not p[6] > 0:
                raise ValueError("scale must be positive, got %r" % p[6])
            linear = p[6] * linear
        trans = p[:3]
    mat = np.eye(4)
    mat[:3, :3] = linear
    mat[:3, 3] = trans
    if center is not None:
        c = np.asarray(center, dtype=float)
        mat[:3, 3] += c - linear @ c
    return Transform(mat, kind)


def minimize(cost_fn: Callable, init, step, cfg: Optional[OptimizerConfig] = None):
    """Coordinate-wise compass search with step halving.

    Each sweep tries ``+step`` and ``-step`` on every parameter (last
    successful direction first) and keeps any strict decrease. When a sweep
    improves the cost by less than ``cfg.convergence_tol`` all steps are
    halved; the search has converged once every step drops below
    ``min_step_ratio`` of its initial value.
    Deterministic and monotone: the returned cost never exceeds
    ``cost_fn(init)``.
    """
    cfg = cfg or OptimizerConfig()
    x = np.array(init, dtype=float)
    step = np.broadcast_to(np.asarray(step, dtype=float), x.shape).copy()
    floor = step * cfg.min_step_ratio
    direction = np.ones_like(x)
    fx = float(cost_fn(x))
    for it in range(1, cfg.max_iterations + 1):
        sweep_start = fx
        for i in range(len(x)):
            for sign in (direction[i], -direction[i]):
                y = x.copy()
                y[i] += sign * step[i]
                fy = float(cost_fn(y))
                # relative margin keeps accepted gains above rounding noise
                if fy < fx - 1e-12 * max(1.0, abs(fx)):
                    x, fx = y, fy
                    direction[i] = sign
                    break
        if sweep_start - fx < cfg.convergence_tol:
            step *= 0.5
            if np.all(step < floor):
                return MinimizeResult(x, fx, True, it)
    return MinimizeResult(x, fx, False, cfg.max_iterations)


def _stride_subsample(bundle, limit=MAX_COST_STREAMLINES):
    stride = -(-len(bundle) // limit)
    return bundle[::stride]


@dataclass(frozen=True)
class SlrResult:
    transform: Transform
    cost: float
    initial_cost: float
    converged: bool
    iterations: int


def slr_fit(moving, static, kind="rigid", init: Optional[Transform] = None,
            cfg: Optional[OptimizerConfig] = None) -> SlrResult:
    """Fit ``T`` so that ``T · moving`` lies close to ``static``.

    Parameters
    ----------
    moving, static : ndarray, shape (n, m, 3)
        Resampled bundles. Each is stride-subsampled to at most 500
        streamlines for the cost.
    kind : {'rigid', 'rigid+scale', 'affine'}
    init : Transform, optional
        Starting transform applied to ``moving``; identity by default.
    cfg : OptimizerConfig, optional

    Returns
    -------
    SlrResult
        ``transform`` includes ``init``. ``cost`` is
        ``bundle_cost(transform · moving_subset, static_subset)`` and never
        exceeds ``initial_cost``.
    """
    moving = np.asarray(moving, dtype=float)
    static = np.asarray(static, dtype=float)
    if len(moving) == 0 or len(static) == 0:
        raise ValueError("slr_fit needs non-empty moving and static bundles")
    cfg = cfg or OptimizerConfig()
    init = init or Transform.identity(kind)
    mov = _stride_subsample(moving)
    stat = _stride_subsample(static)

    start = apply_transform(mov, init)
    center = start.reshape(-1, 3).mean(axis=0)
    initial_cost = bundle_cost(start, stat)

    def cost(p):
        if kind == "rigid+scale" and not p[6] > 0:
            return np.inf
        return bundle_cost(apply_transform(start, params_to_transform(p, kind, center)), stat)

    res = minimize(cost, identity_params(kind), cfg.initial_steps(kind), cfg)
    refined = params_to_transform(res.params, kind, center)
    final = refined.compose(init)
    final_cost = bundle_cost(apply_transform(mov, final), stat)
    if final_cost > initial_cost:
        # composition rounding can only matter when nothing was gained
        return SlrResult(init, initial_cost, initial_cost, res.converged, res.iterations)
    return SlrResult(final, final_cost, initial_cost, res.converged, res.iterations)

