"""Streamline data model, arc-length resampling and linear transforms.

Streamlines are plain ``(n, 3)`` float64 arrays in world millimeters. The
small dataclasses below only carry what numpy arrays cannot: transform kind
and tractogram provenance.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_POINTS = 32

TRANSFORM_KINDS = ("rigid", "rigid+scale", "affine")


class DegenerateStreamlineError(ValueError):
    """Raised when a streamline has fewer than two distinct points."""


@dataclass(frozen=True)
class Transform:
    matrix: np.ndarray
    kind: str = "affine"

    def __post_init__(self):
        mat = np.array(self.matrix, dtype=float)
        if mat.shape != (4, 4):
            raise ValueError("transform matrix must be 4x4, got %s" % (mat.shape,))
        if not np.array_equal(mat[3], [0.0, 0.0, 0.0, 1.0]):
            raise ValueError("last row of a homogeneous matrix must be (0, 0, 0, 1)")
        if self.kind not in TRANSFORM_KINDS:
            raise ValueError("unknown transform kind %r" % self.kind)
        if self.kind == "rigid":
            rot = mat[:3, :3]
            if (not np.allclose(rot @ rot.T, np.eye(3), atol=1e-6)
                    or abs(np.linalg.det(rot) - 1.0) > 1e-6):
                raise ValueError("rigid transform needs a proper rotation block")
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)

    @classmethod
    def identity(cls, kind="rigid"):
        return cls(np.eye(4), kind)

    def compose(self, other: "Transform") -> "Transform":
        """Return ``self ∘ other`` (``other`` is applied first)."""
        kinds = (self.kind, other.kind)
        kind = max(kinds, key=TRANSFORM_KINDS.index)
        return Transform(_clean_last_row(self.matrix @ other.matrix), kind)


def _clean_last_row(mat):
    mat = np.array(mat, dtype=float)
    mat[3] = (0.0, 0.0, 0.0, 1.0)
    return mat


@dataclass
class Tractogram:
    streamlines: list = field(default_factory=list)
    provenance: str = "synthetic"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.streamlines = [np.asarray(s, dtype=float) for s in self.streamlines]

    def __len__(self):
        return len(self.streamlines)

    def __getitem__(self, i):
        return self.streamlines[i]

    def subset(self, ids):
        return Tractogram([self.streamlines[i] for i in ids], self.provenance)


def as_streamline(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError("streamline must be an (n, 3) array, got shape %s" % (pts.shape,))
    if len(pts) < 2:
        raise DegenerateStreamlineError("streamline needs at least 2 points")
    if not np.all(np.isfinite(pts)):
        raise ValueError("streamline coordinates must be finite")
    return pts


def normalize(points) -> np.ndarray:
    """Drop consecutive duplicate points.

    Raises DegenerateStreamlineError if fewer than two distinct points remain.
    """
    pts = as_streamline(points)
    keep = np.ones(len(pts), dtype=bool)
    keep[1:] = np.any(pts[1:] != pts[:-1], axis=1)
    pts = pts[keep]
    if len(pts) < 2:
        raise DegenerateStreamlineError("all points of the streamline are identical")
    return pts


def length(points) -> float:
    pts = np.asarray(points, dtype=float)
    if len(pts) < 2:
        return 0.0
    return float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))


def resample(points, m=DEFAULT_POINTS) -> np.ndarray:
    """Resample a polyline to ``m`` points equally spaced in arc length.

    Parameters
    ----------
    points : array_like, shape (n, 3)
        Polyline vertices in millimeters.
    m : int
        Number of output points (>= 2).

    Returns
    -------
    ndarray, shape (m, 3)
        First and last points are the input endpoints.
    """
    if m < 2:
        raise ValueError("m must be >= 2, got %d" % m)
    pts = normalize(points)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate(([0.0], np.cumsum(seg)))
    total = cum[-1]
    targets = total * np.arange(m) / (m - 1)
    # right side keeps interior vertices that land exactly on a target
    idx = np.clip(np.searchsorted(cum, targets, side="right") - 1, 0, len(seg) - 1)
    frac = (targets - cum[idx]) / seg[idx]
    out = pts[idx] + frac[:, None] * (pts[idx + 1] - pts[idx])
    out[0] = pts[0]
    out[-1] = pts[-1]
    return out


def resample_many(streamlines, m=DEFAULT_POINTS) -> np.ndarray:
    """Stack ``resample`` over a sequence into an ``(n, m, 3)`` array."""
    out = np.empty((len(streamlines), m, 3))
    for i, s in enumerate(streamlines):
        out[i] = resample(s, m)
    return out


def apply_transform(points, transform) -> np.ndarray:
    mat = transform.matrix if isinstance(transform, Transform) else np.asarray(transform, float)
    pts = np.asarray(points, dtype=float)
    return pts @ mat[:3, :3].T + mat[:3, 3]


def flip(points) -> np.ndarray:
    return np.asarray(points)[::-1]


def centroid(points) -> np.ndarray:
    return np.asarray(points, dtype=float).mean(axis=-2)
