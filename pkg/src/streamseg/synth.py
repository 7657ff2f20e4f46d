"""Deterministic synthetic bundles and scenes with known membership.

Every streamline draws its noise from its own Philox stream keyed by
``(seed, streamline index)``, so a streamline does not depend on how many
others are generated or in which order.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .core import Tractogram

FAMILIES = ("arc", "helix", "straight", "random")


@dataclass(frozen=True)
class SynthSpec:
    family: str = "arc"
    n_streamlines: int = 100
    n_points: int = 40
    radius: float = 40.0          # arc / helix radius, mm
    span_deg: float = 120.0       # arc / helix swept angle
    pitch: float = 20.0           # helix rise per turn, mm
    length: float = 80.0          # straight length / random curve length, mm
    extent: float = 60.0          # random family: side of the cube holding start points
    dispersion_sigma: float = 1.0
    noise_sigma: float = 0.0
    orientation_deg: tuple = (0.0, 0.0, 0.0)
    seed: int = 0
    name: str = "bundle"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError("unknown family %r, expected one of %s" % (self.family, FAMILIES))
        if self.n_streamlines < 1:
            raise ValueError("n_streamlines must be >= 1")
        if self.n_points < 2:
            raise ValueError("n_points must be >= 2")
        if self.dispersion_sigma < 0 or self.noise_sigma < 0:
            raise ValueError("sigmas must be >= 0")
        if self.family in ("arc", "helix") and self.radius <= 0:
            raise ValueError("radius must be positive")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must fit in 64 bits")
        object.__setattr__(self, "orientation_deg", tuple(float(a) for a in self.orientation_deg))

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _stream(seed, index):
    return np.random.Generator(np.random.Philox(key=int(seed) | (int(index) << 64)))


def centerline(spec: SynthSpec) -> np.ndarray:
    """Noise-free family curve, centered near the origin, before orientation."""
    t = np.linspace(0.0, 1.0, spec.n_points)
    if spec.family == "straight":
        x = (t - 0.5) * spec.length
        return np.stack([x, np.zeros_like(x), np.zeros_like(x)], axis=1)
    theta = np.deg2rad(spec.span_deg) * (t - 0.5)
    r = spec.radius
    if spec.family == "arc":
        return np.stack([r * np.sin(theta), r * (1.0 - np.cos(theta)), np.zeros_like(t)], axis=1)
    if spec.family == "helix":
        z = spec.pitch * theta / (2 * np.pi)
        return np.stack([r * np.cos(theta) - r, r * np.sin(theta), z], axis=1)
    raise ValueError("the random family has no shared centerline")


def _random_curve(rng, spec):
    step = spec.length / (spec.n_points - 1)
    start = rng.uniform(-spec.extent / 2, spec.extent / 2, size=3)
    heading = rng.normal(size=3)
    heading /= np.linalg.norm(heading)
    # slowly drifting heading: smooth, non-self-intersecting in practice
    dirs = heading + np.cumsum(rng.normal(scale=0.08, size=(spec.n_points - 1, 3)), axis=0)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return np.concatenate([start[None], start + np.cumsum(step * dirs, axis=0)])


def generate(spec: SynthSpec) -> Tractogram:
    """Streamlines scattered around the family centerline (or random curves)."""
    rot = Rotation.from_euler("XYZ", spec.orientation_deg, degrees=True).as_matrix()
    base = None if spec.family == "random" else centerline(spec)
    streamlines = []
    for i in range(spec.n_streamlines):
        rng = _stream(spec.seed, i)
        pts = _random_curve(rng, spec) if base is None else base.copy()
        pts += rng.normal(scale=1.0, size=3) * spec.dispersion_sigma
        pts += rng.normal(scale=1.0, size=pts.shape) * spec.noise_sigma
        streamlines.append(pts @ rot.T)
    tract = Tractogram(streamlines, "synthetic")
    tract.metadata["truth"] = {spec.name: list(range(spec.n_streamlines))}
    return tract


def compose_scene(bundles, decoys=None, decoy_offset=(0.0, 0.0, 0.0)):
    """Concatenate bundles (each ``(SynthSpec, offset)``) and optional decoys.

    Returns
    -------
    tractogram : Tractogram
    truth : dict
        Bundle name -> sorted list of its streamline IDs; decoys under
        ``"decoys"``.
    """
    streamlines, truth = [], {}
    parts = [(spec, offset, spec.name) for spec, offset in bundles]
    if decoys is not None:
        parts.append((decoys, decoy_offset, "decoys"))
    for spec, offset, name in parts:
        if name in truth:
            raise ValueError("duplicate bundle name %r in scene" % name)
        start = len(streamlines)
        offset = np.asarray(offset, dtype=float)
        streamlines.extend(s + offset for s in generate(spec).streamlines)
        truth[name] = list(range(start, len(streamlines)))
    tract = Tractogram(streamlines, "synthetic")
    tract.metadata["truth"] = truth
    return tract, truth
