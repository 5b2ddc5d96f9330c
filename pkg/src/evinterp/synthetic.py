"""Procedural test scenes with known motion.

A scene is a smooth random background plus textured discs or squares that
follow analytic trajectories.  Rendering is anti-aliased so sub-pixel motion
produces smoothly varying intensities, which the event simulator needs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .events import EventStream, Frame, SimulatorConfig, simulate_events

Trajectory = Callable[[float], Tuple[float, float]]


def smooth_texture(h: int, w: int, rng: np.random.Generator, sigma: float = 2.0,
                   lo: float = 0.1, hi: float = 0.9) -> np.ndarray:
    noise = ndimage.gaussian_filter(rng.random((h, w)), sigma, mode="wrap")
    noise -= noise.min()
    noise /= max(noise.max(), 1e-12)
    return lo + (hi - lo) * noise


@dataclass
class Sprite:
    """A textured shape whose centre follows ``path(t)`` for normalized ``t``."""

    texture: np.ndarray
    radius: float
    path: Trajectory
    shape: str = "disc"

    def center(self, t: float) -> Tuple[float, float]:
        return self.path(t)

    def coverage(self, t: float, h: int, w: int) -> np.ndarray:
        cx, cy = self.center(t)
        gy, gx = np.mgrid[0:h, 0:w].astype(np.float64)
        if self.shape == "disc":
            dist = np.hypot(gx - cx, gy - cy)
        else:
            dist = np.maximum(np.abs(gx - cx), np.abs(gy - cy))
        return np.clip(self.radius - dist + 0.5, 0.0, 1.0)

    def sample(self, t: float, h: int, w: int) -> np.ndarray:
        cx, cy = self.center(t)
        th, tw = self.texture.shape
        gy, gx = np.mgrid[0:h, 0:w].astype(np.float64)
        coords = [gy - cy + th / 2, gx - cx + tw / 2]
        return ndimage.map_coordinates(self.texture, coords, order=1, mode="reflect")


@dataclass
class Scene:
    height: int
    width: int
    background: np.ndarray
    sprites: List[Sprite] = field(default_factory=list)
    background_path: Optional[Trajectory] = None

    def render(self, t: float) -> np.ndarray:
        h, w = self.height, self.width
        if self.background_path is None:
            img = self.background.copy()
        else:
            ox, oy = self.background_path(t)
            gy, gx = np.mgrid[0:h, 0:w].astype(np.float64)
            img = ndimage.map_coordinates(self.background, [gy - oy, gx - ox], order=1,
                                          mode="reflect")
        for sp in self.sprites:
            a = sp.coverage(t, h, w)
            img = (1 - a) * img + a * sp.sample(t, h, w)
        return np.clip(img, 0.0, 1.0)

    def frame(self, t: float, t0_us: int = 0, span_us: int = 10_000) -> Frame:
        return Frame(self.render(t), t0_us + int(round(t * span_us)))

    def true_flow(self, t0: float, t1: float) -> np.ndarray:
        """Forward displacement of every pixel visible at ``t0`` until ``t1``."""
        h, w = self.height, self.width
        flow = np.zeros((2, h, w))
        if self.background_path is not None:
            a, b = self.background_path(t0), self.background_path(t1)
            flow[0] += b[0] - a[0]
            flow[1] += b[1] - a[1]
        for sp in self.sprites:
            a = sp.coverage(t0, h, w) >= 0.5
            (x0, y0), (x1, y1) = sp.center(t0), sp.center(t1)
            flow[0][a] = x1 - x0
            flow[1][a] = y1 - y0
        return flow

    def object_mask(self, t: float) -> np.ndarray:
        mask = np.zeros((self.height, self.width), dtype=bool)
        for sp in self.sprites:
            mask |= sp.coverage(t, self.height, self.width) >= 0.5
        return mask


def simulate_scene(scene: Scene, n_keyframes: int = 2, span_us: int = 10_000,
                   substeps: int = 32, cfg: SimulatorConfig = SimulatorConfig()
                   ) -> Tuple[List[Frame], EventStream]:
    """Render keyframes every ``span_us`` and simulate events from a dense render.

    Normalized scene time runs from 0 at the first keyframe to 1 at the second;
    later keyframes continue past 1.
    """
    total = (n_keyframes - 1) * substeps
    fine = [Frame(scene.render(i / substeps), round(i * span_us / substeps))
            for i in range(total + 1)]
    events = simulate_events(fine, cfg)
    keys = [fine[i * substeps] for i in range(n_keyframes)]
    return keys, events


def ground_truth_frames(scene: Scene, times: Sequence[float], span_us: int = 10_000) -> List[Frame]:
    return [scene.frame(t, 0, span_us) for t in times]


def translating_scene(size: int = 64, velocity: Tuple[float, float] = (8.0, 0.0), radius: float = 10.0,
                      seed: int = 0, shape: str = "square",
                      texture_range: Tuple[float, float] = (0.5, 0.95)) -> Scene:
    """A textured sprite moving at constant velocity (pixels per unit time)."""
    rng = np.random.default_rng(seed)
    bg = smooth_texture(size, size, rng, sigma=2.5, lo=0.15, hi=0.55)
    tex = smooth_texture(4 * int(radius) + 8, 4 * int(radius) + 8, rng, sigma=1.5,
                         lo=texture_range[0], hi=texture_range[1])
    start = (size / 2 - velocity[0] / 2, size / 2 - velocity[1] / 2)
    path = lambda t: (start[0] + velocity[0] * t, start[1] + velocity[1] * t)  # noqa: E731
    return Scene(size, size, bg, [Sprite(tex, radius, path, shape)])


def parabola_scene(size: int = 64, seed: int = 0, radius: float = 9.0,
                   vx: float = 14.0, lift: float = 28.0, bounce: bool = False,
                   bounce_at: float = 0.5) -> Scene:
    """A textured ball on a ballistic arc: linear in x, quadratic in y.

    Without ``bounce`` the ball rises and falls back to its launch height, so
    the endpoint displacement is purely horizontal while the mid-time one is
    not.  With ``bounce`` the ball is thrown downwards and reflects off a floor
    at ``bounce_at``, giving a kinked, piecewise-parabolic trajectory.
    """
    rng = np.random.default_rng(seed)
    bg = smooth_texture(size, size, rng, sigma=2.5, lo=0.1, hi=0.5)
    tex = smooth_texture(4 * int(radius) + 8, 4 * int(radius) + 8, rng, sigma=1.5, lo=0.5, hi=0.95)
    x0 = size / 2 - vx / 2
    if not bounce:
        y0 = size / 2 + lift / 8
        path = lambda t: (x0 + vx * t, y0 - lift * t * (1 - t))  # noqa: E731
    else:
        floor = size / 2 + lift / 8
        path = lambda t: (x0 + vx * t, floor - lift * abs(t - bounce_at) * (1.5 - abs(t - bounce_at)))  # noqa: E731
    return Scene(size, size, bg, [Sprite(tex, radius, path, "disc")])


def occlusion_scene(size: int = 64, seed: int = 0) -> Scene:
    """A front square sweeping across a slower back disc."""
    rng = np.random.default_rng(seed)
    bg = smooth_texture(size, size, rng, sigma=2.5, lo=0.1, hi=0.4)
    back_tex = smooth_texture(48, 48, rng, sigma=1.5, lo=0.45, hi=0.65)
    front_tex = smooth_texture(48, 48, rng, sigma=1.5, lo=0.75, hi=1.0)
    c = size / 2
    back = Sprite(back_tex, 10.0, lambda t: (c + 2 - 2 * t, c), "disc")
    front = Sprite(front_tex, 8.0, lambda t: (c - 14 + 16 * t, c), "square")
    return Scene(size, size, bg, [back, front])


def parabola_suite(n: int = 6, size: int = 64, seed: int = 0) -> List[Scene]:
    """Alternating free arcs and bouncing arcs with varied speed, height and bounce time."""
    rng = np.random.default_rng(seed)
    scenes = []
    for i in range(n):
        vx = float(rng.uniform(10.0, 16.0)) * (1 if rng.random() < 0.5 else -1)
        lift = float(rng.uniform(22.0, 30.0))
        at = float(rng.uniform(0.35, 0.65))
        scenes.append(parabola_scene(size, seed=seed * 1000 + i, vx=vx, lift=lift,
                                     bounce=bool(i % 2), bounce_at=at))
    return scenes


def slowed(scene: Scene, factor: float) -> Scene:
    """The same scene played ``factor`` times slower (motion over [0, 1] now spans [0, factor])."""
    def stretch(path):
        return None if path is None else (lambda t: path(t / factor))
    sprites = [Sprite(sp.texture, sp.radius, stretch(sp.path), sp.shape) for sp in scene.sprites]
    return Scene(scene.height, scene.width, scene.background, sprites, stretch(scene.background_path))
