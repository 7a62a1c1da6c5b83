"""Software rasterizer implementing the render map from states to frames.

Geometry is drawn with analytic anti-aliasing (coverage from the distance
between pixel centre and primitive), so fractional positions show up as
pixel intensities. That is what keeps the injective mode injective on
quantised state grids. Velocities, which a single frame cannot otherwise
show, are drawn as gauge bars along the bottom of the frame.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .base import Env
from .image import crop_shake_batch, to_u8

MODES = ("injective", "occluding", "axis_degenerate")

# (rgb, grey) per primitive
PALETTE = {
    "cart": ((230, 120, 40), 170),
    "pole": ((60, 160, 230), 255),
    "gauge_a": ((200, 200, 60), 120),
    "gauge_b": ((120, 220, 120), 90),
    "pivot": ((140, 140, 140), 60),
    "mass": ((240, 80, 80), 220),
    "cell": ((240, 240, 240), 200),
    "occluder": ((90, 90, 90), 40),
}

DEFAULT_OCCLUDERS = {
    "cartpole_analog": (0.62, 0.0, 0.95, 0.74),
    "pendulum_analog": (0.2, 0.4, 0.8, 0.86),
    "point_mass": (0.55, 0.55, 0.95, 0.95),
    "grid_mdp": (0.0, 0.0, 0.4, 0.2),
}

CHUNK = 256


@dataclass(frozen=True)
class RenderMap:
    width: int = 64
    height: int = 64
    channels: int = 3
    mode: str = "injective"
    occluder: tuple[float, float, float, float] | None = None  # frame fractions x0, y0, x1, y1
    crop_shake_max: float = 0.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"render mode must be one of {MODES}, got {self.mode!r}")
        if self.channels not in (1, 3):
            raise ValueError("channels must be 1 or 3")
        if not 0.0 <= self.crop_shake_max <= 0.05:
            raise ValueError("crop_shake_max must lie in [0, 0.05]")
        if self.width < 8 or self.height < 8:
            raise ValueError("frames must be at least 8x8")

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.height, self.width, self.channels)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["occluder"] = list(self.occluder) if self.occluder is not None else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RenderMap":
        d = dict(d)
        if d.get("occluder") is not None:
            d["occluder"] = tuple(d["occluder"])
        return cls(**d)

    @classmethod
    def fast(cls, **kw) -> "RenderMap":
        return cls(width=32, height=32, channels=1, **kw)


class _Canvas:
    """Batch of float frames plus pixel-centre coordinates."""

    def __init__(self, n: int, rm: RenderMap):
        self.rm = rm
        self.img = np.zeros((n, rm.height, rm.width, rm.channels))
        ys, xs = np.mgrid[0:rm.height, 0:rm.width]
        self.px = (xs + 0.5)[None].astype(np.float64)
        self.py = (ys + 0.5)[None].astype(np.float64)
        self.unit = rm.width / 32.0  # stroke widths scale with resolution

    def paint(self, coverage: np.ndarray, name: str) -> None:
        rgb, grey = PALETTE[name]
        color = np.array(rgb if self.rm.channels == 3 else (grey,), dtype=np.float64)
        cov = coverage[..., None]
        self.img = self.img * (1.0 - cov) + color * cov

    # primitives, all taking (N,) arrays of pixel-unit parameters

    def disk(self, cx, cy, radius):
        d = np.hypot(self.px - cx[:, None, None], self.py - cy[:, None, None])
        return np.clip(radius - d, 0.0, 1.0)

    def box(self, cx, cy, half_w, half_h):
        half_w = np.broadcast_to(half_w, cx.shape)[:, None, None]
        half_h = np.broadcast_to(half_h, cx.shape)[:, None, None]
        cov_x = np.clip(half_w + 0.5 - np.abs(self.px - cx[:, None, None]), 0.0, 1.0)
        cov_y = np.clip(half_h + 0.5 - np.abs(self.py - cy[:, None, None]), 0.0, 1.0)
        return cov_x * cov_y

    def segment(self, x0, y0, x1, y1, half_thickness):
        x0, y0, x1, y1 = (v[:, None, None] for v in (x0, y0, x1, y1))
        dx, dy = x1 - x0, y1 - y0
        len2 = np.maximum(dx * dx + dy * dy, 1e-12)
        t = np.clip(((self.px - x0) * dx + (self.py - y0) * dy) / len2, 0.0, 1.0)
        d = np.hypot(self.px - (x0 + t * dx), self.py - (y0 + t * dy))
        return np.clip(half_thickness + 0.5 - d, 0.0, 1.0)

    def gauge(self, value, limit, row_frac, name):
        """Horizontal bar from the frame centre to value/limit of the half-width."""
        w, h = self.rm.width, self.rm.height
        frac = np.clip(value / limit, -1.0, 1.0)
        end = 0.5 * w + frac * 0.45 * w
        centre = 0.5 * (0.5 * w + end)
        half = np.abs(end - 0.5 * w) / 2
        self.paint(self.box(centre, np.full_like(value, row_frac * h), half, 0.8 * self.unit), name)
        return np.abs(value) > limit

    def occlude(self, rect):
        x0, y0, x1, y1 = rect
        w, h = self.rm.width, self.rm.height
        inside = ((self.px >= x0 * w) & (self.px <= x1 * w) & (self.py >= y0 * h) & (self.py <= y1 * h))
        cov = np.broadcast_to(inside.astype(np.float64), self.img.shape[:3])
        self.paint(cov, "occluder")

    def finish(self, saturated: np.ndarray) -> np.ndarray:
        out = to_u8(self.img)
        out[saturated, 0, 0, :] = 255
        return out


def _draw_cartpole(c: _Canvas, s: np.ndarray, degenerate: bool) -> np.ndarray:
    w, h = c.rm.width, c.rm.height
    x_box = 2.6
    x, x_dot, theta, theta_dot = s.T
    sat = np.abs(x) > x_box
    x = np.zeros_like(x) if degenerate else np.clip(x, -x_box, x_box)
    cx = 0.5 * w + x / x_box * 0.42 * w
    cy = np.full_like(cx, 0.62 * h)
    c.paint(c.box(cx, cy, 0.07 * w, 0.04 * h), "cart")
    top = cy - 0.04 * h
    length = 0.42 * h
    c.paint(c.segment(cx, top, cx + length * np.sin(theta), top - length * np.cos(theta), 0.6 * c.unit), "pole")
    sat |= c.gauge(x_dot, 3.0, 0.84, "gauge_a")
    sat |= c.gauge(theta_dot, 4.0, 0.94, "gauge_b")
    return sat


def _draw_pendulum(c: _Canvas, s: np.ndarray, degenerate: bool) -> np.ndarray:
    w, h = c.rm.width, c.rm.height
    theta, omega = s.T
    pivot_x = np.full_like(theta, 0.5 * w)
    pivot_y = np.full_like(theta, 0.45 * h)
    length = 0.33 * h
    c.paint(c.segment(pivot_x, pivot_y, pivot_x + length * np.sin(theta), pivot_y - length * np.cos(theta),
                      1.0 * c.unit), "pole")
    c.paint(c.disk(pivot_x, pivot_y, 1.2 * c.unit), "pivot")
    if degenerate:
        return np.zeros(len(s), dtype=bool)
    return c.gauge(omega, 8.0, 0.93, "gauge_a")


def _draw_point_mass(c: _Canvas, s: np.ndarray, degenerate: bool) -> np.ndarray:
    w, h = c.rm.width, c.rm.height
    sat = np.any(np.abs(s) > 1.0, axis=1)
    p = np.clip(s, -1.0, 1.0)
    y = np.zeros(len(s)) if degenerate else p[:, 1]
    cx = 0.5 * w + p[:, 0] * 0.38 * w
    cy = 0.5 * h - y * 0.38 * h
    c.paint(c.disk(cx, cy, point_mass_radius(c.rm)), "mass")
    return sat


def point_mass_radius(rm: RenderMap) -> float:
    return 0.09 * rm.width


def _draw_grid(c: _Canvas, s: np.ndarray, degenerate: bool, layout) -> np.ndarray:
    rows, cols = layout
    idx = np.argmax(s, axis=1)
    r, col = np.divmod(idx, cols)
    if degenerate:
        r = np.zeros_like(r)
    cell_w, cell_h = c.rm.width / cols, c.rm.height / rows
    cx = (col + 0.5) * cell_w
    cy = (r + 0.5) * cell_h
    c.paint(c.box(cx.astype(np.float64), cy.astype(np.float64), 0.3 * cell_w, 0.3 * cell_h), "cell")
    return np.zeros(len(s), dtype=bool)


def render(env: Env, states, rm: RenderMap) -> np.ndarray:
    """Deterministic frames for one state ``(d,)`` or a batch ``(N, d)``."""
    states = np.asarray(states, dtype=np.float64)
    single = states.ndim == 1
    states = np.atleast_2d(states)
    frames = np.empty((len(states), *rm.shape), dtype=np.uint8)
    for start in range(0, len(states), CHUNK):
        chunk = states[start:start + CHUNK]
        frames[start:start + len(chunk)] = _render_chunk(env, chunk, rm)
    return frames[0] if single else frames


def _render_chunk(env: Env, states: np.ndarray, rm: RenderMap) -> np.ndarray:
    c = _Canvas(len(states), rm)
    degenerate = rm.mode == "axis_degenerate"
    env_id = env.spec.id
    if env_id == "cartpole_analog":
        sat = _draw_cartpole(c, states, degenerate)
    elif env_id == "pendulum_analog":
        sat = _draw_pendulum(c, states, degenerate)
    elif env_id == "point_mass":
        sat = _draw_point_mass(c, states, degenerate)
    elif env_id == "grid_mdp":
        sat = _draw_grid(c, states, degenerate, env.layout)
    else:
        raise ValueError(f"no renderer for environment {env_id!r}")
    if rm.mode == "occluding":
        c.occlude(rm.occluder if rm.occluder is not None else DEFAULT_OCCLUDERS[env_id])
    return c.finish(sat)


def render_observed(env: Env, states, rm: RenderMap, rng: np.random.Generator) -> np.ndarray:
    """Frames as a camera sees them: rendered, then shaken if the map asks for it."""
    frames = render(env, states, rm)
    if rm.crop_shake_max == 0:
        return frames
    if frames.ndim == 3:
        return crop_shake_batch(frames[None], rm.crop_shake_max, rng)[0]
    return crop_shake_batch(frames, rm.crop_shake_max, rng)


def ignored_coordinate(env_id: str) -> int:
    """State coordinate dropped by the axis-degenerate renderer (grid: the row)."""
    return {"cartpole_analog": 0, "pendulum_analog": 1, "point_mass": 1, "grid_mdp": -1}[env_id]
