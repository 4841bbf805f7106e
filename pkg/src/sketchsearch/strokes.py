"""Stroke episodes and their rendering into incremental partial sketches.

An episode is the ordered list of strokes a drawer produced for one target
photo, with coordinates normalized to [0, 1] so episode files are resolution
independent. Episodes are cut into T cumulative point prefixes ("partials"),
rasterized onto a binary pixel grid, and optionally re-ordered to simulate
different drawing orders.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fileio import write_atomic


class EpisodeError(ValueError):
    """Malformed or invalid episode record."""


@dataclass(frozen=True)
class StrokeEpisode:
    """Ordered strokes for one sketch of one target photo.

    Each stroke is an (n, 2) float array of x, y points in [0, 1].
    """

    photo_id: str
    strokes: list[np.ndarray]
    order_tag: str | None = None

    @property
    def point_count(self) -> int:
        return sum(len(s) for s in self.strokes)


@dataclass(frozen=True)
class PartialSketch:
    """Cumulative point prefix of a flattened episode at rendering step ``step``.

    ``strokes`` keeps the prefix segmented at the original stroke boundaries so
    rasterization never joins points across strokes; the final stroke may be
    cut short.
    """

    step: int
    total_steps: int
    strokes: list[np.ndarray] = field(repr=False)

    @property
    def points(self) -> np.ndarray:
        if not self.strokes:
            return np.empty((0, 2), dtype=float)
        return np.concatenate(self.strokes, axis=0)

    @property
    def point_count(self) -> int:
        return sum(len(s) for s in self.strokes)


@dataclass(frozen=True)
class Raster:
    """Binary occupancy grid; ``pixels[row, col]`` with row 0 at y = 0."""

    width: int
    height: int
    pixels: np.ndarray = field(repr=False)


def _as_point(value, where: str) -> tuple[float, float]:
    if (
        not isinstance(value, (list, tuple))
        or len(value) != 2
        or not all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in value)
    ):
        raise EpisodeError(f"{where}: point must be a [x, y] number pair, got {value!r}")
    x, y = float(value[0]), float(value[1])
    if not (math.isfinite(x) and math.isfinite(y)):
        raise EpisodeError(f"{where}: non-finite coordinate {value!r}")
    if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
        raise EpisodeError(f"{where}: coordinate {value!r} outside [0, 1]")
    return x, y


def parse_episode(record: dict) -> StrokeEpisode:
    """Validate one episode record (see the episode file format) into a StrokeEpisode.

    Raises EpisodeError naming the offending field, stroke, or point.
    """
    if not isinstance(record, dict):
        raise EpisodeError(f"episode record must be an object, got {type(record).__name__}")
    photo_id = record.get("photo_id")
    if not isinstance(photo_id, str) or not photo_id:
        raise EpisodeError("field 'photo_id': must be a non-empty string")
    order_tag = record.get("order_tag")
    if order_tag is not None and not isinstance(order_tag, str):
        raise EpisodeError("field 'order_tag': must be a string when present")
    raw_strokes = record.get("strokes")
    if not isinstance(raw_strokes, list) or not raw_strokes:
        raise EpisodeError("field 'strokes': must be a non-empty list of strokes")
    strokes: list[np.ndarray] = []
    for i, raw in enumerate(raw_strokes):
        if not isinstance(raw, list):
            raise EpisodeError(f"stroke {i}: must be a list of points")
        if len(raw) < 2:
            raise EpisodeError(f"stroke {i}: needs at least 2 points, got {len(raw)}")
        pts = [_as_point(p, f"stroke {i} point {j}") for j, p in enumerate(raw)]
        strokes.append(np.array(pts, dtype=float))
    return StrokeEpisode(photo_id=photo_id, strokes=strokes, order_tag=order_tag)


def load_episodes(path: str | Path) -> list[StrokeEpisode]:
    """Read newline-delimited episode records from ``path``."""
    episodes = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise EpisodeError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            try:
                episodes.append(parse_episode(record))
            except EpisodeError as exc:
                raise EpisodeError(f"{path}:{lineno}: {exc}") from exc
    if not episodes:
        raise EpisodeError(f"{path}: no episode records found")
    return episodes


def save_episodes(episodes: list[StrokeEpisode], path: str | Path) -> None:
    lines = []
    for ep in episodes:
        record = {
            "photo_id": ep.photo_id,
            "strokes": [s.tolist() for s in ep.strokes],
        }
        if ep.order_tag is not None:
            record["order_tag"] = ep.order_tag
        lines.append(json.dumps(record))
    write_atomic(path, "\n".join(lines) + "\n")


def render_partials(episode: StrokeEpisode, total_steps: int) -> list[PartialSketch]:
    """Cut the episode into ``total_steps`` cumulative point prefixes.

    All strokes are flattened into one point sequence of length N (stroke
    order preserved); partial t holds the first ceil((t+1) * N / total_steps)
    points, so the last partial is always the complete episode. Granularity is
    by point count, not stroke count, so every episode yields exactly
    ``total_steps`` partials.
    """
    if total_steps < 1:
        raise ValueError(f"total_steps must be >= 1, got {total_steps}")
    n_points = episode.point_count
    partials = []
    for t in range(total_steps):
        prefix = -((t + 1) * n_points // -total_steps)  # ceil
        partials.append(
            PartialSketch(step=t, total_steps=total_steps, strokes=_cut_prefix(episode.strokes, prefix))
        )
    return partials


def _cut_prefix(strokes: list[np.ndarray], n: int) -> list[np.ndarray]:
    """First ``n`` points of the flattened episode, re-segmented per stroke."""
    out: list[np.ndarray] = []
    remaining = n
    for stroke in strokes:
        if remaining <= 0:
            break
        take = min(remaining, len(stroke))
        out.append(stroke[:take])
        remaining -= take
    return out


def segments_of(strokes: list[np.ndarray]) -> np.ndarray:
    """Consecutive point pairs within each stroke as an (m, 4) array x0,y0,x1,y1.

    Pairs never span a stroke boundary; strokes cut down to a single point
    contribute no segment.
    """
    chunks = [
        np.concatenate([s[:-1], s[1:]], axis=1)
        for s in strokes
        if len(s) >= 2
    ]
    if not chunks:
        return np.empty((0, 4), dtype=float)
    return np.concatenate(chunks, axis=0)


def rasterize(strokes: list[np.ndarray], width: int, height: int) -> Raster:
    """Draw a stroke-segmented point prefix onto a binary grid.

    Normalized coordinates map to the pixel lattice via nearest-pixel rounding
    (ties to even): col = round(x * (width - 1)), row = round(y * (height - 1)).
    Consecutive points within one stroke are joined by Bresenham line segments
    one pixel wide; nothing is drawn across stroke boundaries. Deterministic.
    """
    if width <= 0 or height <= 0:
        raise ValueError(f"raster must have positive area, got {width}x{height}")
    pixels = np.zeros((height, width), dtype=np.uint8)
    for stroke in strokes:
        if len(stroke) == 0:
            continue
        cols = np.round(stroke[:, 0] * (width - 1)).astype(int)
        rows = np.round(stroke[:, 1] * (height - 1)).astype(int)
        if len(stroke) == 1:
            pixels[rows[0], cols[0]] = 1
            continue
        for i in range(len(stroke) - 1):
            _draw_line(pixels, cols[i], rows[i], cols[i + 1], rows[i + 1])
    return Raster(width=width, height=height, pixels=pixels)


def _draw_line(pixels: np.ndarray, x0: int, y0: int, x1: int, y1: int) -> None:
    # Bresenham, both endpoints inclusive.
    dx = abs(x1 - x0)
    dy = -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    x, y = x0, y0
    while True:
        pixels[y, x] = 1
        if x == x1 and y == y1:
            return
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x += sx
        if e2 <= dx:
            err += dx
            y += sy


def permute_strokes(episode: StrokeEpisode, seed: int) -> StrokeEpisode:
    """Reorder the strokes pseudo-randomly; points within strokes untouched.

    The permutation depends only on ``seed``; the returned order_tag records it.
    """
    order = np.random.default_rng(seed).permutation(len(episode.strokes))
    return StrokeEpisode(
        photo_id=episode.photo_id,
        strokes=[episode.strokes[i] for i in order],
        order_tag=f"perm-{seed}",
    )


def write_pgm(raster: Raster, path: str | Path) -> None:
    """Debug output: binary portable graymap (P5), maxval 255, set pixels = 255."""
    header = f"P5\n{raster.width} {raster.height}\n255\n".encode("ascii")
    write_atomic(path, header + (raster.pixels.astype(np.uint8) * 255).tobytes())
