"""Frozen high-dimensional features standing in for a fixed CNN backbone.

Sketch rasters get a deterministic grid-orientation histogram; photo features
(or real CNN embeddings for either modality) are ingested from feature files.
A seeded synthetic generator produces desk-scale photo/episode feature sets
with a controllable per-stage distortion, so stage-wise maps have something a
single global map cannot fit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fileio import write_atomic
from .strokes import Raster, rasterize, segments_of

DEFAULT_GRID = 16
DEFAULT_BINS = 8


class FeatureFormatError(ValueError):
    """Malformed feature record or file."""


@dataclass(frozen=True)
class FeatureVector:
    id: str
    v: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return len(self.v)


def extract_grid_features(
    raster: Raster | None,
    segments: np.ndarray,
    grid: int = DEFAULT_GRID,
    bins: int = DEFAULT_BINS,
    feature_id: str = "",
) -> FeatureVector:
    """Grid-orientation histogram of the drawn segments.

    Each segment adds its Euclidean length to the bin indexed by the grid cell
    containing its midpoint and the orientation bin of its undirected
    direction over [0, pi). Index layout is row-major: (row * grid + col) *
    bins + orientation. Zero-length segments contribute nothing. The raster is
    the image the segments were drawn onto and is carried for parity with
    image-based extractors; the histogram itself is computed from the vector
    geometry, so the L1 norm of the result equals the summed segment lengths
    up to accumulation rounding.
    """
    if grid < 1 or bins < 1:
        raise ValueError(f"grid and bins must be >= 1, got grid={grid} bins={bins}")
    hist = np.zeros(grid * grid * bins, dtype=float)
    segments = np.asarray(segments, dtype=float).reshape(-1, 4)
    if len(segments) == 0:
        return FeatureVector(id=feature_id, v=hist)
    dx = segments[:, 2] - segments[:, 0]
    dy = segments[:, 3] - segments[:, 1]
    lengths = np.hypot(dx, dy)
    keep = lengths > 0.0
    if not keep.any():
        return FeatureVector(id=feature_id, v=hist)
    segments, dx, dy, lengths = segments[keep], dx[keep], dy[keep], lengths[keep]
    mx = (segments[:, 0] + segments[:, 2]) / 2.0
    my = (segments[:, 1] + segments[:, 3]) / 2.0
    col = np.minimum((mx * grid).astype(int), grid - 1)
    row = np.minimum((my * grid).astype(int), grid - 1)
    theta = np.mod(np.arctan2(dy, dx), math.pi)
    obin = np.minimum((theta / (math.pi / bins)).astype(int), bins - 1)
    np.add.at(hist, (row * grid + col) * bins + obin, lengths)
    return FeatureVector(id=feature_id, v=hist)


@dataclass(frozen=True)
class GridExtractor:
    """Raster pipeline configuration: raster size plus histogram shape.

    With the defaults (grid 16, bins 8) the feature width is 16*16*8 = 2048.
    """

    grid: int = DEFAULT_GRID
    bins: int = DEFAULT_BINS
    width: int = 256
    height: int = 256

    @property
    def dim(self) -> int:
        return self.grid * self.grid * self.bins

    def features_for(self, strokes: list[np.ndarray], feature_id: str = "") -> FeatureVector:
        raster = rasterize(strokes, self.width, self.height)
        return extract_grid_features(raster, segments_of(strokes), self.grid, self.bins, feature_id)

    def to_json(self) -> dict:
        return {
            "type": "grid",
            "grid": self.grid,
            "bins": self.bins,
            "width": self.width,
            "height": self.height,
        }

    @staticmethod
    def from_json(obj: dict) -> "GridExtractor":
        return GridExtractor(
            grid=int(obj["grid"]),
            bins=int(obj["bins"]),
            width=int(obj["width"]),
            height=int(obj["height"]),
        )


def save_features(features: list[FeatureVector], path: str | Path) -> None:
    """Write newline-delimited {"id", "v"} records in decimal text.

    Components are serialized with Python's shortest round-trip float repr, so
    load_features reproduces them exactly.
    """
    lines = [
        json.dumps({"id": feat.id, "v": [float(c) for c in feat.v]}) for feat in features
    ]
    write_atomic(path, "\n".join(lines) + "\n")


def load_features(path: str | Path) -> list[FeatureVector]:
    """Read a feature file; the first record fixes the dimension."""
    features: list[FeatureVector] = []
    dim = None
    first_id = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FeatureFormatError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if not isinstance(record, dict) or not isinstance(record.get("id"), str) or not record["id"]:
                raise FeatureFormatError(f"{path}:{lineno}: record needs a non-empty string 'id'")
            rid = record["id"]
            raw = record.get("v")
            if not isinstance(raw, list) or not raw:
                raise FeatureFormatError(f"{path}:{lineno}: record {rid!r} needs a non-empty 'v' list")
            v = np.array(raw, dtype=float)
            if not np.isfinite(v).all():
                raise FeatureFormatError(f"{path}:{lineno}: record {rid!r} has a non-finite component")
            if dim is None:
                dim, first_id = len(v), rid
            elif len(v) != dim:
                raise FeatureFormatError(
                    f"{path}:{lineno}: record {rid!r} has dimension {len(v)}, "
                    f"but record {first_id!r} fixed the dimension at {dim}"
                )
            features.append(FeatureVector(id=rid, v=v))
    if not features:
        raise FeatureFormatError(f"{path}: no feature records found")
    return features


@dataclass(frozen=True)
class SyntheticDataset:
    """Seeded desk-scale photo/episode feature set.

    ``episodes[i]`` is the feature trajectory (one FeatureVector per rendering
    step) of the sketch episode for ``photo_features[i]``.
    """

    photo_features: list[FeatureVector]
    episodes: list[list[FeatureVector]]
    seed: int
    H: int
    T: int
    stage_profile: int
    noise: float


def _stage_distortions(rng: np.random.Generator, H: int, k: int) -> list[np.ndarray | None]:
    """One fixed distortion per stage: a distinct random rotation of the whole
    feature space for every stage except the last, which is the identity so
    complete sketches resemble their photos."""
    distortions: list[np.ndarray | None] = []
    for j in range(k):
        if j == k - 1:
            distortions.append(None)
            continue
        q, r = np.linalg.qr(rng.standard_normal((H, H)))
        q *= np.sign(np.diag(r))  # fix QR sign ambiguity
        distortions.append(q)
    return distortions


def gen_synthetic(
    n_photos: int,
    H: int,
    T: int,
    k_profile: int,
    noise: float,
    seed: int,
) -> SyntheticDataset:
    """Generate photo features plus one episode trajectory per photo.

    Each trajectory interpolates from a random start toward its photo feature
    with per-step noise that fades as the sketch completes, then applies the
    fixed distortion of its stage segment (k_profile even segments of the T
    steps). Step T-1 therefore coincides with the photo feature and is the
    closest step to it. Deterministic in ``seed``.
    """
    if n_photos < 2:
        raise ValueError(f"n_photos must be >= 2, got {n_photos}")
    if H < 2:
        raise ValueError(f"H must be >= 2, got {H}")
    if not (T >= k_profile >= 1):
        raise ValueError(f"need T >= k_profile >= 1, got T={T} k_profile={k_profile}")
    rng = np.random.default_rng(seed)
    photos = rng.standard_normal((n_photos, H))
    distortions = _stage_distortions(rng, H, k_profile)
    photo_features = [FeatureVector(id=f"photo-{i:04d}", v=photos[i]) for i in range(n_photos)]
    episodes: list[list[FeatureVector]] = []
    for i in range(n_photos):
        start = rng.standard_normal(H) * 2.0
        trajectory = []
        for t in range(T):
            alpha = (t + 1) / T
            z = photos[i] + (1.0 - alpha) * (start - photos[i])
            z = z + noise * (1.0 - alpha) * rng.standard_normal(H)
            stage = min(k_profile - 1, t * k_profile // T)
            if distortions[stage] is not None:
                z = distortions[stage] @ z
            trajectory.append(FeatureVector(id=f"photo-{i:04d}#{t}", v=z))
        episodes.append(trajectory)
    return SyntheticDataset(
        photo_features=photo_features,
        episodes=episodes,
        seed=seed,
        H=H,
        T=T,
        stage_profile=k_profile,
        noise=noise,
    )


def save_trajectories(episodes: list[list[FeatureVector]], path: str | Path) -> None:
    """Write per-step episode features; record ids are '<photo_id>#<step>'."""
    flat = [feat for trajectory in episodes for feat in trajectory]
    save_features(flat, path)


def load_trajectories(path: str | Path) -> list[tuple[str, list[FeatureVector]]]:
    """Group a feature file of '<photo_id>#<step>' records back into episodes.

    Steps of one episode must be contiguous and complete (0..T-1); every
    episode must have the same length.
    """
    by_photo: dict[str, list[tuple[int, FeatureVector]]] = {}
    order: list[str] = []
    for feat in load_features(path):
        if "#" not in feat.id:
            raise FeatureFormatError(f"trajectory record {feat.id!r} lacks a '#<step>' suffix")
        photo_id, _, step_text = feat.id.rpartition("#")
        try:
            step = int(step_text)
        except ValueError as exc:
            raise FeatureFormatError(f"trajectory record {feat.id!r} has a non-integer step") from exc
        if photo_id not in by_photo:
            by_photo[photo_id] = []
            order.append(photo_id)
        by_photo[photo_id].append((step, feat))
    episodes = []
    length = None
    for photo_id in order:
        steps = sorted(by_photo[photo_id], key=lambda pair: pair[0])
        got = [s for s, _ in steps]
        if got != list(range(len(got))):
            raise FeatureFormatError(f"episode {photo_id!r} has steps {got}, expected 0..{len(got) - 1}")
        if length is None:
            length = len(got)
        elif len(got) != length:
            raise FeatureFormatError(
                f"episode {photo_id!r} has {len(got)} steps, but earlier episodes have {length}"
            )
        episodes.append((photo_id, [feat for _, feat in steps]))
    return episodes
