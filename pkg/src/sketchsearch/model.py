"""The trainable model: a base linear map plus one linear map per stage.

Photos always embed through the base map, which is frozen once base training
finishes. Partial sketches embed through the map of the stage their rendering
step falls into. Checkpoints are versioned JSON documents with row-major
matrices in decimal text, so save/load round-trips every entry exactly.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .features import FeatureVector, GridExtractor
from .fileio import write_atomic

CHECKPOINT_FORMAT = "mgal-ckpt-1"


class CheckpointError(ValueError):
    """Unreadable, mis-versioned, or internally inconsistent checkpoint."""


def assign_stage(t: int, total_steps: int, k: int) -> int:
    """Stage index of rendering step ``t`` when T steps are split into k even parts.

    Returns min(k-1, floor(t*k / T)); each stage covers floor(T/k) or
    ceil(T/k) consecutive steps.
    """
    if not 0 <= t < total_steps:
        raise ValueError(f"step {t} outside [0, {total_steps})")
    if not 1 <= k <= total_steps:
        raise ValueError(f"stage count {k} outside [1, {total_steps}]")
    return min(k - 1, t * k // total_steps)


@dataclass
class StageEmbedder:
    """Base map (photo branch) plus k per-stage sketch maps, all D x H."""

    H: int
    D: int
    k: int
    T: int
    base_map: np.ndarray = field(repr=False)
    stage_maps: list[np.ndarray] = field(repr=False)
    extractor: GridExtractor | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if not 1 <= self.k <= self.T:
            raise ValueError(f"stage count {self.k} outside [1, {self.T}]")
        if self.base_map.shape != (self.D, self.H):
            raise ValueError(f"base_map shape {self.base_map.shape} != ({self.D}, {self.H})")
        if len(self.stage_maps) != self.k:
            raise ValueError(f"expected {self.k} stage maps, got {len(self.stage_maps)}")
        for i, m in enumerate(self.stage_maps):
            if m.shape != (self.D, self.H):
                raise ValueError(f"stage map {i} shape {m.shape} != ({self.D}, {self.H})")
        for name, m in [("base_map", self.base_map)] + [
            (f"stage map {i}", m) for i, m in enumerate(self.stage_maps)
        ]:
            if not np.isfinite(m).all():
                raise ValueError(f"{name} has non-finite entries")

    def copy(self) -> "StageEmbedder":
        return replace(self, base_map=self.base_map.copy(), stage_maps=[m.copy() for m in self.stage_maps])


def init_base(H: int, D: int, T: int, seed: int, extractor: GridExtractor | None = None) -> StageEmbedder:
    """Seeded random single-stage model; scale 1/sqrt(H) keeps outputs O(1)."""
    rng = np.random.default_rng(seed)
    base = rng.standard_normal((D, H)) / np.sqrt(H)
    return StageEmbedder(H=H, D=D, k=1, T=T, base_map=base, stage_maps=[base.copy()], extractor=extractor, seed=seed)


def _check_dim(v: np.ndarray, H: int) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (H,):
        raise ValueError(f"feature has shape {v.shape}, model expects ({H},)")
    return v


def embed_sketch(feature: FeatureVector, t: int, model: StageEmbedder) -> np.ndarray:
    """Map a partial-sketch feature at step ``t`` through its stage map. No normalization."""
    v = _check_dim(feature.v, model.H)
    return model.stage_maps[assign_stage(t, model.T, model.k)] @ v


def embed_photo(feature: FeatureVector, model: StageEmbedder) -> np.ndarray:
    """Map a photo feature through the frozen base map."""
    v = _check_dim(feature.v, model.H)
    return model.base_map @ v


def save_checkpoint(model: StageEmbedder, path: str | Path, stroke_budget: int | None = None) -> None:
    """Write a versioned checkpoint; matrices row-major in decimal text."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "H": model.H,
        "D": model.D,
        "k": model.k,
        "T": model.T,
        "base_map": [[float(x) for x in row] for row in model.base_map],
        "stage_maps": [[[float(x) for x in row] for row in m] for m in model.stage_maps],
        "feature_extractor": model.extractor.to_json() if model.extractor else {"type": "precomputed"},
        "seed": model.seed,
    }
    if stroke_budget is not None:
        doc["stroke_budget"] = int(stroke_budget)
    write_atomic(path, json.dumps(doc))


def load_checkpoint(path: str | Path) -> tuple[StageEmbedder, int | None]:
    """Read a checkpoint back; returns the model and its recorded stroke budget."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(
            f"{path}: expected format {CHECKPOINT_FORMAT!r}, got {doc.get('format')!r}"
            if isinstance(doc, dict)
            else f"{path}: checkpoint must be a JSON object"
        )
    try:
        H, D, k, T = (int(doc[key]) for key in ("H", "D", "k", "T"))
        base = np.array(doc["base_map"], dtype=float)
        stage_maps = [np.array(m, dtype=float) for m in doc["stage_maps"]]
        ext_doc = doc["feature_extractor"]
        seed = int(doc.get("seed", 0))
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: missing or malformed field: {exc}") from exc
    extractor = GridExtractor.from_json(ext_doc) if ext_doc.get("type") == "grid" else None
    try:
        model = StageEmbedder(
            H=H, D=D, k=k, T=T, base_map=base, stage_maps=stage_maps, extractor=extractor, seed=seed
        )
    except ValueError as exc:
        raise CheckpointError(f"{path}: inconsistent checkpoint: {exc}") from exc
    budget = doc.get("stroke_budget")
    return model, (int(budget) if budget is not None else None)


def checkpoint_fingerprint(path: str | Path) -> str:
    """Content hash of the checkpoint file, for /health reporting."""
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]
