"""Training loops: base map on complete sketches, then per-stage sketch maps.

Both loops are plain mini-batch Adam over analytic gradients and are a pure
function of (data, config, seed): seeded shuffling, seeded negative/target
sampling, index-ordered reductions, single thread. Running twice with the
same inputs yields bit-identical maps.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .features import FeatureVector, GridExtractor
from .model import StageEmbedder, assign_stage, init_base
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)

EpochCallback = Callable[[int, float], None]


@dataclass(frozen=True)
class TrainConfig:
    margin: float = 0.3
    loss_ratio: float = 1.0  # association weight relative to the triplet term
    epochs: int = 500
    batch_size: int = 16
    lr_initial: float = 0.001
    lr_after: float = 0.0001
    lr_drop_epoch: int = 100
    weight_decay: float = 0.0001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self) -> None:
        if self.margin < 0:
            raise ValueError(f"margin must be >= 0, got {self.margin}")
        if self.loss_ratio < 0:
            raise ValueError(f"loss_ratio must be >= 0, got {self.loss_ratio}")
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")
        for name in ("lr_initial", "lr_after", "beta1", "beta2", "eps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")

    def lr_at(self, epoch: int) -> float:
        return self.lr_initial if epoch < self.lr_drop_epoch else self.lr_after


@dataclass(frozen=True)
class TripletSample:
    """One stage-training sample: an anchor partial plus constant D-targets."""

    anchor: FeatureVector  # H-dim partial-sketch feature
    step: int
    positive: np.ndarray = field(repr=False)  # target photo embedding
    negative: np.ndarray = field(repr=False)  # non-target photo embedding
    assoc_target: np.ndarray = field(repr=False)  # a next-stage embedding (or the photo's)


def batch_gradient(
    batch: list[TripletSample], model: StageEmbedder, config: TrainConfig
) -> tuple[float, list[np.ndarray]]:
    """Mean batch loss and its exact gradient per stage map.

    Loss is mean over the batch of [triplet + loss_ratio * association], plus
    weight_decay/2 times the squared Frobenius norm of every stage map that
    receives an anchor in this batch; stages absent from the batch contribute
    nothing and get an exactly-zero gradient. Positive, negative and
    association targets are constants: gradients flow only through the
    anchors' stage maps.
    """
    if not batch:
        raise ValueError("batch must be nonempty")
    anchors = np.stack([s.anchor.v for s in batch])
    steps = np.array([s.step for s in batch], dtype=int)
    positives = np.stack([np.asarray(s.positive, dtype=float) for s in batch])
    negatives = np.stack([np.asarray(s.negative, dtype=float) for s in batch])
    assoc = np.stack([np.asarray(s.assoc_target, dtype=float) for s in batch])
    return _array_batch_gradient(anchors, steps, positives, negatives, assoc, model, config)


def _array_batch_gradient(
    anchors: np.ndarray,
    steps: np.ndarray,
    positives: np.ndarray,
    negatives: np.ndarray,
    assoc: np.ndarray,
    model: StageEmbedder,
    config: TrainConfig,
) -> tuple[float, list[np.ndarray]]:
    """Array core shared by batch_gradient and the training loop."""
    B, H = anchors.shape
    if H != model.H:
        raise ValueError(f"anchor dimension {H} != model H {model.H}")
    stages = np.array([assign_stage(int(t), model.T, model.k) for t in steps])
    embedded = np.empty((B, model.D), dtype=float)
    present = []
    for j in range(model.k):
        mask = stages == j
        if mask.any():
            present.append(j)
            embedded[mask] = anchors[mask] @ model.stage_maps[j].T

    to_pos = embedded - positives
    to_neg = embedded - negatives
    d_ap = np.sqrt(np.sum(to_pos * to_pos, axis=1))
    d_an = np.sqrt(np.sum(to_neg * to_neg, axis=1))
    raw = d_ap - d_an + config.margin
    active = raw > 0.0
    # Unit vectors with the zero-distance subgradient convention.
    with np.errstate(invalid="ignore", divide="ignore"):
        u_ap = np.where(d_ap[:, None] > 0.0, to_pos / d_ap[:, None], 0.0)
        u_an = np.where(d_an[:, None] > 0.0, to_neg / d_an[:, None], 0.0)
    to_assoc = embedded - assoc
    losses = np.where(active, raw, 0.0) + config.loss_ratio * np.mean(to_assoc * to_assoc, axis=1)
    grad_emb = np.where(active[:, None], u_ap - u_an, 0.0)
    grad_emb += (2.0 * config.loss_ratio / model.D) * to_assoc

    loss = float(np.mean(losses))
    grads = [np.zeros_like(m) for m in model.stage_maps]
    for j in present:
        mask = stages == j
        grads[j] = grad_emb[mask].T @ anchors[mask] / B
        if config.weight_decay > 0.0:
            loss += 0.5 * config.weight_decay * float(np.sum(model.stage_maps[j] ** 2))
            grads[j] += config.weight_decay * model.stage_maps[j]
    if not np.isfinite(loss):
        raise ValueError("non-finite batch loss")
    return loss, grads


def _pick_negatives(
    batch_pids: list[str],
    all_pids: list[str],
    rng: np.random.Generator,
) -> list[int | str]:
    """Index into the batch of a uniformly chosen different photo per sample.

    When a batch holds only one photo, falls back to a uniform draw over the
    rest of the dataset (returned as a photo id instead of a batch index).
    """
    out: list[int | str] = []
    for i, pid in enumerate(batch_pids):
        candidates = [j for j, other in enumerate(batch_pids) if other != pid]
        if candidates:
            out.append(candidates[int(rng.integers(len(candidates)))])
        else:
            others = [p for p in all_pids if p != pid]
            out.append(others[int(rng.integers(len(others)))])
    return out


def train_base(
    complete_sketch_features: list[FeatureVector],
    photo_features: list[FeatureVector],
    pairing: dict[str, str],
    config: TrainConfig,
    D: int = 64,
    T: int = 20,
    extractor: GridExtractor | None = None,
    on_epoch: EpochCallback | None = None,
) -> StageEmbedder:
    """Train the shared base map with a triplet loss on complete sketches.

    One map embeds both branches: anchor sketch, its paired photo, and an
    in-batch negative photo, so the gradient flows through all three.
    epochs=0 returns the seeded random initialization unchanged.
    """
    photo_by_id = {f.id: f for f in photo_features}
    if len(photo_by_id) != len(photo_features):
        raise ValueError("duplicate photo ids")
    if len(photo_by_id) < 2:
        raise ValueError(f"need at least 2 photos, got {len(photo_by_id)}")
    for sketch in complete_sketch_features:
        if sketch.id not in pairing:
            raise ValueError(f"sketch {sketch.id!r} has no pairing entry")
        if pairing[sketch.id] not in photo_by_id:
            raise ValueError(f"sketch {sketch.id!r} pairs to unknown photo {pairing[sketch.id]!r}")
    H = complete_sketch_features[0].dim
    for feat in complete_sketch_features + photo_features:
        if feat.dim != H:
            raise ValueError(f"feature {feat.id!r} has dimension {feat.dim}, expected {H}")

    model = init_base(H=H, D=D, T=T, seed=config.seed, extractor=extractor)
    A = model.base_map
    rng = np.random.default_rng(config.seed)
    state = AdamState.zeros_like([A])
    all_pids = [f.id for f in photo_features]

    sketches = np.stack([f.v for f in complete_sketch_features])
    paired = np.stack([photo_by_id[pairing[f.id]].v for f in complete_sketch_features])
    paired_ids = [pairing[f.id] for f in complete_sketch_features]
    photo_vecs = {f.id: f.v for f in photo_features}

    n = len(complete_sketch_features)
    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        perm = rng.permutation(n)
        epoch_loss, epoch_count = 0.0, 0
        for lo in range(0, n, config.batch_size):
            idx = perm[lo : lo + config.batch_size]
            pids = [paired_ids[i] for i in idx]
            neg_pick = _pick_negatives(pids, all_pids, rng)
            neg = np.stack(
                [paired[idx[j]] if isinstance(j, int) else photo_vecs[j] for j in neg_pick]
            )
            loss, grad = _shared_map_gradient(sketches[idx], paired[idx], neg, A, config)
            adam_step([A], [grad], state, lr, config.beta1, config.beta2, config.eps)
            epoch_loss += loss * len(idx)
            epoch_count += len(idx)
        mean_loss = epoch_loss / epoch_count
        if on_epoch is not None:
            on_epoch(epoch, mean_loss)
        log.debug("base epoch %d: lr %g mean loss %.6f", epoch, lr, mean_loss)

    model.stage_maps = [A.copy()]
    return model


def _shared_map_gradient(
    sketches: np.ndarray,
    positives: np.ndarray,
    negatives: np.ndarray,
    A: np.ndarray,
    config: TrainConfig,
) -> tuple[float, np.ndarray]:
    """Triplet loss where anchor, positive and negative all embed through A."""
    B = len(sketches)
    a = sketches @ A.T
    pe = positives @ A.T
    ne = negatives @ A.T
    to_pos = a - pe
    to_neg = a - ne
    d_ap = np.sqrt(np.sum(to_pos * to_pos, axis=1))
    d_an = np.sqrt(np.sum(to_neg * to_neg, axis=1))
    raw = d_ap - d_an + config.margin
    active = raw > 0.0
    with np.errstate(invalid="ignore", divide="ignore"):
        u_ap = np.where((active & (d_ap > 0.0))[:, None], to_pos / d_ap[:, None], 0.0)
        u_an = np.where((active & (d_an > 0.0))[:, None], to_neg / d_an[:, None], 0.0)
    loss = float(np.mean(np.where(active, raw, 0.0)))
    grad = (u_ap.T @ (sketches - positives) - u_an.T @ (sketches - negatives)) / B
    if config.weight_decay > 0.0:
        loss += 0.5 * config.weight_decay * float(np.sum(A * A))
        grad += config.weight_decay * A
    if not np.isfinite(loss):
        raise ValueError("non-finite batch loss")
    return loss, grad


def stage_steps(total_steps: int, k: int) -> list[list[int]]:
    """Rendering steps belonging to each of the k stages."""
    out: list[list[int]] = [[] for _ in range(k)]
    for t in range(total_steps):
        out[assign_stage(t, total_steps, k)].append(t)
    return out


def train_stages(
    trajectories: list[tuple[str, list[FeatureVector]]],
    photo_features: list[FeatureVector],
    base: StageEmbedder,
    k: int,
    config: TrainConfig,
    on_epoch: EpochCallback | None = None,
) -> StageEmbedder:
    """Train k per-stage sketch maps against the frozen photo branch.

    Stage maps start as copies of the trained base map. Each anchor partial
    (stage i) trains against its photo as positive, a random different
    in-batch photo as negative, and a random stage-i+1 partial of its own
    episode as association target, re-embedded through the current next-stage
    map each batch but treated as constant; the last stage associates to the
    photo embedding itself.
    """
    T = base.T
    if not 1 <= k <= T:
        raise ValueError(f"stage count {k} outside [1, {T}]")
    photo_by_id = {f.id: f for f in photo_features}
    for feat in photo_features:
        if feat.dim != base.H:
            raise ValueError(f"photo {feat.id!r} has dimension {feat.dim}, model expects {base.H}")
    for photo_id, trajectory in trajectories:
        if photo_id not in photo_by_id:
            raise ValueError(f"episode {photo_id!r} has no matching photo feature")
        if len(trajectory) != T:
            raise ValueError(f"episode {photo_id!r} has {len(trajectory)} steps, model expects {T}")
        if trajectory[0].dim != base.H:
            raise ValueError(
                f"episode {photo_id!r} features have dimension {trajectory[0].dim}, "
                f"model expects {base.H}"
            )

    model = StageEmbedder(
        H=base.H,
        D=base.D,
        k=k,
        T=T,
        base_map=base.base_map.copy(),
        stage_maps=[base.base_map.copy() for _ in range(k)],
        extractor=base.extractor,
        seed=config.seed,
    )
    # Photo branch is frozen: embed every photo once.
    photo_emb = {pid: model.base_map @ f.v for pid, f in photo_by_id.items()}
    all_pids = [f.id for f in photo_features]

    episode_feats = [np.stack([f.v for f in trajectory]) for _, trajectory in trajectories]
    episode_pid = [photo_id for photo_id, _ in trajectories]
    anchors = [(e, t) for e in range(len(trajectories)) for t in range(T)]
    steps_of = stage_steps(T, k)
    stage_of = [assign_stage(t, T, k) for t in range(T)]

    rng = np.random.default_rng(config.seed)
    state = AdamState.zeros_like(model.stage_maps)
    n = len(anchors)
    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        perm = rng.permutation(n)
        epoch_loss, epoch_count = 0.0, 0
        for lo in range(0, n, config.batch_size):
            idx = perm[lo : lo + config.batch_size]
            B = len(idx)
            U = np.empty((B, model.H))
            steps = np.empty(B, dtype=int)
            P = np.empty((B, model.D))
            Q = np.empty((B, model.D))
            pids = []
            next_feat = np.zeros((B, model.H))
            next_stage = np.full(B, -1, dtype=int)
            for row, a_idx in enumerate(idx):
                e, t = anchors[a_idx]
                U[row] = episode_feats[e][t]
                steps[row] = t
                pids.append(episode_pid[e])
                P[row] = photo_emb[episode_pid[e]]
                stage = stage_of[t]
                if stage == k - 1:
                    Q[row] = P[row]
                else:
                    choices = steps_of[stage + 1]
                    t_next = choices[int(rng.integers(len(choices)))]
                    next_feat[row] = episode_feats[e][t_next]
                    next_stage[row] = stage + 1
            # Association targets through the current next-stage maps (constants).
            for j in range(1, k):
                mask = next_stage == j
                if mask.any():
                    Q[mask] = next_feat[mask] @ model.stage_maps[j].T
            neg_pick = _pick_negatives(pids, all_pids, rng)
            N = np.stack([P[j] if isinstance(j, int) else photo_emb[j] for j in neg_pick])

            loss, grads = _array_batch_gradient(U, steps, P, N, Q, model, config)
            adam_step(model.stage_maps, grads, state, lr, config.beta1, config.beta2, config.eps)
            epoch_loss += loss * B
            epoch_count += B
        mean_loss = epoch_loss / epoch_count
        if on_epoch is not None:
            on_epoch(epoch, mean_loss)
        log.debug("stage epoch %d: lr %g mean loss %.6f", epoch, lr, mean_loss)
    return model
