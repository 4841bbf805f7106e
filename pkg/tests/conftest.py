"""Shared fixtures; the session-scoped synthetic training run feeds both the
training descent test and the acceptance suite so it only runs once."""

import time
from dataclasses import dataclass, field

import pytest

from sketchsearch.features import FeatureVector, SyntheticDataset, gen_synthetic
from sketchsearch.model import StageEmbedder, init_base
from sketchsearch.retrieval import EvalReport, aggregate_metrics, build_gallery, eval_episode
from sketchsearch.training import TrainConfig, train_base, train_stages


def evaluate_model(model, photo_features, trajectories) -> EvalReport:
    gallery = build_gallery(photo_features, model)
    results = [eval_episode(traj, model, gallery, pid) for pid, traj in trajectories]
    return aggregate_metrics(results)


@dataclass
class SyntheticRun:
    data: SyntheticDataset
    trajectories: list
    base: StageEmbedder
    base_map_before_stages: object
    untrained: StageEmbedder
    model_k4: StageEmbedder
    model_k1: StageEmbedder
    k4_losses: list = field(default_factory=list)
    report_trained: EvalReport = None
    report_untrained: EvalReport = None
    report_k1: EvalReport = None
    seconds_core: float = 0.0  # generation + training + both m@A evals


@pytest.fixture(scope="session")
def synthetic_run() -> SyntheticRun:
    t0 = time.perf_counter()
    data = gen_synthetic(200, 32, 20, 4, noise=0.1, seed=7)
    photos = data.photo_features
    trajectories = [(photos[i].id, data.episodes[i]) for i in range(len(photos))]
    complete = [
        FeatureVector(id=f"sk-{p.id}", v=data.episodes[i][-1].v) for i, p in enumerate(photos)
    ]
    pairing = {f"sk-{p.id}": p.id for p in photos}

    base_cfg = TrainConfig(epochs=50, lr_initial=1e-4, lr_after=1e-4, seed=7)
    base = train_base(complete, photos, pairing, base_cfg, D=8, T=20)
    base_map_before = base.base_map.copy()

    stage_cfg = TrainConfig(epochs=200, seed=7)
    k4_losses = []
    model_k4 = train_stages(
        trajectories, photos, base, k=4, config=stage_cfg,
        on_epoch=lambda _e, loss: k4_losses.append(loss),
    )
    untrained = init_base(H=32, D=8, T=20, seed=7)
    report_trained = evaluate_model(model_k4, photos, trajectories)
    report_untrained = evaluate_model(untrained, photos, trajectories)
    seconds_core = time.perf_counter() - t0

    model_k1 = train_stages(trajectories, photos, base, k=1, config=stage_cfg)
    report_k1 = evaluate_model(model_k1, photos, trajectories)

    return SyntheticRun(
        data=data,
        trajectories=trajectories,
        base=base,
        base_map_before_stages=base_map_before,
        untrained=untrained,
        model_k4=model_k4,
        model_k1=model_k1,
        k4_losses=k4_losses,
        report_trained=report_trained,
        report_untrained=report_untrained,
        report_k1=report_k1,
        seconds_core=seconds_core,
    )
