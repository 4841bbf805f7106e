"""On-the-fly sketch-to-photo retrieval over frozen features.

Stroke episodes are rendered into incremental partial sketches; a base linear
map plus per-stage linear maps embed sketches and photos into a shared
low-dimensional space trained with triplet and association losses; the
retrieval engine ranks a photo gallery at every stroke and reports
early-retrieval metrics.
"""

from .features import (
    FeatureVector,
    GridExtractor,
    SyntheticDataset,
    extract_grid_features,
    gen_synthetic,
    load_features,
    load_trajectories,
    save_features,
    save_trajectories,
)
from .losses import association_loss, triplet_loss
from .model import (
    StageEmbedder,
    assign_stage,
    embed_photo,
    embed_sketch,
    init_base,
    load_checkpoint,
    save_checkpoint,
)
from .optim import AdamState, adam_step
from .retrieval import (
    EvalReport,
    Gallery,
    RankResult,
    aggregate_metrics,
    build_gallery,
    eval_episode,
    rank_query,
)
from .strokes import (
    PartialSketch,
    Raster,
    StrokeEpisode,
    load_episodes,
    parse_episode,
    permute_strokes,
    rasterize,
    render_partials,
    save_episodes,
    segments_of,
    write_pgm,
)
from .training import TrainConfig, TripletSample, batch_gradient, train_base, train_stages

__version__ = "0.1.0"
