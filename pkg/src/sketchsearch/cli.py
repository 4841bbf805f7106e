"""Command-line entry point: synth | render | train-base | train | eval | serve.

Option precedence is flags > --config file > built-in defaults. Every run
logs the seed and the fully resolved configuration. All outputs are written
atomically (temp file + rename) and inputs are never mutated.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import statistics
import sys
from pathlib import Path

import numpy as np

from . import report as report_mod
from .features import (
    FeatureVector,
    GridExtractor,
    gen_synthetic,
    load_features,
    load_trajectories,
    save_features,
    save_trajectories,
)
from .fileio import write_atomic
from .model import (
    StageEmbedder,
    checkpoint_fingerprint,
    load_checkpoint,
    save_checkpoint,
)
from .retrieval import aggregate_metrics, build_gallery, eval_episode
from .strokes import load_episodes, rasterize, render_partials, write_pgm
from .training import TrainConfig, train_base, train_stages

log = logging.getLogger("sketchsearch")

DEFAULTS = {
    "D": 64,
    "T": 20,
    "k": 4,
    "margin": 0.3,
    "loss_ratio": 1.0,
    "batch_size": 16,
    "weight_decay": 1e-4,
    "lr_drop_epoch": 100,
    "seed": 0,
    "grid": 16,
    "bins": 8,
    "raster_size": 256,
    "base_epochs": 100,
    # Phase-specific learning-rate defaults are applied per subcommand below.
}

TRAIN_BASE_DEFAULTS = {"epochs": 100, "lr_initial": 1e-4, "lr_after": 1e-4}
TRAIN_DEFAULTS = {"epochs": 500, "lr_initial": 1e-3, "lr_after": 1e-4}


class CliError(ValueError):
    pass


def _setup_logging() -> None:
    level = os.environ.get("MGAL_LOG", "info").upper()
    logging.basicConfig(
        stream=sys.stderr,
        level=getattr(logging, level, logging.INFO),
        format="%(levelname)s %(name)s: %(message)s",
    )


class Options:
    """Resolved options: flag if given, else config-file entry, else default."""

    def __init__(self, args: argparse.Namespace, phase_defaults: dict):
        self._args = vars(args)
        self._file = {}
        config_path = self._args.get("config")
        if config_path:
            try:
                self._file = json.loads(Path(config_path).read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as exc:
                raise CliError(f"cannot read config file {config_path}: {exc}") from exc
            if not isinstance(self._file, dict):
                raise CliError(f"config file {config_path} must hold a JSON object")
        self._defaults = {**DEFAULTS, **phase_defaults}

    def flag(self, name: str):
        """Raw flag value only (no config-file or default fallback)."""
        return self._args.get(name)

    def get(self, name: str):
        flag = self._args.get(name)
        if flag is not None:
            return flag
        if name in self._file:
            return self._file[name]
        if name in self._defaults:
            return self._defaults[name]
        raise KeyError(name)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            margin=float(self.get("margin")),
            loss_ratio=float(self.get("loss_ratio")),
            epochs=int(self.get("epochs")),
            batch_size=int(self.get("batch_size")),
            lr_initial=float(self.get("lr_initial")),
            lr_after=float(self.get("lr_after")),
            lr_drop_epoch=int(self.get("lr_drop_epoch")),
            weight_decay=float(self.get("weight_decay")),
            seed=int(self.get("seed")),
        )

    def extractor(self) -> GridExtractor:
        size = int(self.get("raster_size"))
        return GridExtractor(
            grid=int(self.get("grid")), bins=int(self.get("bins")), width=size, height=size
        )


def _log_resolved(name: str, config: TrainConfig | None, extra: dict) -> None:
    payload = dict(extra)
    if config is not None:
        payload.update(
            seed=config.seed, epochs=config.epochs, batch_size=config.batch_size,
            margin=config.margin, loss_ratio=config.loss_ratio,
            lr_initial=config.lr_initial, lr_after=config.lr_after,
            lr_drop_epoch=config.lr_drop_epoch, weight_decay=config.weight_decay,
        )
    log.info("%s resolved config: %s", name, json.dumps(payload, sort_keys=True))


def _require(path: str | None, what: str) -> Path:
    if not path:
        raise CliError(f"missing required {what}")
    p = Path(path)
    if not p.exists():
        raise CliError(f"{what} {path} does not exist")
    return p


def _load_episode_data(opts, path: Path, T: int, extractor: GridExtractor):
    """Featurize stroke episodes into per-step trajectories."""
    episodes = load_episodes(path)
    trajectories = []
    for i, ep in enumerate(episodes):
        feats = [
            extractor.features_for(partial.strokes, f"{ep.photo_id}#{t}")
            for t, partial in enumerate(render_partials(ep, T))
        ]
        trajectories.append((ep.photo_id, feats))
    budget = int(statistics.median(len(ep.strokes) for ep in episodes))
    return trajectories, max(1, budget)


def _load_data(opts: Options, extractor: GridExtractor | None):
    """Returns (trajectories, photos, T, extractor or None, stroke_budget or None)."""
    photos = load_features(_require(opts.get("photos"), "--photos file"))
    episodes_path = opts.flag("episodes")
    traj_path = opts.flag("trajectories")
    if bool(episodes_path) == bool(traj_path):
        raise CliError("exactly one of --episodes or --trajectories is required")
    if traj_path:
        trajectories = load_trajectories(_require(traj_path, "--trajectories file"))
        T = len(trajectories[0][1])
        return trajectories, photos, T, None, None
    T = int(opts.get("T"))
    extractor = extractor or opts.extractor()
    trajectories, budget = _load_episode_data(opts, _require(episodes_path, "--episodes file"), T, extractor)
    if photos[0].dim != extractor.dim:
        raise CliError(
            f"photo features have dimension {photos[0].dim} but the grid extractor "
            f"produces {extractor.dim}"
        )
    return trajectories, photos, T, extractor, budget


def _complete_sketches(trajectories) -> tuple[list[FeatureVector], dict[str, str]]:
    complete, pairing = [], {}
    for i, (photo_id, feats) in enumerate(trajectories):
        sketch_id = f"sketch-{i:04d}"
        complete.append(FeatureVector(id=sketch_id, v=feats[-1].v))
        pairing[sketch_id] = photo_id
    return complete, pairing


# -- subcommands -------------------------------------------------------------


def cmd_synth(args) -> int:
    opts = Options(args, {})
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    data = gen_synthetic(
        n_photos=args.photos, H=args.H, T=int(opts.get("T")),
        k_profile=args.profile, noise=args.noise, seed=int(opts.get("seed")),
    )
    _log_resolved("synth", None, {
        "photos": args.photos, "H": args.H, "T": data.T,
        "profile": args.profile, "noise": args.noise, "seed": data.seed,
    })
    save_features(data.photo_features, out_dir / "photos.ndjson")
    save_trajectories(data.episodes, out_dir / "trajectories.ndjson")
    meta = {
        "format": "synth-meta-1", "n_photos": args.photos, "H": data.H, "T": data.T,
        "stage_profile": data.stage_profile, "noise": data.noise, "seed": data.seed,
    }
    write_atomic(out_dir / "meta.json", json.dumps(meta) + "\n")
    log.info("wrote %s", out_dir)
    return 0


def cmd_render(args) -> int:
    opts = Options(args, {})
    episodes = load_episodes(_require(args.episodes, "--episodes file"))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    T = int(opts.get("T"))
    size = int(opts.get("raster_size"))
    count = 0
    for i, ep in enumerate(episodes):
        for partial in render_partials(ep, T):
            raster = rasterize(partial.strokes, size, size)
            write_pgm(raster, out_dir / f"ep{i:04d}_step{partial.step:02d}.pgm")
            count += 1
    log.info("rendered %d rasters for %d episodes into %s", count, len(episodes), out_dir)
    return 0


def cmd_train_base(args) -> int:
    opts = Options(args, TRAIN_BASE_DEFAULTS)
    config = opts.train_config()
    trajectories, photos, T, extractor, budget = _load_data(opts, None)
    complete, pairing = _complete_sketches(trajectories)
    D = int(opts.get("D"))
    _log_resolved("train-base", config, {"D": D, "T": T, "sketches": len(complete), "photos": len(photos)})
    model = train_base(complete, photos, pairing, config, D=D, T=T, extractor=extractor)
    save_checkpoint(model, args.out, stroke_budget=budget)
    log.info("wrote checkpoint %s", args.out)
    return 0


def _base_model(opts: Options, args, trajectories, photos, T, extractor):
    """Load --base, or train a fresh base when it is not given."""
    if args.base:
        base, budget = load_checkpoint(_require(args.base, "--base checkpoint"))
        if base.T != T:
            raise CliError(f"base checkpoint has T={base.T} but the data renders T={T}")
        return base, budget
    complete, pairing = _complete_sketches(trajectories)
    config = opts.train_config()
    base_config = TrainConfig(
        margin=config.margin, loss_ratio=config.loss_ratio,
        epochs=int(opts.get("base_epochs")), batch_size=config.batch_size,
        lr_initial=TRAIN_BASE_DEFAULTS["lr_initial"], lr_after=TRAIN_BASE_DEFAULTS["lr_after"],
        lr_drop_epoch=config.lr_drop_epoch, weight_decay=config.weight_decay, seed=config.seed,
    )
    log.info("no --base given; training a fresh base map for %d epochs", base_config.epochs)
    return train_base(complete, photos, pairing, base_config, D=int(opts.get("D")), T=T, extractor=extractor), None


def cmd_train(args) -> int:
    opts = Options(args, TRAIN_DEFAULTS)
    config = opts.train_config()
    preloaded_extractor = None
    if args.base:
        base_peek, _ = load_checkpoint(_require(args.base, "--base checkpoint"))
        preloaded_extractor = base_peek.extractor
    trajectories, photos, T, extractor, budget = _load_data(opts, preloaded_extractor)
    base, base_budget = _base_model(opts, args, trajectories, photos, T, extractor)
    k = int(opts.get("k"))
    _log_resolved("train", config, {"k": k, "T": T, "episodes": len(trajectories), "photos": len(photos)})
    model = train_stages(trajectories, photos, base, k=k, config=config)
    save_checkpoint(model, args.out, stroke_budget=budget or base_budget)
    log.info("wrote checkpoint %s", args.out)
    return 0


def _evaluate(model, trajectories, photos):
    gallery = build_gallery(photos, model)
    results = [eval_episode(feats, model, gallery, photo_id) for photo_id, feats in trajectories]
    return aggregate_metrics(results)


def _report_paths(report_path: Path):
    stem = report_path.stem
    return (
        report_path.with_name(f"{stem}.curves.csv"),
        report_path.parent,
        stem,
    )


def cmd_eval(args) -> int:
    opts = Options(args, TRAIN_DEFAULTS)
    model, _ = load_checkpoint(_require(args.ckpt, "--ckpt checkpoint")) if args.ckpt else (None, None)
    peek_extractor = model.extractor if model else None
    if peek_extractor is None and args.base:
        base_peek, _ = load_checkpoint(_require(args.base, "--base checkpoint"))
        peek_extractor = base_peek.extractor
    trajectories, photos, T, _, _ = _load_data(opts, peek_extractor)
    report_path = Path(args.report)
    if args.stages:
        return _eval_sweep(args, opts, trajectories, photos, T, report_path)
    if model is None:
        raise CliError("--ckpt is required unless --stages is given")
    if model.T != T:
        raise CliError(f"checkpoint has T={model.T} but the data renders T={T}")
    _log_resolved("eval", None, {"ckpt": args.ckpt, "episodes": len(trajectories), "n": len(photos)})
    report = _evaluate(model, trajectories, photos)
    report_mod.write_report(report, report_path)
    csv_path, fig_dir, stem = _report_paths(report_path)
    report_mod.write_curves_csv(report, csv_path)
    figures = report_mod.render_figures(report, fig_dir, stem)
    log.info(
        "m@A=%.4f m@B=%.4f %s; wrote %s, %s and %d figures",
        report.m_a, report.m_b,
        " ".join(f"A@{q}={v:.2f}" for q, v in sorted(report.acc.items())),
        report_path, csv_path, len(figures),
    )
    return 0


def _eval_sweep(args, opts, trajectories, photos, T, report_path: Path) -> int:
    """Train stage maps at several k from one base and evaluate each."""
    if not args.base:
        raise CliError("--stages sweeps need --base (a trained base checkpoint)")
    base, _ = load_checkpoint(_require(args.base, "--base checkpoint"))
    if base.T != T:
        raise CliError(f"base checkpoint has T={base.T} but the data renders T={T}")
    try:
        stage_counts = sorted({int(s) for s in args.stages.split(",") if s.strip()})
    except ValueError as exc:
        raise CliError(f"--stages must be a comma-separated integer list: {exc}") from exc
    if not stage_counts:
        raise CliError("--stages list is empty")
    config = opts.train_config()
    _log_resolved("eval-sweep", config, {"stages": stage_counts, "episodes": len(trajectories)})
    rows = []
    for k in stage_counts:
        model = train_stages(trajectories, photos, base, k=k, config=config)
        rep = _evaluate(model, trajectories, photos)
        rows.append({"k": k, "m_at_a": rep.m_a, "m_at_b": rep.m_b,
                     **{f"acc_at_{q}": v for q, v in sorted(rep.acc.items())}})
        log.info("k=%d: m@A=%.4f m@B=%.4f", k, rep.m_a, rep.m_b)
    doc = {"format": "eval-sweep-1", "T": T, "n": len(photos),
           "episodes": len(trajectories), "per_stage_count": rows}
    write_atomic(report_path, json.dumps(doc, indent=1) + "\n")
    fig = report_mod.render_sweep_figure(
        [r["k"] for r in rows], [r["m_at_a"] for r in rows], [r["m_at_b"] for r in rows],
        report_path.with_name(f"{report_path.stem}_stage_sweep.png"),
    )
    log.info("wrote %s and %s", report_path, fig)
    return 0


def cmd_serve(args) -> int:
    from .service import RetrievalService, build_server  # lazy: not needed elsewhere

    model, ckpt_budget = load_checkpoint(_require(args.ckpt, "--ckpt checkpoint"))
    photos = load_features(_require(args.gallery, "--gallery feature file"))
    gallery = build_gallery(photos, model)
    budget = args.stroke_budget or ckpt_budget or model.T
    service = RetrievalService(
        model, gallery, stroke_budget=budget,
        fingerprint=checkpoint_fingerprint(args.ckpt),
    )
    static_dir = args.static
    if static_dir and not Path(static_dir).is_dir():
        raise CliError(f"--static {static_dir} is not a directory")
    server = build_server(service, args.port, static_dir)
    log.info(
        "serving on port %d: n=%d k=%d T=%d stroke_budget=%d static=%s",
        server.server_address[1], gallery.n, model.k, model.T, budget, static_dir or "(none)",
    )
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        log.info("shutting down")
    finally:
        server.server_close()
    return 0


# -- argument parsing ---------------------------------------------------------


def _add_common_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--margin", type=float)
    p.add_argument("--loss-ratio", dest="loss_ratio", type=float)
    p.add_argument("--lr-initial", dest="lr_initial", type=float)
    p.add_argument("--lr-after", dest="lr_after", type=float)
    p.add_argument("--lr-drop-epoch", dest="lr_drop_epoch", type=int)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--D", type=int, help="embedding dimension")
    p.add_argument("--T", type=int, help="rendering steps per episode")


def _add_data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--episodes", help="stroke episode file (newline-delimited JSON)")
    p.add_argument("--trajectories", help="precomputed per-step feature file")
    p.add_argument("--photos", help="photo feature file")
    p.add_argument("--grid", type=int, help="grid cells per side for the sketch extractor")
    p.add_argument("--bins", type=int, help="orientation bins for the sketch extractor")
    p.add_argument("--raster-size", dest="raster_size", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sketchsearch",
        description="Stroke-by-stroke sketch-to-photo retrieval: train, evaluate, serve.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a seeded synthetic feature dataset")
    p.add_argument("--photos", type=int, required=True, help="number of photos")
    p.add_argument("--H", type=int, required=True, help="feature dimension")
    p.add_argument("--T", type=int)
    p.add_argument("--profile", type=int, required=True, help="stage segments in the distortion profile")
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--seed", type=int)
    p.add_argument("--config", help="JSON config file; flags override it")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("render", help="rasterize episode rendering steps to PGM files")
    p.add_argument("--episodes", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--T", type=int)
    p.add_argument("--raster-size", dest="raster_size", type=int)
    p.add_argument("--config", help="JSON config file; flags override it")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("train-base", help="train the shared base map on complete sketches")
    _add_data_flags(p)
    _add_common_train_flags(p)
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.set_defaults(func=cmd_train_base)

    p = sub.add_parser("train", help="train per-stage sketch maps from a base checkpoint")
    _add_data_flags(p)
    _add_common_train_flags(p)
    p.add_argument("--base", help="trained base checkpoint; trained on the fly when omitted")
    p.add_argument("--base-epochs", dest="base_epochs", type=int)
    p.add_argument("--k", type=int, help="stage count")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint; writes report, curves and figures")
    _add_data_flags(p)
    _add_common_train_flags(p)
    p.add_argument("--ckpt", help="checkpoint to evaluate")
    p.add_argument("--base", help="base checkpoint (for --stages sweeps)")
    p.add_argument("--stages", help="comma-separated stage counts to train and compare")
    p.add_argument("--report", required=True, help="report output path (JSON)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="serve drawing sessions over HTTP")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--gallery", required=True, help="photo feature file")
    p.add_argument("--static", help="directory of built frontend assets to serve under /")
    p.add_argument("--stroke-budget", dest="stroke_budget", type=int)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError) as exc:
        message = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
