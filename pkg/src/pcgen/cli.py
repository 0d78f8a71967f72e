"""``pcgen`` command line tool.

Exit codes: 0 success, 2 configuration error, 3 numeric failure, 4 I/O error.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, config, latent, metrics, svg
from .distances import DistanceError
from .networks import ConfigError
from .parallel import set_threads
from .pointcloud import Dataset, PointCloud, PointCloudError, load_dataset, load_ply, normalize, \
    normalize_dataset, save_ply
from .priors import PriorError
from .rng import make_rng
from .training import TSV_HEADER, TrainingError, build_bundle, fit, select_best

log = logging.getLogger("pcgen")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
BASELINES = ("identity", "memorize", "noise", "repeat")


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _run_config(args) -> config.RunConfig:
    cfg = config.load(args.config)
    if getattr(args, "seed", None) is not None and args.command == "train":
        cfg.train = dataclasses.replace(cfg.train, seed=args.seed)
    if getattr(args, "out", None) and args.command == "train":
        cfg.out = Path(args.out).resolve()
    set_threads(cfg.threads)
    return cfg


def _clouds_for(args, split_name: str = "test") -> tuple[Dataset, Dataset | None]:
    """(comparison / input set, training set or None) from --data or --config."""
    if args.data:
        return normalize_dataset(load_dataset(args.data)), None
    if args.config:
        ds = _run_config(args).dataset()
        chosen = ds if split_name == "all" else ds.subset(split_name)
        return Dataset(chosen.clouds), ds.subset("train")
    raise ConfigError("give --data DIR or --config FILE")


def _write_tsv_rows(path: Path, rows, header: bool):
    with path.open("a" if not header else "w") as f:
        if header:
            f.write(TSV_HEADER + "\n")
        for r in rows:
            f.write(r.tsv() + "\n")


def _read_tsv(path: Path):
    lines = path.read_text().splitlines()[1:]
    cols = list(zip(*(map(float, line.split("\t")) for line in lines))) if lines else [[]] * 5
    return cols


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = _run_config(args)
    ds = cfg.dataset()
    train, val = ds.subset("train").array(), ds.subset("val")
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    bundle = checkpoint.load(args.checkpoint) if args.checkpoint else build_bundle(cfg.train)
    tsv = out / "losses.tsv"
    fresh = not args.checkpoint or not tsv.exists()
    _write_tsv_rows(tsv, [], header=fresh)
    saved: list[Path] = []

    def on_epoch(b):
        if b.epoch % cfg.checkpoint_every == 0 or b.epoch == cfg.train.epochs:
            path = out / f"epoch_{b.epoch:04d}.ckpt"
            checkpoint.save(b, path)
            saved.append(path)
            log.info("epoch %d: saved %s", b.epoch, path.name)

    pending = []

    def logged_fit():
        # stream loss rows to disk epoch by epoch
        steps_left = args.steps
        while True:
            if steps_left is not None and steps_left <= 0:
                break
            if steps_left is None and bundle.epoch >= cfg.train.epochs:
                break
            rows = fit(bundle, train, steps=1, on_epoch=on_epoch, threads=cfg.threads)
            pending.extend(rows)
            if steps_left is not None:
                steps_left -= 1
            if bundle.batch == 0 or len(pending) >= 100:
                _write_tsv_rows(tsv, pending, header=False)
                pending.clear()

    try:
        logged_fit()
    finally:
        _write_tsv_rows(tsv, pending, header=False)
    checkpoint.save(bundle, out / "final.ckpt")
    candidates = saved if saved and saved[-1].name == f"epoch_{bundle.epoch:04d}.ckpt" else saved + [out / "final.ckpt"]
    if len(val) == 0:
        log.warning("validation split is empty; best.ckpt is the final model")
        best = bundle
    else:
        best, scores = select_best([checkpoint.load(p) for p in candidates], val, seed=cfg.eval_seed)
        for p, s in zip(candidates, scores):
            log.info("%s: validation JSD %.6f", p.name, s)
    checkpoint.save(best, out / "best.ckpt")
    cols = _read_tsv(tsv)
    (out / "losses.svg").write_text(svg.loss_curves(cols[0], {"recon": cols[1], "adv": cols[2], "gp": cols[3]}))
    print(f"trained {bundle.step} steps ({bundle.epoch} epochs); best: epoch {best.epoch} -> {out / 'best.ckpt'}")
    return EXIT_OK


def cmd_generate(args) -> int:
    if args.count is None or args.count < 0:
        raise ConfigError("--count must be >= 0")
    bundle = checkpoint.load(args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    clouds = bundle.sample(args.count, make_rng(args.seed or 0))
    if not np.all(np.isfinite(clouds)):
        raise FloatingPointError("generator produced non-finite points")
    for i, c in enumerate(clouds):
        save_ply(PointCloud(c), out / f"sample_{i:04d}.ply")
    if args.count:
        (out / "samples.svg").write_text(svg.contact_sheet(clouds))
    print(f"wrote {args.count} clouds to {out}")
    return EXIT_OK


def _generator_for(args, comparison: Dataset, train: Dataset | None):
    if args.baseline == "identity":
        return metrics.FixedSetGenerator(comparison)
    if args.baseline == "memorize":
        return metrics.MemorizationBaseline(train if train is not None and len(train) else comparison)
    if args.baseline == "noise":
        return metrics.UniformNoiseGenerator(len(comparison.clouds[0]))
    if args.baseline == "repeat":
        return metrics.RepeatingGenerator(comparison.clouds[0])
    if not args.checkpoint:
        raise ConfigError("give --checkpoint or --baseline")
    return checkpoint.load(args.checkpoint)


def cmd_eval(args) -> int:
    comparison, train = _clouds_for(args, args.split)
    if len(comparison) == 0:
        raise ConfigError(f"the {args.split} split is empty")
    gen = _generator_for(args, comparison, train)
    report = metrics.evaluate_generator(gen, comparison, multiplier=args.multiplier, repeats=args.repeats,
                                        rng=make_rng(args.seed or 0))
    text = report.to_text()
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def _encode_clouds(bundle, clouds):
    mu, _, y = bundle.encode(np.stack([c.points for c in clouds]))
    return mu, y


def cmd_interp(args) -> int:
    if args.steps is None or args.steps < 2:
        raise ConfigError("--steps must be >= 2")
    bundle = checkpoint.load(args.checkpoint)
    a, b = normalize(load_ply(args.ply_a)), normalize(load_ply(args.ply_b))
    mu, y = _encode_clouds(bundle, [a, b])
    zs = latent.interpolate(mu[0], mu[1], args.steps)
    ys = latent.interpolate(y[0], y[1], args.steps) if y is not None else [None] * args.steps
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    clouds = [bundle.decode(z[None], None if yy is None else yy[None])[0] for z, yy in zip(zs, ys)]
    for k, c in enumerate(clouds):
        save_ply(PointCloud(c), out / f"interp_{k:03d}.ply")
    (out / "interp.svg").write_text(svg.contact_sheet(clouds, columns=len(clouds)))
    print(f"wrote {len(clouds)} interpolants to {out}")
    return EXIT_OK


def cmd_embed(args) -> int:
    bundle = checkpoint.load(args.checkpoint)
    clouds, _ = _clouds_for(args, "all")
    mu, _ = _encode_clouds(bundle, clouds.clouds) if len(clouds) else (np.zeros((0, 1)), None)
    binary = [latent.binarize(z) for z in mu] if bundle.config.prior == "beta" and bundle.config.adversarial else None
    text = latent.format_codes(mu, binary) if len(clouds) else ""
    Path(args.out).write_text(text)
    print(f"wrote {len(clouds)} codes to {args.out}")
    return EXIT_OK


def cmd_cluster(args) -> int:
    bundle = checkpoint.load(args.checkpoint)
    if bundle.config.mode != "aae_c":
        raise ConfigError("clustering needs a checkpoint trained with mode = aae_c")
    clouds, _ = _clouds_for(args, "all")
    _, y = _encode_clouds(bundle, clouds.clouds)
    ids = latent.cluster_assign(y)
    labels = clouds.labels
    lines = [f"{i}\t{c}\t{'' if lab is None else lab}" for i, (c, lab) in enumerate(zip(ids, labels))]
    Path(args.out).write_text("\n".join(lines) + "\n")
    if all(lab is not None for lab in labels):
        print(f"purity={float(latent.purity(ids, labels))!r}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pcgen", description="Point cloud autoencoders and generative models.")
    p.add_argument("-v", "--verbose", action="store_true", help="progress messages on stderr")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a run config")
    t.add_argument("--config", required=True)
    t.add_argument("--checkpoint", help="resume from this checkpoint")
    t.add_argument("--out", help="override the config's output directory")
    t.add_argument("--seed", type=int)
    t.add_argument("--steps", type=int, help="train this many steps instead of the configured epochs")
    t.set_defaults(fn=cmd_train)

    g = sub.add_parser("generate", help="sample clouds from a checkpoint")
    g.add_argument("--checkpoint", required=True)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(fn=cmd_generate)

    e = sub.add_parser("eval", help="JSD / MMD / COV of a checkpoint or baseline")
    e.add_argument("--checkpoint")
    e.add_argument("--baseline", choices=BASELINES)
    e.add_argument("--config")
    e.add_argument("--data")
    e.add_argument("--split", default="test", choices=("train", "val", "test", "all"))
    e.add_argument("--out")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--multiplier", type=int, default=3)
    e.add_argument("--repeats", type=int, default=3)
    e.set_defaults(fn=cmd_eval)

    i = sub.add_parser("interp", help="decode a latent interpolation between two clouds")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("ply_a")
    i.add_argument("ply_b")
    i.add_argument("--steps", type=int, default=8)
    i.add_argument("--out", required=True)
    i.set_defaults(fn=cmd_interp)

    for name, fn, hlp in (("embed", cmd_embed, "write latent codes as text"),
                          ("cluster", cmd_cluster, "assign clouds to categorical clusters")):
        s = sub.add_parser(name, help=hlp)
        s.add_argument("--checkpoint", required=True)
        s.add_argument("--config")
        s.add_argument("--data")
        s.add_argument("--out", required=True)
        s.set_defaults(fn=fn)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="pcgen: %(message)s", stream=sys.stderr)
    try:
        return args.fn(args)
    except checkpoint.CheckpointError as e:
        print(f"pcgen: checkpoint error: {e}", file=sys.stderr)
        return EXIT_IO
    except (PointCloudError, OSError) as e:
        print(f"pcgen: I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except (TrainingError, FloatingPointError) as e:
        print(f"pcgen: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, PriorError, DistanceError, metrics.MetricError, latent.LatentError) as e:
        print(f"pcgen: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
