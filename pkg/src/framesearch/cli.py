"""``framesearch`` command-line entry point.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import config as cfgmod
from .dataio import SynthConfig, generate_synthetic, load_corpus, read_image, sample_pairs, save_corpus
from .errors import DataError
from .evaluation import EvalConfig, evaluate
from .index import CompressionStats, build_index, load_index, save_index
from .models import (AEConfig, SiameseConfig, TrainConfig, VAEConfig, ae_train, load_model, save_model,
                     siamese_train, vae_train)
from .pipeline import ROLES, role_config
from .report import compression_report, render_gallery
from .retrieval import QueryRequest, retrieve

log = logging.getLogger("framesearch")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

# Trainers default to far fewer epochs from the CLI than the library default.
CLI_TRAIN = TrainConfig(epochs=20)


class UsageError(Exception):
    pass


class Settings:
    """Dataclass configs resolved from defaults, the config file and ``--seed``."""

    def __init__(self, values, seed):
        self.data = cfgmod.apply(SynthConfig(), values, "data")
        self.ae = cfgmod.apply(AEConfig(), values, "ae")
        self.vae = cfgmod.apply(VAEConfig(), values, "vae")
        self.siamese = cfgmod.apply(SiameseConfig(), values, "siamese")
        self.ae_train = cfgmod.apply(CLI_TRAIN, values, "ae")
        self.vae_train = cfgmod.apply(CLI_TRAIN, values, "vae")
        self.siamese_train = cfgmod.apply(CLI_TRAIN, values, "siamese")
        self.eval = cfgmod.apply(EvalConfig(), values, "eval")
        cfgmod.check_known(values, {
            "data": [self.data], "ae": [self.ae, self.ae_train], "vae": [self.vae, self.vae_train],
            "siamese": [self.siamese, self.siamese_train], "eval": [self.eval]})
        if seed is not None:
            self.data = replace(self.data, seed=seed)
            self.ae_train = replace(self.ae_train, seed=seed)
            self.vae_train = replace(self.vae_train, seed=seed)
            self.siamese_train = replace(self.siamese_train, seed=seed)
            self.eval = replace(self.eval, seed=seed)


def _size(text):
    try:
        parts = [int(p) for p in text.lower().replace("x", ",").split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None
    if len(parts) == 1:
        parts *= 2
    if len(parts) != 2 or min(parts) < 1:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}")
    return tuple(parts)


def _write_text(path, text):
    if path is None or str(path) == "-":
        sys.stdout.write(text)
        return
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8", newline="")


# subcommands --------------------------------------------------------------

def cmd_gen_data(args, st):
    synth = st.data
    overrides = {k: v for k, v in (("n_clusters", args.clusters), ("frames_per_cluster", args.per_cluster),
                                   ("image_size", args.size)) if v is not None}
    synth = replace(synth, **overrides)
    corpus = generate_synthetic(role_config(synth, args.role))
    save_corpus(corpus, args.out, fmt=args.format)
    log.info("wrote %d %s frames to %s", len(corpus), args.role, args.out)


def _train_report(report, path):
    if path:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        w.writerows((i, f"{v:.6f}") for i, v in enumerate(report.losses))
        _write_text(path, buf.getvalue())
    if report.losses:
        print(f"epochs={report.epochs} final_loss={report.losses[-1]:.6f}")


def _epochs(train, args):
    return replace(train, epochs=args.epochs) if args.epochs is not None else train


def cmd_train_ae(args, st):
    model, report = ae_train(load_corpus(args.data), st.ae, _epochs(st.ae_train, args))
    save_model(model, args.out)
    _train_report(report, args.log)


def cmd_train_vae(args, st):
    model, report = vae_train(load_corpus(args.data), st.vae, _epochs(st.vae_train, args))
    save_model(model, args.out)
    _train_report(report, args.log)


def cmd_train_siamese(args, st):
    corpus = load_corpus(args.data)
    if not corpus.labeled:
        raise DataError(f"{args.data}: Siamese training needs a labeled corpus (manifest.csv)")
    train = _epochs(st.siamese_train, args)
    pairs = sample_pairs(corpus, train.n_pairs, train.similar_fraction, train.seed)
    model, report = siamese_train(corpus, pairs, st.siamese, train)
    save_model(model, args.out)
    _train_report(report, args.log)


def _stats_path(index_path):
    return Path(str(index_path) + ".stats.json")


def cmd_build_index(args, st):
    model = load_model(args.model)
    corpus = load_corpus(args.data)
    index, stats = build_index(model, corpus, dtype=args.dtype, raw_size=args.raw_size, label=args.label)
    save_index(index, args.out)
    sidecar = {"label": stats.label, "n_frames": stats.n_frames, "raw_bytes": stats.raw_bytes,
               "encode_seconds": stats.encode_seconds}
    _stats_path(args.out).write_text(json.dumps(sidecar, indent=2) + "\n", encoding="utf-8")
    print(f"{stats.label}: {stats.n_frames} frames, {index.nbytes} bytes")


def cmd_query(args, st):
    model = load_model(args.model)
    index = load_index(args.index, model)
    frame = read_image(args.image)
    siamese = load_model(args.siamese) if args.siamese else None
    frames = load_corpus(args.data) if args.data else None
    if siamese is not None and frames is None and not args.decode:
        raise UsageError("--siamese needs --data (target frames) or --decode")
    req = QueryRequest(frame, index, args.k, args.n, siamese is not None, Path(args.image).stem)
    res = retrieve(req, model, siamese, frames, decoder_fallback=args.decode)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["rank", "frame_id", "l2_distance", "siamese_distance"])
    for i, c in enumerate(res.ranked, start=1):
        sd = "" if c.siamese_distance is None else f"{c.siamese_distance:.6f}"
        w.writerow([i, c.frame_id, f"{c.l2_score:.6f}", sd])
    _write_text(args.out, buf.getvalue())
    if res.degraded:
        log.warning("re-ranked against decoded latents; Siamese distances are approximate")


def cmd_eval(args, st):
    target = load_corpus(args.target)
    queries = load_corpus(args.queries)
    ae, vae, siamese = load_model(args.ae), load_model(args.vae), load_model(args.siamese)
    for m, kind in ((ae, "AE"), (vae, "VAE"), (siamese, "Siamese")):
        if m.kind != kind:
            raise UsageError(f"expected a {kind} model, got {m.kind}")
    ae_index = load_index(args.ae_index, ae) if args.ae_index else None
    vae_index = load_index(args.vae_index, vae) if args.vae_index else None
    ecfg = st.eval
    if args.queries_n is not None:
        ecfg = replace(ecfg, n_queries=args.queries_n)
    if args.workers is not None:
        ecfg = replace(ecfg, workers=args.workers)
    report = evaluate(queries, target, ae, vae, siamese, ecfg, ae_index=ae_index, vae_index=vae_index)
    _write_text(args.out, report.to_csv())
    if args.per_query:
        _write_text(args.per_query, report.per_query_csv())
    if args.timings:
        _write_text(args.timings, report.timing_csv())
    if args.gallery:
        render_gallery(report.results, target, args.gallery, query_frames=queries)


def cmd_report(args, st):
    stats = []
    for path in args.index:
        sidecar = _stats_path(path)
        try:
            meta = json.loads(sidecar.read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise DataError(f"missing or unreadable stats sidecar {sidecar}: {exc}") from exc
        index = load_index(path)
        size = Path(path).stat().st_size
        if size != index.nbytes:
            raise DataError(f"{path}: file size {size} disagrees with header ({index.nbytes})")
        stats.append(CompressionStats(meta["label"], int(meta["n_frames"]), int(meta["raw_bytes"]),
                                      size, float(meta["encode_seconds"])))
    text, table = compression_report(stats)
    if args.out:
        _write_text(args.out, table)
    sys.stdout.write(text)


# parser -------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="framesearch", description=__doc__.splitlines()[0].strip("`"))
    p.add_argument("--config", help="flat key = value config file (keys like ae.latent_dim)")
    p.add_argument("--seed", type=int, help="seed for data generation, training and query sampling")
    p.add_argument("--threads", type=int, help="cap BLAS threads")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", metavar="COMMAND", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic labeled corpus")
    g.add_argument("--out", required=True)
    g.add_argument("--role", choices=ROLES, default="target")
    g.add_argument("--clusters", type=int)
    g.add_argument("--per-cluster", type=int)
    g.add_argument("--size", type=int)
    g.add_argument("--format", choices=("png", "ppm"), default="png")
    g.set_defaults(func=cmd_gen_data)

    for name, func, what in (("train-ae", cmd_train_ae, "autoencoder"),
                             ("train-vae", cmd_train_vae, "variational autoencoder"),
                             ("train-siamese", cmd_train_siamese, "Siamese re-ranker")):
        t = sub.add_parser(name, help=f"train the {what}")
        t.add_argument("--data", required=True)
        t.add_argument("--out", required=True)
        t.add_argument("--epochs", type=int)
        t.add_argument("--log", help="write per-epoch losses as CSV")
        t.set_defaults(func=func)

    b = sub.add_parser("build-index", help="encode a corpus into a latent index")
    b.add_argument("--model", required=True)
    b.add_argument("--data", required=True)
    b.add_argument("--out", required=True)
    b.add_argument("--dtype", choices=("f32", "f16"), default="f32")
    b.add_argument("--raw-size", type=_size, help="raw-bytes baseline resolution, e.g. 124x124")
    b.add_argument("--label")
    b.set_defaults(func=cmd_build_index)

    q = sub.add_parser("query", help="retrieve the nearest frames for one image")
    q.add_argument("--model", required=True)
    q.add_argument("--index", required=True)
    q.add_argument("--image", required=True)
    q.add_argument("--siamese")
    q.add_argument("--data", help="target corpus directory for re-ranking")
    q.add_argument("--decode", action="store_true", help="re-rank against decoded latents")
    q.add_argument("-k", type=int, default=100, help="candidates from the index")
    q.add_argument("-n", type=int, default=10, help="results returned")
    q.add_argument("--out")
    q.set_defaults(func=cmd_query)

    e = sub.add_parser("eval", help="TP/FP/precision for all four methods")
    e.add_argument("--target", required=True)
    e.add_argument("--queries", required=True)
    e.add_argument("--ae", required=True)
    e.add_argument("--vae", required=True)
    e.add_argument("--siamese", required=True)
    e.add_argument("--ae-index")
    e.add_argument("--vae-index")
    e.add_argument("--n-queries", dest="queries_n", type=int)
    e.add_argument("--workers", type=int)
    e.add_argument("--out")
    e.add_argument("--per-query")
    e.add_argument("--timings")
    e.add_argument("--gallery")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("report", help="compression table from built indexes")
    r.add_argument("--index", nargs="+", required=True)
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        values = cfgmod.read_config(args.config) if args.config else {}
        settings = Settings(values, args.seed)
        if args.threads is not None and args.threads < 1:
            raise UsageError("--threads must be positive")
        if args.threads is not None:
            with threadpool_limits(limits=args.threads):
                args.func(args, settings)
        else:
            args.func(args, settings)
    except (UsageError, cfgmod.ConfigError) as exc:
        parser.print_usage(sys.stderr)
        print(f"framesearch: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as exc:
        print(f"framesearch: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError) as exc:
        print(f"framesearch: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"framesearch: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
