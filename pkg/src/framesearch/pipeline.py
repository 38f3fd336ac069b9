"""Synthetic end-to-end benchmark: generate corpora, train all three networks, evaluate."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

from .dataio import SynthConfig, generate_synthetic, sample_pairs
from .evaluation import EvalConfig, evaluate
from .index import build_index
from .models import (AEConfig, SiameseConfig, TrainConfig, VAEConfig, ae_train, siamese_train,
                     vae_train)

log = logging.getLogger(__name__)

ROLES = ("target", "query", "train")


def role_config(base, role):
    """Corpus presets sharing one seed.

    ``target`` and ``query`` share base textures (same clusters, as in a repeat
    visit) but draw different rotations/modalities, with query angles drawn
    continuously. ``train`` uses unrelated textures.
    """
    if role == "target":
        return replace(base, prefix="f")
    if role == "query":
        return replace(base, sample_seed=base.seed + 1_000_003, rotation_angles=None, prefix="q")
    if role == "train":
        return replace(base, seed=base.seed + 7_919, sample_seed=None, prefix="t")
    raise ValueError(f"unknown corpus role {role!r}")


@dataclass
class BenchmarkConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    ae: AEConfig = field(default_factory=AEConfig)
    vae: VAEConfig = field(default_factory=VAEConfig)
    siamese: SiameseConfig = field(default_factory=lambda: SiameseConfig(input_size=(32, 32)))
    ae_train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=8))
    vae_train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=8))
    siamese_train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=10, iterations=100,
                                                                         n_pairs=20000))
    eval: EvalConfig = field(default_factory=EvalConfig)


@dataclass
class BenchmarkRun:
    seed: int
    report: object
    seconds: dict


def run_benchmark(seed, config=None):
    """Generate target/query/train corpora for ``seed``, train, and evaluate all four methods."""
    config = config or BenchmarkConfig()
    synth = replace(config.synth, seed=seed)
    secs = {}
    t = time.perf_counter()
    target = generate_synthetic(role_config(synth, "target"))
    queries = generate_synthetic(role_config(synth, "query"))
    train = generate_synthetic(role_config(synth, "train"))
    secs["data"] = time.perf_counter() - t

    t = time.perf_counter()
    ae, _ = ae_train(train, config.ae, replace(config.ae_train, seed=seed))
    secs["ae"] = time.perf_counter() - t
    t = time.perf_counter()
    vae, _ = vae_train(train, config.vae, replace(config.vae_train, seed=seed))
    secs["vae"] = time.perf_counter() - t
    t = time.perf_counter()
    st = replace(config.siamese_train, seed=seed)
    pairs = sample_pairs(train, st.n_pairs, st.similar_fraction, seed)
    siamese, _ = siamese_train(train, pairs, config.siamese, st)
    secs["siamese"] = time.perf_counter() - t

    t = time.perf_counter()
    ae_index, _ = build_index(ae, target)
    vae_index, _ = build_index(vae, target)
    report = evaluate(queries, target, ae, vae, siamese, replace(config.eval, seed=seed),
                      ae_index=ae_index, vae_index=vae_index)
    secs["eval"] = time.perf_counter() - t
    log.info("benchmark seed %d: %s", seed, secs)
    return BenchmarkRun(seed, report, secs)
