"""Cluster-match precision evaluation of the four retrieval methods."""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .index import build_index
from .retrieval import QueryRequest, Timings, retrieve

METHODS = ("AE", "VAE", "AE-Siamese", "VAE-Siamese")
CSV_HEADER = ("method", "tp", "fp", "precision")


def precision_from_counts(tp, fp):
    if tp < 0 or fp < 0:
        raise ValueError("counts must be nonnegative")
    if tp + fp == 0:
        raise ValueError("precision undefined when tp + fp == 0")
    return tp / (tp + fp)


@dataclass
class EvalConfig:
    n_queries: int = 49
    final_n: int = 10
    candidate_k: int = 100
    seed: int = 0
    blend: float = 0.0
    workers: int = 1


@dataclass
class MethodCounts:
    tp: int = 0
    fp: int = 0

    @property
    def precision(self):
        return precision_from_counts(self.tp, self.fp)


@dataclass
class QueryOutcome:
    query_id: str
    method: str
    tp: int
    fp: int
    retrieved: list


@dataclass
class EvalReport:
    config: EvalConfig
    counts: dict
    per_query: list
    results: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)

    def precision(self, method):
        return self.counts[method].precision

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for m in METHODS:
            if m in self.counts:
                c = self.counts[m]
                w.writerow([m, c.tp, c.fp, f"{c.precision:.4f}"])
        return buf.getvalue()

    def per_query_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["query_id", "method", "tp", "fp", "retrieved"])
        for q in self.per_query:
            w.writerow([q.query_id, q.method, q.tp, q.fp, " ".join(q.retrieved)])
        return buf.getvalue()

    def timing_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method", "encode_s", "search_s", "rerank_s"])
        for m in METHODS:
            if m in self.timings:
                t = self.timings[m]
                w.writerow([m, f"{t.encode_s:.6f}", f"{t.search_s:.6f}", f"{t.rerank_s:.6f}"])
        return buf.getvalue()


def summary_csv(reports, run_labels):
    """Per-run rows plus a mean row per method (means are not integers in general)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("run",) + CSV_HEADER)
    for label, rep in zip(run_labels, reports):
        for m in METHODS:
            c = rep.counts[m]
            w.writerow([label, m, c.tp, c.fp, f"{c.precision:.4f}"])
    for m in METHODS:
        tp = np.mean([r.counts[m].tp for r in reports])
        fp = np.mean([r.counts[m].fp for r in reports])
        w.writerow(["mean", m, f"{tp:.1f}", f"{fp:.1f}", f"{tp / (tp + fp):.4f}"])
    return buf.getvalue()


def sample_queries(corpus, n_queries, seed):
    if n_queries > len(corpus):
        raise ValueError(f"n_queries={n_queries} exceeds the {len(corpus)} available query frames")
    rng = np.random.default_rng([seed, 0xE7A1])
    picked = rng.choice(len(corpus), size=n_queries, replace=False)
    return sorted(corpus.ids[i] for i in picked)


def evaluate(query_corpus, target_corpus, ae, vae, siamese, config=None, ae_index=None, vae_index=None):
    """Run AE, VAE, AE-Siamese and VAE-Siamese retrieval for sampled queries.

    A retrieved frame is a true positive when its cluster id equals the query's.
    """
    config = config or EvalConfig()
    if not query_corpus.labeled or not target_corpus.labeled:
        raise DataError("evaluation needs labeled query and target corpora")
    query_ids = sample_queries(query_corpus, config.n_queries, config.seed)
    if ae_index is None:
        ae_index, _ = build_index(ae, target_corpus)
    if vae_index is None:
        vae_index, _ = build_index(vae, target_corpus)

    target_ids = sorted(target_corpus.ids)
    target_emb = dict(zip(target_ids, siamese.embed_batch(siamese.prepare([target_corpus[f] for f in target_ids]))))
    q_frames = [query_corpus[q] for q in query_ids]
    q_emb = siamese.embed_batch(siamese.prepare(q_frames)) if q_frames else []

    def run_query(qi):
        qid, frame = query_ids[qi], q_frames[qi]
        cluster = query_corpus.cluster_of(qid)
        out = []
        for encoder, index in ((ae, ae_index), (vae, vae_index)):
            latent = encoder.encode_batch(encoder.prepare([frame]))[0]
            for use_siamese in (False, True):
                method = encoder.kind + ("-Siamese" if use_siamese else "")
                req = QueryRequest(frame, index, config.candidate_k, config.final_n, use_siamese, qid)
                res = retrieve(req, encoder, siamese if use_siamese else None, target_corpus,
                               embeddings=target_emb, blend=config.blend, method=method,
                               query_latent=latent, query_embedding=q_emb[qi])
                tp = sum(target_corpus.cluster_of(c.frame_id) == cluster for c in res.ranked)
                out.append((QueryOutcome(qid, method, tp, len(res.ranked) - tp, res.frame_ids), res))
        return out

    # models and indexes are read-only here, so queries can fan out; map()
    # keeps the assembly ordered by (sorted) query id
    if config.workers > 1 and len(query_ids) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            batches = list(pool.map(run_query, range(len(query_ids))))
    else:
        batches = [run_query(qi) for qi in range(len(query_ids))]

    counts = {m: MethodCounts() for m in METHODS}
    timing_sum = {m: Timings() for m in METHODS}
    per_query, results = [], []
    for batch in batches:
        for outcome, res in batch:
            counts[outcome.method].tp += outcome.tp
            counts[outcome.method].fp += outcome.fp
            t = timing_sum[outcome.method]
            t.encode_s += res.timings.encode_s
            t.search_s += res.timings.search_s
            t.rerank_s += res.timings.rerank_s
            per_query.append(outcome)
            results.append(res)
    n = max(len(query_ids), 1)
    timings = {m: Timings(t.encode_s / n, t.search_s / n, t.rerank_s / n) for m, t in timing_sum.items()}
    return EvalReport(config, counts, per_query, results, timings)
