"""Query pipeline: encode, exact L2 k-NN over the index, optional Siamese re-rank."""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .dataio import as_frame
from .errors import DataError, ShapeError
from .index import check_model
from .models import embedding_distance


@dataclass
class Candidate:
    frame_id: str
    l2_score: float
    siamese_distance: float | None = None
    final_rank: int = 0


@dataclass
class Timings:
    encode_s: float = 0.0
    search_s: float = 0.0
    rerank_s: float = 0.0

    @property
    def total(self):
        return self.encode_s + self.search_s + self.rerank_s


@dataclass
class QueryRequest:
    query_frame: object
    index: object
    candidate_k: int = 100
    final_n: int = 10
    use_siamese: bool = True
    query_id: str = ""


@dataclass
class RetrievalResult:
    ranked: list
    timings: Timings = field(default_factory=Timings)
    method: str = ""
    query_id: str = ""
    degraded: bool = False

    @property
    def frame_ids(self):
        return [c.frame_id for c in self.ranked]


def l2_distance(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"l2_distance: length mismatch {a.shape} vs {b.shape}")
    return float(np.sqrt(kernels.sq_l2_rows(a, b[None, :])[0]))


def knn_candidates(query_latent, index, k):
    """The ``k`` nearest index entries by L2, ascending; ties go to the smaller frame id."""
    q = np.asarray(query_latent, dtype=np.float32).ravel()
    if q.shape[0] != index.dim:
        raise ShapeError(f"query latent has length {q.shape[0]}, index dim is {index.dim}")
    if k < 1:
        raise ValueError("k must be at least 1")
    dist = np.sqrt(kernels.sq_l2_rows(q, index.vectors()))
    k = min(k, len(dist))
    # frame ids are stored sorted, so a stable sort on distance breaks ties by id
    if k < len(dist):
        cut = np.partition(dist, k - 1)[k - 1]
        pool = np.flatnonzero(dist <= cut)
    else:
        pool = np.arange(len(dist))
    pool = pool[np.argsort(dist[pool], kind="stable")][:k]
    return [Candidate(index.frame_ids[i], float(dist[i]), None, r + 1) for r, i in enumerate(pool)]


def _sort_key(c, blend):
    return (c.siamese_distance + blend * c.l2_score, c.l2_score, c.frame_id)


def rerank(candidates, query_frame, siamese, frames=None, embeddings=None, blend=0.0, decoder=None,
           query_embedding=None):
    """Order candidates by Siamese distance to the query (then L2, then frame id).

    Candidate pixels come from ``frames`` (any mapping frame_id -> pixels) or,
    if given, precomputed ``embeddings`` (frame_id -> embedding). ``decoder`` is
    a callable frame_id -> pixels used when pixels are missing; using it marks
    the returned list as degraded. Returns ``(ranked, degraded)``.
    """
    if query_embedding is None:
        query_embedding = siamese.embed([as_frame(query_frame)])[0]
    degraded = False
    need = [c.frame_id for c in candidates if embeddings is None or c.frame_id not in embeddings]
    fresh = {}
    if need:
        pix = []
        for fid in need:
            px = frames.get(fid) if frames is not None else None
            if px is None:
                if decoder is None:
                    raise DataError(f"no pixels available for candidate frame {fid}")
                px = decoder(fid)
                degraded = True
            pix.append(px)
        fresh = dict(zip(need, siamese.embed(pix)))
    out = []
    for c in candidates:
        emb = fresh[c.frame_id] if c.frame_id in fresh else embeddings[c.frame_id]
        out.append(Candidate(c.frame_id, c.l2_score, embedding_distance(query_embedding, emb)))
    out.sort(key=lambda c: _sort_key(c, blend))
    for r, c in enumerate(out, start=1):
        c.final_rank = r
    return out, degraded


def retrieve(request, encoder, siamese=None, frames=None, embeddings=None, blend=0.0,
             decoder_fallback=False, method=None, query_latent=None, query_embedding=None):
    """Run one query through encode -> k-NN -> (re-rank) -> truncate."""
    index = request.index
    check_model(index, encoder)
    size = len(index)
    k, n = request.candidate_k, request.final_n
    if n < 1 or k < n:
        raise ValueError("need 1 <= final_n <= candidate_k")
    if size == 0:
        raise DataError("index is empty")
    if k > size:
        warnings.warn(f"candidate_k={k} exceeds index size {size}; clamping", stacklevel=2)
        k = size
        n = min(n, k)
    timings = Timings()

    t0 = time.perf_counter()
    if query_latent is None:
        query_latent = encoder.encode_batch(encoder.prepare([request.query_frame]))[0]
    t1 = time.perf_counter()
    cands = knn_candidates(query_latent, index, k)
    t2 = time.perf_counter()
    timings.encode_s, timings.search_s = t1 - t0, t2 - t1

    degraded = False
    if request.use_siamese:
        if siamese is None:
            raise ValueError("use_siamese requested without a Siamese model")
        decoder = None
        if decoder_fallback:
            pos = {f: i for i, f in enumerate(index.frame_ids)}
            vecs = index.vectors()

            def decoder(fid):
                img = encoder.decode_batch(vecs[pos[fid]][None])[0]
                return img.transpose(1, 2, 0)

        cands, degraded = rerank(cands, request.query_frame, siamese, frames, embeddings, blend, decoder,
                                   query_embedding)
        timings.rerank_s = time.perf_counter() - t2
    ranked = cands[:n]
    label = method or (encoder.kind + ("-Siamese" if request.use_siamese else ""))
    return RetrievalResult(ranked, timings, label, request.query_id, degraded)
