"""Offline latent index: encode a corpus once, store it compactly, reload it."""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (BadMagicError, ChecksumMismatchError, DataError, IndexFormatError,
                     TruncatedPayloadError, UnsupportedVersionError)

INDEX_MAGIC = b"LVIX"
INDEX_VERSION = 1
MODEL_KINDS = {"AE": 0, "VAE": 1}
DTYPES = {"f32": (0, np.dtype("<f4")), "f16": (1, np.dtype("<f2"))}
_DTYPE_NAMES = {code: name for name, (code, _) in DTYPES.items()}
# magic, version u16, kind u8, dtype u8, dim u32, count u64, checksum[32]
_HEADER = struct.Struct("<4sHBBIQ32s")
HEADER_SIZE = _HEADER.size


@dataclass
class LatentIndex:
    model_kind: str
    model_checksum: bytes
    dim: int
    frame_ids: list
    latents: np.ndarray
    dtype: str = "f32"

    def __post_init__(self):
        if self.dtype not in DTYPES:
            raise ValueError(f"unsupported dtype {self.dtype!r}")
        if self.model_kind not in MODEL_KINDS:
            raise ValueError(f"unsupported model kind {self.model_kind!r}")
        self.latents = np.asarray(self.latents, dtype=DTYPES[self.dtype][1]).reshape(-1, self.dim)
        if len(self.frame_ids) != self.latents.shape[0]:
            raise ValueError("frame_ids and latents differ in length")
        if list(self.frame_ids) != sorted(self.frame_ids) or len(set(self.frame_ids)) != len(self.frame_ids):
            raise ValueError("frame_ids must be unique and sorted")
        if len(self.model_checksum) != 32:
            raise ValueError("model_checksum must be 32 bytes")

    def __len__(self):
        return len(self.frame_ids)

    def vectors(self):
        """Latents widened to float32 for distance computation."""
        return self.latents.astype(np.float32)

    @property
    def payload_bytes(self):
        return self.latents.size * self.latents.itemsize

    @property
    def id_table_bytes(self):
        return sum(4 + len(f.encode("utf-8")) for f in self.frame_ids)

    @property
    def nbytes(self):
        """Exact on-disk size of the serialised index."""
        return HEADER_SIZE + self.id_table_bytes + self.payload_bytes

    def __eq__(self, other):
        if not isinstance(other, LatentIndex):
            return NotImplemented
        return (self.model_kind == other.model_kind and self.model_checksum == other.model_checksum
                and self.dim == other.dim and list(self.frame_ids) == list(other.frame_ids)
                and self.dtype == other.dtype and self.latents.tobytes() == other.latents.tobytes())


@dataclass
class CompressionStats:
    label: str
    n_frames: int
    raw_bytes: int
    index_bytes: int
    encode_seconds: float

    @property
    def ratio(self):
        if self.n_frames == 0 or self.index_bytes == 0:
            return None
        return self.raw_bytes / self.index_bytes


def to_bytes(index):
    code, dt = DTYPES[index.dtype]
    parts = [_HEADER.pack(INDEX_MAGIC, INDEX_VERSION, MODEL_KINDS[index.model_kind], code,
                          index.dim, len(index.frame_ids), index.model_checksum)]
    for fid in index.frame_ids:
        raw = fid.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
    parts.append(np.ascontiguousarray(index.latents, dtype=dt).tobytes())
    return b"".join(parts)


def from_bytes(data, source="<bytes>"):
    if len(data) < 4 or data[:4] != INDEX_MAGIC:
        raise BadMagicError(f"{source}: bad magic, not a latent index")
    if len(data) < HEADER_SIZE:
        raise TruncatedPayloadError(f"{source}: truncated header")
    _, version, kind, code, dim, count, checksum = _HEADER.unpack_from(data)
    if version != INDEX_VERSION:
        raise UnsupportedVersionError(f"{source}: unsupported index version {version}")
    kinds = {v: k for k, v in MODEL_KINDS.items()}
    if kind not in kinds or code not in _DTYPE_NAMES:
        raise IndexFormatError(f"{source}: unknown model kind {kind} or dtype {code}")
    dtype_name = _DTYPE_NAMES[code]
    dt = DTYPES[dtype_name][1]
    offset = HEADER_SIZE
    ids = []
    for _ in range(count):
        if offset + 4 > len(data):
            raise TruncatedPayloadError(f"{source}: truncated frame-id table")
        (n,) = struct.unpack_from("<I", data, offset)
        offset += 4
        if offset + n > len(data):
            raise TruncatedPayloadError(f"{source}: truncated frame-id table")
        ids.append(data[offset:offset + n].decode("utf-8"))
        offset += n
    need = count * dim * dt.itemsize
    if len(data) - offset < need:
        raise TruncatedPayloadError(f"{source}: truncated payload ({len(data) - offset} of {need} bytes)")
    if len(data) - offset > need:
        raise IndexFormatError(f"{source}: {len(data) - offset - need} trailing bytes")
    latents = np.frombuffer(data, dtype=dt, count=count * dim, offset=offset).reshape(count, dim).copy()
    return LatentIndex(kinds[kind], checksum, dim, ids, latents, dtype_name)


def save_index(index, path):
    Path(path).write_bytes(to_bytes(index))


def load_index(path, model=None):
    """Read an index file; with ``model`` given, reject indexes built by another encoder."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read index {path}: {exc}") from exc
    index = from_bytes(data, str(path))
    if model is not None:
        check_model(index, model)
    return index


def check_model(index, model):
    if index.model_kind != model.kind or index.model_checksum != model.checksum:
        raise ChecksumMismatchError(
            f"index was built by a different {index.model_kind} encoder "
            f"({index.model_checksum.hex()[:12]} vs {model.checksum.hex()[:12]})")


def _prepare_named(model, corpus, chunk):
    try:
        return model.prepare([corpus[f] for f in chunk])
    except (DataError, ValueError):
        pass
    # find which frame broke the batch so the error can name it
    for fid in chunk:
        try:
            model.prepare([corpus[fid]])
        except (DataError, ValueError) as exc:
            raise DataError(f"cannot encode frame {fid}: {exc}") from exc
    raise DataError(f"cannot encode frames {chunk[0]}..{chunk[-1]}")


def build_index(model, corpus, dtype="f32", raw_size=None, batch_size=64, label=None):
    """Encode every corpus frame with the AE bottleneck or VAE mean head.

    ``raw_size=(h, w)`` overrides the raw-bytes baseline resolution; by default
    each frame's native resolution is used (3 bytes per pixel).
    """
    if model.kind not in MODEL_KINDS:
        raise ValueError(f"cannot index with a {model.kind} model")
    started = time.perf_counter()
    order = sorted(corpus.ids)
    rows = []
    for s in range(0, len(order), batch_size):
        chunk = order[s:s + batch_size]
        batch = _prepare_named(model, corpus, chunk)
        z = model.encode_batch(batch)
        if not np.isfinite(z).all():
            bad = chunk[int(np.argwhere(~np.isfinite(z))[0, 0])]
            raise DataError(f"non-finite latent for frame {bad}")
        rows.append(z)
    latents = np.concatenate(rows) if rows else np.zeros((0, model.latent_dim), dtype=np.float32)
    if latents.shape[1] != model.latent_dim:
        raise AssertionError(f"encoder produced dim {latents.shape[1]}, expected {model.latent_dim}")
    seconds = time.perf_counter() - started
    index = LatentIndex(model.kind, model.checksum, model.latent_dim, order, latents, dtype)
    if raw_size is not None:
        raw = len(order) * raw_size[0] * raw_size[1] * 3
    else:
        raw = sum(int(corpus[f].shape[0] * corpus[f].shape[1] * 3) for f in order)
    stats = CompressionStats(label or model.kind, len(order), raw, index.nbytes, seconds)
    return index, stats
