"""Frame corpora: directory ingestion, synthetic generation and pair sampling."""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DataError, ImageDecodeError, ManifestError

MODALITIES = ("WL", "NBI")
IMAGE_SUFFIXES = (".png", ".ppm")
MANIFEST_NAME = "manifest.csv"
MANIFEST_HEADER = ["frame_id", "cluster_id", "modality", "rotation_deg"]

# WL -> NBI stand-in: output = NBI_MATRIX @ rgb, then clamp to [0, 1].
# Red is suppressed, green and blue get a contrast boost.
NBI_MATRIX = np.array([
    [0.30, 0.10, 0.05],
    [-0.10, 1.15, 0.05],
    [-0.05, 0.10, 1.10],
])


@dataclass(frozen=True)
class FrameLabel:
    cluster_id: int
    modality: str = "WL"
    rotation_deg: float = 0.0


@dataclass
class FrameCorpus:
    """Ordered frames (H x W x 3 float32 in [0, 1]) with optional labels."""

    ids: list
    pixels: list
    labels: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.ids) != len(self.pixels):
            raise ValueError("ids and pixels differ in length")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("frame ids must be unique")
        self._pos = {fid: i for i, fid in enumerate(self.ids)}
        for fid, px in zip(self.ids, self.pixels):
            if px.ndim != 3 or px.shape[2] != 3:
                raise ValueError(f"frame {fid}: expected H x W x 3 pixels, got {px.shape}")
            if px.size and (px.min() < 0 or px.max() > 1):
                raise ValueError(f"frame {fid}: pixel values outside [0, 1]")

    def __len__(self):
        return len(self.ids)

    def __contains__(self, frame_id):
        return frame_id in self._pos

    def __getitem__(self, frame_id):
        return self.pixels[self._pos[frame_id]]

    def get(self, frame_id, default=None):
        i = self._pos.get(frame_id)
        return default if i is None else self.pixels[i]

    @property
    def labeled(self):
        return bool(self.ids) and all(fid in self.labels for fid in self.ids)

    def cluster_of(self, frame_id):
        return self.labels[frame_id].cluster_id

    def clusters(self):
        """Map cluster_id -> list of frame ids (corpus order)."""
        out = {}
        for fid in self.ids:
            out.setdefault(self.labels[fid].cluster_id, []).append(fid)
        return out

    def subset(self, frame_ids):
        frame_ids = list(frame_ids)
        return FrameCorpus(frame_ids, [self[f] for f in frame_ids],
                           {f: self.labels[f] for f in frame_ids if f in self.labels})

    def stack(self, size=None, frame_ids=None):
        """Frames as an (N, 3, H, W) float32 array, resized to ``size`` if given."""
        frame_ids = self.ids if frame_ids is None else frame_ids
        frames = [self[f] if size is None else resize_frame(self[f], size) for f in frame_ids]
        if not frames:
            h, w = size if size is not None else (0, 0)
            return np.zeros((0, 3, h, w), dtype=np.float32)
        return np.stack(frames).transpose(0, 3, 1, 2).astype(np.float32, copy=False)


# image I/O ----------------------------------------------------------------

def to_uint8(pixels):
    return np.round(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)


def quantize(pixels):
    """Round to the 8-bit grid so frames survive a PNG round trip unchanged."""
    return (to_uint8(pixels).astype(np.float32) / np.float32(255.0))


def read_image(path):
    """Decode a PNG or P6 PPM into H x W x 3 float32 pixels in [0, 1]."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        raise ImageDecodeError(f"cannot decode image {path}: {exc}") from exc
    return arr.astype(np.float32) / np.float32(255.0)


def decode_image_bytes(data, name="<bytes>"):
    try:
        with Image.open(io.BytesIO(data)) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        raise ImageDecodeError(f"cannot decode image {name}: {exc}") from exc
    return arr.astype(np.float32) / np.float32(255.0)


def write_image(path, pixels):
    path = Path(path)
    fmt = "PPM" if path.suffix.lower() == ".ppm" else "PNG"
    Image.fromarray(to_uint8(pixels), mode="RGB").save(path, format=fmt)


def encode_png(pixels):
    buf = io.BytesIO()
    Image.fromarray(to_uint8(pixels), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def as_frame(image):
    """Accept pixels or a path to an image file."""
    if isinstance(image, (str, os.PathLike)):
        return read_image(image)
    arr = np.asarray(image, dtype=np.float32)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ImageDecodeError(f"expected H x W x 3 pixels, got shape {arr.shape}")
    return arr


def resize_frame(pixels, size):
    """Bilinear resize of H x W x 3 float pixels to ``size = (h, w)``."""
    h, w = size
    if pixels.shape[:2] == (h, w):
        return pixels
    chans = [np.asarray(Image.fromarray(np.ascontiguousarray(pixels[:, :, c], dtype=np.float32), mode="F")
                        .resize((w, h), Image.BILINEAR)) for c in range(3)]
    return np.clip(np.stack(chans, axis=2), 0.0, 1.0).astype(np.float32)


# corpus I/O ---------------------------------------------------------------

def _read_manifest(path):
    labels = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != MANIFEST_HEADER:
            raise ManifestError(f"{path}: header must be {','.join(MANIFEST_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                modality = row["modality"]
                if modality not in MODALITIES:
                    raise ValueError(f"unknown modality {modality!r}")
                labels[row["frame_id"]] = FrameLabel(int(row["cluster_id"]), modality,
                                                     float(row["rotation_deg"]))
            except (TypeError, ValueError) as exc:
                raise ManifestError(f"{path}:{lineno}: {exc}") from exc
    return labels


def load_corpus(path, manifest=None):
    """Load every PNG/PPM in ``path`` (sorted by filename); labels from ``manifest``.

    ``manifest`` defaults to ``path/manifest.csv`` when that file exists. Frame
    ids are file stems.
    """
    path = Path(path)
    if not path.is_dir():
        raise DataError(f"corpus directory not found: {path}")
    files = sorted(p for p in path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    ids = [p.stem for p in files]
    if len(set(ids)) != len(ids):
        raise DataError(f"{path}: duplicate frame ids across image formats")
    pixels = [read_image(p) for p in files]
    if manifest is None and (path / MANIFEST_NAME).exists():
        manifest = path / MANIFEST_NAME
    labels = {}
    if manifest is not None:
        labels = _read_manifest(manifest)
        known = set(ids)
        missing = [fid for fid in labels if fid not in known]
        if missing:
            raise ManifestError(f"{manifest}: references missing frame {missing[0]!r}")
    return FrameCorpus(ids, pixels, labels)


def save_corpus(corpus, path, fmt="png"):
    """Write frames as images plus ``manifest.csv`` (when labeled)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for fid, px in zip(corpus.ids, corpus.pixels):
        write_image(path / f"{fid}.{fmt}", px)
    if corpus.labels:
        with open(path / MANIFEST_NAME, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(MANIFEST_HEADER)
            for fid in corpus.ids:
                if fid in corpus.labels:
                    lab = corpus.labels[fid]
                    writer.writerow([fid, lab.cluster_id, lab.modality, repr(float(lab.rotation_deg))])


# transforms ---------------------------------------------------------------

def modality_transform(frame, matrix=NBI_MATRIX):
    """Fixed colour remap emulating a WL -> NBI view (linear map, then clamp)."""
    out = frame @ np.asarray(matrix, dtype=np.float64).T
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def rotate_frame(frame, theta):
    """Bilinear rotation by ``theta`` degrees (counter-clockwise) about the centre.

    Pixels that map outside the source are black.
    """
    theta = float(theta) % 360.0
    if theta == 0.0:
        return np.array(frame, dtype=np.float32, copy=True)
    h, w = frame.shape[:2]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    rad = np.deg2rad(theta)
    c, s = np.cos(rad), np.sin(rad)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    u, v = xx - cx, yy - cy
    src_x = c * u - s * v + cx
    src_y = s * u + c * v + cy
    # Snap near-integer coordinates so right-angle rotations are exact permutations.
    rx, ry = np.round(src_x), np.round(src_y)
    src_x = np.where(np.abs(src_x - rx) < 1e-9, rx, src_x)
    src_y = np.where(np.abs(src_y - ry) < 1e-9, ry, src_y)

    padded = np.zeros((h + 2, w + 2, frame.shape[2]), dtype=np.float64)
    padded[1:-1, 1:-1] = frame
    x0 = np.floor(src_x)
    y0 = np.floor(src_y)
    fx = (src_x - x0)[..., None]
    fy = (src_y - y0)[..., None]
    # +1 for the padding border; anything further out clamps onto the zero border
    x0i = np.clip(x0.astype(np.int64) + 1, 0, w + 1)
    y0i = np.clip(y0.astype(np.int64) + 1, 0, h + 1)
    x1i = np.clip(x0.astype(np.int64) + 2, 0, w + 1)
    y1i = np.clip(y0.astype(np.int64) + 2, 0, h + 1)
    out = ((1 - fy) * ((1 - fx) * padded[y0i, x0i] + fx * padded[y0i, x1i])
           + fy * ((1 - fx) * padded[y1i, x0i] + fx * padded[y1i, x1i]))
    return np.clip(out, 0.0, 1.0).astype(np.float32)


# synthetic corpora --------------------------------------------------------

DEFAULT_ANGLES = tuple(float(a) for a in range(0, 360, 45))


@dataclass(frozen=True)
class SynthConfig:
    """Synthetic corpus layout.

    ``seed`` fixes the per-cluster base textures; ``sample_seed`` (defaults to
    ``seed``) fixes which rotation/modality each member gets. ``rotation_angles``
    of ``None`` draws angles uniformly from [0, 360).
    """

    n_clusters: int = 100
    frames_per_cluster: int = 10
    image_size: int = 64
    rotation_angles: tuple | None = DEFAULT_ANGLES
    modality_fraction: float = 0.5
    seed: int = 0
    sample_seed: int | None = None
    prefix: str = "f"

    def __post_init__(self):
        if self.n_clusters < 1:
            raise ValueError("n_clusters must be at least 1")
        if self.frames_per_cluster < 1:
            raise ValueError("frames_per_cluster must be at least 1")
        if not 0.0 <= self.modality_fraction <= 1.0:
            raise ValueError("modality_fraction must lie in [0, 1]")
        if self.rotation_angles is not None:
            if not self.rotation_angles or any(not 0 <= a < 360 for a in self.rotation_angles):
                raise ValueError("rotation_angles must be a nonempty subset of [0, 360)")


def _smooth_field(rng, yy, xx, n_waves=3):
    out = np.zeros_like(yy)
    for _ in range(n_waves):
        freq = rng.uniform(0.5, 2.0)
        ang = rng.uniform(0, 2 * np.pi)
        phase = rng.uniform(0, 2 * np.pi)
        out += rng.uniform(0.5, 1.0) * np.sin(2 * np.pi * freq * (np.cos(ang) * xx + np.sin(ang) * yy) + phase)
    return out / n_waves


def cluster_base(seed, cluster_id, size):
    """Base texture of one cluster: saturated low-frequency colour fields plus vessels."""
    rng = np.random.default_rng([seed, cluster_id, 0x5EED])
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size - 0.5
    img = np.empty((size, size, 3))
    for c in range(3):
        field_ = _smooth_field(rng, yy, xx)
        bias = rng.uniform(-0.6, 0.6)
        img[..., c] = 1.0 / (1.0 + np.exp(-12.0 * (field_ + bias)))

    vessel = np.zeros((size, size))
    for _ in range(rng.integers(2, 5)):
        t = np.linspace(0, 1, 64)
        p0, p1, p2 = rng.uniform(-0.45, 0.45, size=(3, 2))
        pts = ((1 - t) ** 2)[:, None] * p0 + (2 * (1 - t) * t)[:, None] * p1 + (t ** 2)[:, None] * p2
        d2 = (xx[..., None] - pts[:, 0]) ** 2 + (yy[..., None] - pts[:, 1]) ** 2
        width = rng.uniform(0.012, 0.025)
        vessel = np.maximum(vessel, np.exp(-d2.min(axis=-1) / (2 * width ** 2)))
    img *= (1.0 - 0.85 * vessel)[..., None]

    radius = np.sqrt(xx ** 2 + yy ** 2)
    img[radius > 0.5] = 0.0
    return img.astype(np.float32)


def generate_synthetic(config=SynthConfig()):
    """Build a labeled corpus: each cluster's members are rotations / NBI views of one base."""
    sample_seed = config.seed if config.sample_seed is None else config.sample_seed
    rng = np.random.default_rng([sample_seed, 0xC0FFEE])
    width = len(str(config.n_clusters * config.frames_per_cluster - 1))
    ids, pixels, labels = [], [], {}
    k = 0
    for cid in range(config.n_clusters):
        base = cluster_base(config.seed, cid, config.image_size)
        for _ in range(config.frames_per_cluster):
            if config.rotation_angles is None:
                theta = float(rng.uniform(0.0, 360.0))
            else:
                theta = float(config.rotation_angles[rng.integers(len(config.rotation_angles))])
            modality = "NBI" if rng.random() < config.modality_fraction else "WL"
            frame = rotate_frame(base, theta)
            if modality == "NBI":
                frame = modality_transform(frame)
            fid = f"{config.prefix}{k:0{width}d}"
            ids.append(fid)
            pixels.append(quantize(frame))
            labels[fid] = FrameLabel(cid, modality, theta)
            k += 1
    return FrameCorpus(ids, pixels, labels)


# pair sampling ------------------------------------------------------------

@dataclass(frozen=True)
class PairSample:
    a: str
    b: str
    y: int


def sample_pairs(corpus, n_pairs, similar_fraction=0.5, seed=0):
    """Draw labeled pairs; exactly ``round(n_pairs * similar_fraction)`` are similar (y=0)."""
    if not corpus.labeled:
        raise DataError("sample_pairs needs a labeled corpus")
    if not 0.0 <= similar_fraction <= 1.0:
        raise ValueError("similar_fraction must lie in [0, 1]")
    clusters = corpus.clusters()
    cids = sorted(clusters)
    n_sim = int(round(n_pairs * similar_fraction))
    n_dis = n_pairs - n_sim
    if n_dis and len(cids) < 2:
        raise DataError("dissimilar pairs need at least 2 clusters")
    multi = [c for c in cids if len(clusters[c]) >= 2]
    if n_sim and not multi:
        raise DataError("similar pairs need a cluster with at least 2 frames")
    rng = np.random.default_rng([seed, 0xFA125])
    pairs = []
    for _ in range(n_sim):
        members = clusters[multi[rng.integers(len(multi))]]
        i, j = rng.choice(len(members), size=2, replace=False)
        pairs.append(PairSample(members[i], members[j], 0))
    for _ in range(n_dis):
        ca, cb = rng.choice(len(cids), size=2, replace=False)
        ma, mb = clusters[cids[ca]], clusters[cids[cb]]
        pairs.append(PairSample(ma[rng.integers(len(ma))], mb[rng.integers(len(mb))], 1))
    order = rng.permutation(len(pairs))
    return [pairs[i] for i in order]
