"""Classical AE, VAE and Siamese networks, their trainers and weight files."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import struct
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import nn
from .dataio import as_frame, resize_frame
from .errors import (DataError, IndexFormatError, NonFiniteError, TrainingDivergedError,
                     TruncatedPayloadError)
from .nn import layers as L

log = logging.getLogger(__name__)

WEIGHTS_MAGIC = b"LVWT"
WEIGHTS_VERSION = 1
KIND_CODES = {"AE": 0, "VAE": 1, "Siamese": 2}
KIND_NAMES = {v: k for k, v in KIND_CODES.items()}


# configuration ------------------------------------------------------------

@dataclass(frozen=True)
class AEConfig:
    input_size: tuple = (64, 64)
    channels: tuple = (16, 32, 64)
    latent_dim: int = 32
    kernel: int = 3


@dataclass(frozen=True)
class VAEConfig:
    input_size: tuple = (64, 64)
    channels: tuple = (16, 32, 64)
    latent_dim: int = 10
    kernel: int = 3


@dataclass(frozen=True)
class SiameseConfig:
    input_size: tuple = (100, 100)
    channels: tuple = (16, 32, 64)
    embedding_dim: int = 64
    kernel: int = 3
    margin: float = 1.0


# The published input resolution; desk-scale defaults above use 64 x 64.
PAPER_AE = AEConfig(input_size=(124, 124))
PAPER_VAE = VAEConfig(input_size=(124, 124))


@dataclass
class TrainConfig:
    """Optimisation knobs. ``lr=None`` picks the optimiser's default.

    ``iterations`` is the number of minibatch steps per epoch for Siamese
    training; AE/VAE epochs always sweep the whole corpus.
    """

    epochs: int = 500
    batch_size: int = 32
    lr: float | None = None
    seed: int = 0
    iterations: int = 100
    beta: float = 1.0
    n_pairs: int = 10000
    similar_fraction: float = 0.5


@dataclass
class TrainReport:
    losses: list = field(default_factory=list)
    epochs: int = 0
    seconds: float = 0.0
    seed: int = 0
    components: dict = field(default_factory=dict)


# architecture -------------------------------------------------------------

def _bottleneck(input_size, n_stages):
    h, w = input_size
    for _ in range(n_stages):
        h, w = (h + 1) // 2, (w + 1) // 2
    return h, w


def conv_trunk(channels, kernel=3):
    """Stride-2 conv + relu stages followed by a flatten."""
    specs, cin = [], 3
    for c in channels:
        specs += [L.conv(cin, c, kernel, stride=2), L.RELU]
        cin = c
    return specs + [L.FLATTEN]


def trunk_features(input_size, channels):
    bh, bw = _bottleneck(input_size, len(channels))
    return channels[-1] * bh * bw


def decoder_specs(input_size, channels, latent_dim, kernel=3):
    """Mirror of the encoder: dense, unflatten, then (upsample, conv) per stage."""
    bh, bw = _bottleneck(input_size, len(channels))
    rev = list(reversed(channels))
    specs = [L.dense(latent_dim, rev[0] * bh * bw), L.RELU, L.unflatten(rev[0], bh, bw)]
    outs = rev[1:] + [3]
    cin = rev[0]
    for i, c in enumerate(outs):
        last = i == len(outs) - 1
        specs += [L.UPSAMPLE2, L.conv(cin, c, kernel, init="glorot" if last else "he")]
        specs.append(L.SIGMOID if last else L.RELU)
        cin = c
    return specs


def ae_specs(cfg):
    feats = trunk_features(cfg.input_size, cfg.channels)
    enc = conv_trunk(cfg.channels, cfg.kernel) + [L.dense(feats, cfg.latent_dim, init="glorot")]
    return {"encoder": enc, "decoder": decoder_specs(cfg.input_size, cfg.channels, cfg.latent_dim, cfg.kernel)}


def vae_specs(cfg):
    feats = trunk_features(cfg.input_size, cfg.channels)
    return {
        "trunk": conv_trunk(cfg.channels, cfg.kernel),
        "mu_head": [L.dense(feats, cfg.latent_dim, init="zeros")],
        "log_var_head": [L.dense(feats, cfg.latent_dim, init="zeros")],
        "decoder": decoder_specs(cfg.input_size, cfg.channels, cfg.latent_dim, cfg.kernel),
    }


def siamese_specs(cfg):
    feats = trunk_features(cfg.input_size, cfg.channels)
    return {"embedding": conv_trunk(cfg.channels, cfg.kernel)
            + [L.dense(feats, cfg.embedding_dim, init="glorot")]}


def count_parameters(specs):
    """Trainable scalars in a layer list or a ``{name: layer list}`` mapping."""
    if isinstance(specs, dict):
        return sum(L.count_parameters(v) for v in specs.values())
    return L.count_parameters(specs)


# models -------------------------------------------------------------------

def _config_to_json(cfg):
    return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(cfg).items()}


def _config_from_json(cls, d):
    return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


class _Model:
    kind = ""
    config_cls = None

    def __init__(self, config, seed=0, dtype=np.float32):
        self.config = config
        rng = np.random.default_rng([seed, 1])
        self.networks = {name: nn.Network(specs, rng, dtype) for name, specs in self.build_specs(config).items()}
        self._checksum = None

    @staticmethod
    def build_specs(config):
        raise NotImplementedError

    @property
    def specs(self):
        return {name: net.specs for name, net in self.networks.items()}

    @property
    def params(self):
        return [p for net in self.networks.values() for p in net.params]

    @property
    def param_names(self):
        return [f"{name}.{p.name}" for name, net in self.networks.items() for p in net.params]

    def num_parameters(self):
        return count_parameters(self.specs)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def astype(self, dtype):
        for net in self.networks.values():
            net.astype(dtype)
        self._checksum = None
        return self

    @property
    def input_size(self):
        return tuple(self.config.input_size)

    def prepare(self, frames):
        """Stack frames (paths or H x W x 3 pixels) into an NCHW batch at the model's input size."""
        dtype = self.params[0].dtype
        arr = np.stack([resize_frame(as_frame(f), self.input_size) for f in frames])
        return arr.transpose(0, 3, 1, 2).astype(dtype)

    # serialisation

    def to_bytes(self):
        block = json.dumps({
            "config": _config_to_json(self.config),
            "networks": {name: [s.to_dict() for s in specs] for name, specs in self.specs.items()},
        }, sort_keys=True).encode("utf-8")
        header = WEIGHTS_MAGIC + struct.pack("<HBI", WEIGHTS_VERSION, KIND_CODES[self.kind], len(block))
        payload = b"".join(p.data.astype("<f4").tobytes() for p in self.params)
        return header + block + payload

    @property
    def checksum(self):
        """SHA-256 of the serialised weights; identifies the encoder behind an index."""
        if self._checksum is None:
            self._checksum = hashlib.sha256(self.to_bytes()).digest()
        return self._checksum

    def invalidate(self):
        self._checksum = None

    def save(self, path):
        data = self.to_bytes()
        Path(path).write_bytes(data)
        self._checksum = hashlib.sha256(data).digest()


class AEModel(_Model):
    kind = "AE"
    config_cls = AEConfig

    @staticmethod
    def build_specs(config):
        return ae_specs(config)

    @property
    def latent_dim(self):
        return self.config.latent_dim

    def encode_tensor(self, x):
        return self.networks["encoder"](x)

    def decode_tensor(self, z):
        h, w = self.input_size
        return nn.crop2d(self.networks["decoder"](z), h, w)

    def loss(self, batch):
        x = nn.Tensor(batch)
        return nn.bce_loss(self.decode_tensor(self.encode_tensor(x)), x)

    def encode_batch(self, batch):
        with nn.no_grad():
            return self.encode_tensor(nn.Tensor(batch)).data

    def decode_batch(self, z):
        with nn.no_grad():
            return self.decode_tensor(nn.Tensor(np.asarray(z, dtype=self.params[0].dtype))).data

    def reconstruct_batch(self, batch):
        return self.decode_batch(self.encode_batch(batch))


class VAEModel(_Model):
    kind = "VAE"
    config_cls = VAEConfig

    @staticmethod
    def build_specs(config):
        return vae_specs(config)

    @property
    def latent_dim(self):
        return self.config.latent_dim

    def encode_tensors(self, x):
        h = self.networks["trunk"](x)
        return self.networks["mu_head"](h), self.networks["log_var_head"](h)

    def decode_tensor(self, z):
        h, w = self.input_size
        return nn.crop2d(self.networks["decoder"](z), h, w)

    @staticmethod
    def reparameterize(mu, log_var, eps):
        """z = mu + sigma * eps with sigma = exp(log_var / 2)."""
        return mu + nn.functional.exp(log_var * 0.5) * eps

    def loss_terms(self, batch, eps, beta=1.0):
        """(total, reconstruction, kl) for one batch.

        The reconstruction term is the per-frame summed cross-entropy
        (mean BCE times pixels per frame), so it sits on the same per-sample
        scale as the KL term.
        """
        x = nn.Tensor(batch)
        mu, log_var = self.encode_tensors(x)
        z = self.reparameterize(mu, log_var, eps)
        recon = nn.bce_loss(self.decode_tensor(z), x) * float(np.prod(batch.shape[1:]))
        kl = nn.kl_unit_normal(mu, log_var)
        return recon + kl * beta, recon, kl

    def encode_batch(self, batch):
        """Mean embeddings only; no sampling."""
        with nn.no_grad():
            h = self.networks["trunk"](nn.Tensor(batch))
            return self.networks["mu_head"](h).data

    def encode_log_var_batch(self, batch):
        with nn.no_grad():
            h = self.networks["trunk"](nn.Tensor(batch))
            return self.networks["log_var_head"](h).data

    def decode_batch(self, z):
        with nn.no_grad():
            return self.decode_tensor(nn.Tensor(np.asarray(z, dtype=self.params[0].dtype))).data

    def reconstruct_batch(self, batch, eps=None):
        """Decode ``mu + sigma * eps``; ``eps=None`` decodes the mean (eps = 0)."""
        with nn.no_grad():
            x = nn.Tensor(batch)
            mu, log_var = self.encode_tensors(x)
            if eps is None:
                z = mu
            else:
                z = self.reparameterize(mu, log_var, eps)
            return self.decode_tensor(z).data


class SiameseModel(_Model):
    kind = "Siamese"
    config_cls = SiameseConfig

    @staticmethod
    def build_specs(config):
        return siamese_specs(config)

    @property
    def margin(self):
        return self.config.margin

    def embed_tensor(self, x):
        return self.networks["embedding"](x)

    def embed_batch(self, batch):
        with nn.no_grad():
            return self.embed_tensor(nn.Tensor(batch)).data

    def embed(self, frames):
        return self.embed_batch(self.prepare(frames))

    def pair_distance(self, xa, xb):
        """Distances between matching rows of two batches; both pass through one network."""
        n = xa.shape[0]
        emb = self.embed_tensor(nn.Tensor(np.concatenate([xa, xb])))
        return nn.row_distance(emb[:n], emb[n:], eps=1e-12)

    def distance(self, a, b):
        ea, eb = self.embed([a, b])
        return embedding_distance(ea, eb)


def embedding_distance(ea, eb):
    """Euclidean norm of the difference of two embeddings, in float64."""
    diff = np.asarray(ea, dtype=np.float64) - np.asarray(eb, dtype=np.float64)
    return float(np.sqrt(np.dot(diff, diff)))


MODEL_CLASSES = {"AE": AEModel, "VAE": VAEModel, "Siamese": SiameseModel}


def model_from_bytes(data, source="<bytes>"):
    if len(data) < 11 or data[:4] != WEIGHTS_MAGIC:
        raise IndexFormatError(f"{source}: not a weights file (bad magic)")
    version, code, block_len = struct.unpack_from("<HBI", data, 4)
    if version != WEIGHTS_VERSION:
        raise IndexFormatError(f"{source}: unsupported weights version {version}")
    if code not in KIND_NAMES:
        raise IndexFormatError(f"{source}: unknown model kind {code}")
    start = 11
    if len(data) < start + block_len:
        raise TruncatedPayloadError(f"{source}: truncated spec block")
    block = json.loads(data[start:start + block_len].decode("utf-8"))
    cls = MODEL_CLASSES[KIND_NAMES[code]]
    model = cls(_config_from_json(cls.config_cls, block["config"]))
    saved = {name: [L.LayerSpec.from_dict(d) for d in specs] for name, specs in block["networks"].items()}
    if saved != model.specs:
        raise IndexFormatError(f"{source}: layer table does not match the stored config")
    offset = start + block_len
    for p in model.params:
        nbytes = p.data.size * 4
        if len(data) < offset + nbytes:
            raise TruncatedPayloadError(f"{source}: truncated parameter payload")
        p.data = np.frombuffer(data, dtype="<f4", count=p.data.size, offset=offset).reshape(p.shape).astype(np.float32)
        offset += nbytes
    if offset != len(data):
        raise IndexFormatError(f"{source}: {len(data) - offset} trailing bytes after parameters")
    model._checksum = hashlib.sha256(data).digest()
    return model


def load_model(path):
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read weights file {path}: {exc}") from exc
    return model_from_bytes(data, str(path))


def save_model(model, path):
    model.save(path)


# training -----------------------------------------------------------------

def _check_corpus(corpus):
    if corpus is None or len(corpus) == 0:
        raise DataError("training corpus is empty")


def _apply(model, state):
    params = model.params
    nn.optimizer_step(state, [p.data for p in params], [p.grad for p in params], model.param_names)
    model.zero_grad()
    model.invalidate()


@contextmanager
def _diverged_at(epoch):
    """Re-raise NaN/inf failures inside a training step with the epoch attached."""
    try:
        yield
    except NonFiniteError as exc:
        raise TrainingDivergedError(epoch, math.nan, str(exc)) from exc


def _finite(loss, epoch):
    value = float(loss)
    if not math.isfinite(value):
        raise TrainingDivergedError(epoch, value)
    return value


def _finish_epoch(report, epoch, total, count, started, model=None, on_epoch=None):
    loss = total / max(count, 1)
    if not math.isfinite(loss):
        raise TrainingDivergedError(epoch, loss)
    report.losses.append(loss)
    report.epochs = epoch + 1
    report.seconds = time.perf_counter() - started
    log.debug("epoch %d loss %.6f", epoch, loss)
    if on_epoch is not None:
        on_epoch(epoch, model, report)


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    for s in range(0, n, batch_size):
        yield order[s:s + batch_size]


def ae_train(corpus, config=AEConfig(), train=None, model=None, on_epoch=None):
    """Fit a convolutional AE with mean BCE reconstruction loss and Adadelta."""
    train = train or TrainConfig()
    _check_corpus(corpus)
    model = model or AEModel(config, seed=train.seed)
    x = corpus.stack(model.input_size)
    state = nn.adadelta() if train.lr is None else nn.adadelta(lr=train.lr)
    rng = np.random.default_rng([train.seed, 2])
    report = TrainReport(seed=train.seed)
    started = time.perf_counter()
    for epoch in range(train.epochs):
        total = 0.0
        for idx in _batches(len(x), train.batch_size, rng):
            with _diverged_at(epoch):
                loss = model.loss(x[idx])
                value = _finite(loss, epoch)
                loss.backward()
                _apply(model, state)
            total += value * len(idx)
        _finish_epoch(report, epoch, total, len(x), started, model, on_epoch)
    report.seconds = time.perf_counter() - started
    return model, report


def vae_train(corpus, config=VAEConfig(), train=None, model=None, on_epoch=None):
    """Fit a VAE (reconstruction + beta * KL) with Adam and reparameterised sampling."""
    train = train or TrainConfig()
    _check_corpus(corpus)
    model = model or VAEModel(config, seed=train.seed)
    x = corpus.stack(model.input_size)
    state = nn.adam(lr=1e-3 if train.lr is None else train.lr)
    rng = np.random.default_rng([train.seed, 2])
    noise = np.random.default_rng([train.seed, 3])
    report = TrainReport(seed=train.seed, components={"reconstruction": [], "kl": []})
    started = time.perf_counter()
    for epoch in range(train.epochs):
        total = rec_total = kl_total = 0.0
        for idx in _batches(len(x), train.batch_size, rng):
            eps = noise.standard_normal((len(idx), model.latent_dim)).astype(x.dtype)
            with _diverged_at(epoch):
                loss, rec, kl = model.loss_terms(x[idx], eps, train.beta)
                value = _finite(loss, epoch)
                loss.backward()
                _apply(model, state)
            total += value * len(idx)
            rec_total += float(rec) * len(idx)
            kl_total += float(kl) * len(idx)
        report.components["reconstruction"].append(rec_total / len(x))
        report.components["kl"].append(kl_total / len(x))
        _finish_epoch(report, epoch, total, len(x), started, model, on_epoch)
    report.seconds = time.perf_counter() - started
    return model, report


def siamese_train(corpus, pairs, config=SiameseConfig(), train=None, model=None, on_epoch=None):
    """Fit the shared-weight embedding on labeled pairs with the contrastive loss and Adam."""
    train = train or TrainConfig(epochs=1000, iterations=100)
    _check_corpus(corpus)
    pairs = list(pairs)
    labels = {p.y for p in pairs}
    if labels != {0, 1}:
        raise ValueError(f"pair stream must contain both similar and dissimilar pairs, got labels {sorted(labels)}")
    model = model or SiameseModel(config, seed=train.seed)
    x = corpus.stack(model.input_size)
    pos = {fid: i for i, fid in enumerate(corpus.ids)}
    try:
        ia = np.array([pos[p.a] for p in pairs])
        ib = np.array([pos[p.b] for p in pairs])
    except KeyError as exc:
        raise DataError(f"pair references unknown frame {exc.args[0]!r}") from exc
    y = np.array([p.y for p in pairs], dtype=x.dtype)
    state = nn.adam(lr=0.005 if train.lr is None else train.lr)
    rng = np.random.default_rng([train.seed, 2])
    order, cursor = rng.permutation(len(pairs)), 0
    report = TrainReport(seed=train.seed)
    started = time.perf_counter()
    for epoch in range(train.epochs):
        total = 0.0
        for _ in range(train.iterations):
            if cursor + train.batch_size > len(order):
                order, cursor = rng.permutation(len(pairs)), 0
            idx = order[cursor:cursor + train.batch_size]
            cursor += train.batch_size
            with _diverged_at(epoch):
                d = model.pair_distance(x[ia[idx]], x[ib[idx]])
                loss = nn.contrastive_loss(d, y[idx], model.margin)
                value = _finite(loss, epoch)
                loss.backward()
                _apply(model, state)
            total += value
        _finish_epoch(report, epoch, total, train.iterations, started, model, on_epoch)
    report.seconds = time.perf_counter() - started
    return model, report


# single-frame helpers -----------------------------------------------------

def ae_encode(model, frame):
    return model.encode_batch(model.prepare([frame]))[0]


def vae_encode_mu(model, frame):
    return model.encode_batch(model.prepare([frame]))[0]


def encode(model, frame):
    """Latent used for retrieval: AE bottleneck or VAE mean."""
    return model.encode_batch(model.prepare([frame]))[0]


def siamese_distance(model, a, b):
    return model.distance(a, b)


def with_config(cfg, **overrides):
    return replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
