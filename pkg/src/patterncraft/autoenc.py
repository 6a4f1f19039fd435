"""Label-conditioned convolutional autoencoder.

Encoder: two 3x3 convs (the second at stride 2) with dropout in between,
flattening an 8x8x30 chunk to 512 structure features; the pattern-label
one-hot (n features) is concatenated and a relu dense layer maps 512+n to the
512-wide embedding. The decoder mirrors it: dense back to 512+n, relu on the
structure half, sigmoid on the label head, then nearest-neighbor upsampling
and two transposed convs back to 8x8x30 with a sigmoid output. With n = 0 the
label concatenation and label head disappear entirely.

Training minimizes a single MSE over the concatenated structure and label
outputs until the epoch loss stops improving. Transfer initialization copies
a trained no-labels parent's conv weights verbatim and the overlapping dense
sub-blocks, with small-noise rows/columns for the new label features.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .chunks import CHUNK_FEATURES, Chunk, LabelVocabulary, decode_chunk
from .levels import LevelGrid
from .nn import Adam, Conv2D, ConvTranspose2D, Dense, Dropout, Relu, ShapeMismatch, Sigmoid, Upsample2x
from .seeding import child_rng

WEIGHTS_MAGIC = b"PCWF"
WEIGHTS_VERSION = 1

EMBEDDING_SIZE = 512


class InvalidConfig(ValueError):
    pass


class EmptyDataset(ValueError):
    pass


class NotTrained(ValueError):
    pass


class UnknownLabel(ValueError):
    pass


class IncompatibleParent(ValueError):
    pass


@dataclass(frozen=True)
class AeConfig:
    n_labels: int
    embedding_size: int = EMBEDDING_SIZE
    conv_filters: tuple[int, int] = (32, 32)
    kernel: int = 3
    dropout_rate: float = 0.3
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 64
    convergence_tol: float = 1e-4
    convergence_patience: int = 10
    max_epochs: int = 2000
    seed: int = 0

    def to_dict(self) -> dict:
        d = self.__dict__.copy()
        d["conv_filters"] = list(self.conv_filters)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AeConfig":
        d = dict(d)
        d["conv_filters"] = tuple(d["conv_filters"])
        return cls(**d)


class AeNetwork:
    """The assembled encoder/decoder with explicit forward/backward."""

    def __init__(self, c_in: int, h: int, w: int, config: AeConfig, dtype=np.float32):
        if h % 2 or w % 2:
            raise InvalidConfig("input height and width must be even")
        f1, f2 = config.conv_filters
        k = config.kernel
        pad = k // 2
        rng = child_rng(config.seed, 0)
        self.c_in, self.h, self.w = c_in, h, w
        self.n_labels = config.n_labels
        self.conv1 = Conv2D(k, k, c_in, f1, 1, pad, rng, "he", dtype)
        self.drop = Dropout(config.dropout_rate)
        self.conv2 = Conv2D(k, k, f1, f2, 2, pad, rng, "he", dtype)
        self.h2, self.w2 = self.conv2.out_hw(*self.conv1.out_hw(h, w))
        if self.h2 * 2 != h or self.w2 * 2 != w:
            raise InvalidConfig("conv stack must halve the spatial extent exactly")
        self.struct_features = self.h2 * self.w2 * f2
        embed = config.embedding_size
        self.fc1 = Dense(self.struct_features + config.n_labels, embed, rng, "he", dtype)
        self.fc2 = Dense(embed, self.struct_features + config.n_labels, rng, "he", dtype)
        self.up = Upsample2x()
        self.dec1 = ConvTranspose2D(k, k, f2, f1, 1, pad, 0, rng, "he", dtype)
        self.dec2 = ConvTranspose2D(k, k, f1, c_in, 1, pad, 0, rng, "glorot", dtype)
        self.relu = Relu()
        self.sigmoid = Sigmoid()

    def spec(self) -> dict:
        return {"kind": "conv-autoencoder", "input": [self.h, self.w, self.c_in],
                "filters": [self.conv1.c_out, self.conv2.c_out], "kernel": self.conv1.kh,
                "embedding": self.fc1.n_out, "n_labels": self.n_labels}

    def spec_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.spec(), sort_keys=True).encode()).hexdigest()

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in (self.conv1, self.conv2, self.fc1, self.fc2, self.dec1, self.dec2):
            out.extend(layer.params())
        return out

    def set_params(self, ps: list[np.ndarray]) -> None:
        layers = (self.conv1, self.conv2, self.fc1, self.fc2, self.dec1, self.dec2)
        for i, layer in enumerate(layers):
            layer.set_params([p.copy() for p in ps[2 * i:2 * i + 2]])

    def forward(self, x_img: np.ndarray, x_lab: np.ndarray | None, train: bool = False,
                rng: np.random.Generator | None = None):
        if x_img.shape[1:] != (self.h, self.w, self.c_in):
            raise ShapeMismatch(f"expected input {self.h}x{self.w}x{self.c_in}, got {x_img.shape[1:]}")
        n = x_img.shape[0]
        if self.n_labels:
            if x_lab is None or x_lab.shape != (n, self.n_labels):
                raise ShapeMismatch(f"expected label input ({n}, {self.n_labels})")
        y, cv1 = self.conv1.forward(x_img)
        y, ca1 = self.relu.forward(y)
        y, cdp = self.drop.forward(y, train=train, rng=rng)
        y, cv2 = self.conv2.forward(y)
        y, ca2 = self.relu.forward(y)
        flat = y.reshape(n, self.struct_features)
        z = np.concatenate([flat, x_lab.astype(flat.dtype)], axis=1) if self.n_labels else flat
        e, cf1 = self.fc1.forward(z)
        e, ca3 = self.relu.forward(e)
        o, cf2 = self.fc2.forward(e)
        os_, ol = o[:, :self.struct_features], o[:, self.struct_features:]
        s, ca4 = self.relu.forward(os_)
        s4 = s.reshape(n, self.h2, self.w2, self.conv2.c_out)
        u, cup = self.up.forward(s4)
        d, cd1 = self.dec1.forward(u)
        d, ca5 = self.relu.forward(d)
        d, cd2 = self.dec2.forward(d)
        out_img, cs1 = self.sigmoid.forward(d)
        if self.n_labels:
            out_lab, cs2 = self.sigmoid.forward(ol)
        else:
            out_lab, cs2 = None, None
        cache = (cv1, ca1, cdp, cv2, ca2, cf1, ca3, cf2, ca4, cup, cd1, ca5, cd2, cs1, cs2, n)
        return out_img, out_lab, cache

    def backward(self, cache, d_img: np.ndarray, d_lab: np.ndarray | None) -> list[np.ndarray]:
        cv1, ca1, cdp, cv2, ca2, cf1, ca3, cf2, ca4, cup, cd1, ca5, cd2, cs1, cs2, n = cache
        g, _ = self.sigmoid.backward(d_img, cs1)
        g, g_dec2 = self.dec2.backward(g, cd2)
        g, _ = self.relu.backward(g, ca5)
        g, g_dec1 = self.dec1.backward(g, cd1)
        g, _ = self.up.backward(g, cup)
        g = g.reshape(n, self.struct_features)
        g, _ = self.relu.backward(g, ca4)
        if self.n_labels:
            gl, _ = self.sigmoid.backward(d_lab, cs2)
            g = np.concatenate([g, gl.astype(g.dtype)], axis=1)
        g, g_fc2 = self.fc2.backward(g, cf2)
        g, _ = self.relu.backward(g, ca3)
        g, g_fc1 = self.fc1.backward(g, cf1)
        if self.n_labels:
            g = g[:, :self.struct_features]
        g = g.reshape(n, self.h2, self.w2, self.conv2.c_out)
        g, _ = self.relu.backward(g, ca2)
        g, g_conv2 = self.conv2.backward(g, cv2)
        g, _ = self.drop.backward(g, cdp)
        g, _ = self.relu.backward(g, ca1)
        _, g_conv1 = self.conv1.backward(g, cv1)
        return g_conv1 + g_conv2 + g_fc1 + g_fc2 + g_dec1 + g_dec2


@dataclass
class AutoencoderModel:
    config: AeConfig
    net: AeNetwork
    vocabulary: LabelVocabulary | None = None
    training_log: list[float] = field(default_factory=list)
    provenance: dict = field(default_factory=lambda: {"kind": "scratch", "parent": None})

    @property
    def trained(self) -> bool:
        return bool(self.training_log)

    @property
    def epochs_run(self) -> int:
        return len(self.training_log)

    def model_id(self) -> str:
        h = hashlib.sha256(json.dumps(self.config.to_dict(), sort_keys=True).encode())
        for p in self.net.params():
            h.update(np.ascontiguousarray(p, dtype=np.float32).tobytes())
        return h.hexdigest()[:16]


def build(config: AeConfig, vocabulary: LabelVocabulary | None = None) -> AutoencoderModel:
    """Assemble the untrained architecture for the given label count."""
    if config.embedding_size != EMBEDDING_SIZE:
        raise InvalidConfig(f"embedding size is fixed at {EMBEDDING_SIZE}")
    if config.n_labels < 0:
        raise InvalidConfig("n_labels must be >= 0")
    if not 0.0 <= config.dropout_rate < 1.0:
        raise InvalidConfig("dropout rate must lie in [0, 1)")
    if config.batch_size < 1 or config.max_epochs < 1:
        raise InvalidConfig("batch size and max epochs must be positive")
    if config.n_labels and vocabulary is not None and len(vocabulary) != config.n_labels:
        raise InvalidConfig("n_labels does not match the vocabulary size")
    net = AeNetwork(30, 8, 8, config)
    if net.struct_features != EMBEDDING_SIZE:
        raise InvalidConfig("conv stack must flatten to exactly the embedding width")
    vocab = LabelVocabulary(list(vocabulary.names)) if vocabulary is not None else None
    return AutoencoderModel(config, net, vocab)


def _dataset_matrices(model: AutoencoderModel, dataset) -> tuple[np.ndarray, np.ndarray | None]:
    if not dataset:
        raise EmptyDataset("training dataset is empty")
    n_labels = model.config.n_labels
    imgs, labs = [], []
    for item in dataset:
        chunk, lab = item if isinstance(item, tuple) else (item, None)
        data = chunk.data if isinstance(chunk, Chunk) else np.asarray(chunk)
        imgs.append(data.astype(np.float32))
        if n_labels:
            if lab is None:
                lab = np.zeros(n_labels, dtype=np.float32)
            lab = np.asarray(lab, dtype=np.float32)
            if lab.shape != (n_labels,):
                raise ShapeMismatch(f"label vector must have length {n_labels}")
            labs.append(lab)
    X = np.stack(imgs)
    L = np.stack(labs) if n_labels else None
    return X, L


def train(model: AutoencoderModel, dataset) -> AutoencoderModel:
    """Minimize joint MSE until the epoch loss plateaus (or max_epochs).

    Stops once the relative improvement over the best epoch loss stays below
    convergence_tol for convergence_patience consecutive epochs. The training
    log records every epoch loss; (dataset order, config, seed) reproduce it
    exactly.
    """
    cfg = model.config
    X, L = _dataset_matrices(model, dataset)
    n = len(X)
    denom = float(CHUNK_FEATURES + cfg.n_labels)
    opt = Adam(model.net.params(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    rng_shuffle = child_rng(cfg.seed, 1)
    rng_drop = child_rng(cfg.seed, 2)
    best = np.inf
    stagnant = 0
    log: list[float] = []

    def epoch_loss() -> float:
        # infer-mode loss over the whole dataset; keeps the stop rule free of
        # dropout and batch-order noise
        sq = 0.0
        for start in range(0, n, 256):
            xb = X[start:start + 256]
            lb = L[start:start + 256] if L is not None else None
            out_img, out_lab, _ = model.net.forward(xb, lb, train=False)
            sq += float(np.sum((out_img.astype(np.float64) - xb) ** 2))
            if out_lab is not None:
                sq += float(np.sum((out_lab.astype(np.float64) - lb) ** 2))
        return sq / (n * denom)

    for _ in range(cfg.max_epochs):
        order = rng_shuffle.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb = X[idx]
            lb = L[idx] if L is not None else None
            out_img, out_lab, cache = model.net.forward(xb, lb, train=True, rng=rng_drop)
            di = out_img - xb
            scale = 2.0 / (len(idx) * denom)
            if out_lab is not None:
                grads = model.net.backward(cache, scale * di, scale * (out_lab - lb))
            else:
                grads = model.net.backward(cache, scale * di, None)
            opt.step(grads)
        loss = epoch_loss()
        log.append(loss)
        if best < np.inf and (best - loss) / max(best, 1e-12) < cfg.convergence_tol:
            stagnant += 1
        else:
            stagnant = 0
        best = min(best, loss)
        if stagnant >= cfg.convergence_patience:
            break
    model.training_log = log
    return model


def reconstruct(model: AutoencoderModel, chunk, label: np.ndarray | None = None):
    """Infer-mode forward pass; returns (structure 8x8x30, labels n) in [0,1]."""
    if not model.trained:
        raise NotTrained("model has not been trained")
    data = chunk.data if isinstance(chunk, Chunk) else np.asarray(chunk)
    x = data.astype(np.float32)[None]
    lb = None
    if model.config.n_labels:
        lab = np.zeros(model.config.n_labels, dtype=np.float32) if label is None else np.asarray(label, dtype=np.float32)
        if lab.shape != (model.config.n_labels,):
            raise ShapeMismatch(f"label vector must have length {model.config.n_labels}")
        lb = lab[None]
    out_img, out_lab, _ = model.net.forward(x, lb, train=False)
    return out_img[0], (out_lab[0] if out_lab is not None else np.zeros(0, dtype=np.float32))


def reconstruct_batch(model: AutoencoderModel, X: np.ndarray, L: np.ndarray | None = None):
    if not model.trained:
        raise NotTrained("model has not been trained")
    out_img, out_lab, _ = model.net.forward(X.astype(np.float32),
                                            None if L is None else L.astype(np.float32), train=False)
    return out_img, out_lab


@dataclass(frozen=True)
class Generation:
    grid: LevelGrid
    predicted_labels: list[tuple[str, float]]  # sorted by strength, descending
    label_vector: list[float]                  # raw label head, vocabulary order


def generate(model: AutoencoderModel, context, desired_label: int, threshold: float = 0.5) -> Generation:
    """Condition on the desired pattern, decode tiles, report the label head.

    The label head, sorted by strength, is the model's own explanation of
    what it believes it produced.
    """
    if not model.trained:
        raise NotTrained("model has not been trained")
    n = model.config.n_labels
    if n == 0 or model.vocabulary is None:
        raise UnknownLabel("model was built without labels")
    if not 0 <= desired_label < n:
        raise UnknownLabel(f"label index {desired_label} outside vocabulary of size {n}")
    onehot = np.zeros(n, dtype=np.float32)
    onehot[desired_label] = 1.0
    structure, labels = reconstruct(model, context, onehot)
    grid = decode_chunk(structure.astype(np.float64), threshold)
    named = sorted(((model.vocabulary.names[i], float(labels[i])) for i in range(n)),
                   key=lambda t: (-t[1], t[0]))
    return Generation(grid, named, [float(v) for v in labels])


def transfer(parent: AutoencoderModel, config: AeConfig, vocabulary: LabelVocabulary) -> AutoencoderModel:
    """Initialize a labeled child from a trained no-labels parent.

    Conv and deconv weights are copied verbatim; dense blocks copy the
    overlapping 512-wide sub-block; rows/columns for the n new label features
    start at N(0, 0.01^2); label-head biases start at zero.
    """
    if not parent.trained:
        raise IncompatibleParent("parent must be trained")
    if parent.config.n_labels != 0:
        raise IncompatibleParent("parent must be the no-labels variant")
    if config.n_labels <= 0:
        raise IncompatibleParent("child config must have labels")
    if (config.conv_filters != parent.config.conv_filters or config.kernel != parent.config.kernel
            or config.embedding_size != parent.config.embedding_size):
        raise IncompatibleParent("conv geometry differs from the parent")
    child = build(config, vocabulary)
    rng = child_rng(config.seed, 3)
    s = child.net.struct_features
    n = config.n_labels
    for src, dst in ((parent.net.conv1, child.net.conv1), (parent.net.conv2, child.net.conv2),
                     (parent.net.dec1, child.net.dec1), (parent.net.dec2, child.net.dec2)):
        dst.w = src.w.copy()
        dst.b = src.b.copy()
    child.net.fc1.w[:s, :] = parent.net.fc1.w
    child.net.fc1.w[s:, :] = (rng.standard_normal((n, child.net.fc1.n_out)) * 0.01).astype(np.float32)
    child.net.fc1.b = parent.net.fc1.b.copy()
    child.net.fc2.w[:, :s] = parent.net.fc2.w
    child.net.fc2.w[:, s:] = (rng.standard_normal((child.net.fc2.n_in, n)) * 0.01).astype(np.float32)
    child.net.fc2.b[:s] = parent.net.fc2.b
    child.net.fc2.b[s:] = 0.0
    child.provenance = {"kind": "transfer", "parent": parent.model_id()}
    return child


# --- weight files ----------------------------------------------------------

def save_model(model: AutoencoderModel, path) -> None:
    """Versioned binary: header JSON + raw parameter buffers, plus a sidecar
    ``<path>.manifest.json`` with config, vocabulary hash, provenance, and
    final loss. Byte-identical for identical models."""
    params = model.net.params()
    header = {
        "format": "patterncraft-weights",
        "version": WEIGHTS_VERSION,
        "spec_hash": model.net.spec_hash(),
        "spec": model.net.spec(),
        "config": model.config.to_dict(),
        "vocabulary": model.vocabulary.names if model.vocabulary else None,
        "provenance": model.provenance,
        "training_log": model.training_log,
        "shapes": [list(p.shape) for p in params],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(WEIGHTS_MAGIC)
        fh.write(struct.pack("<II", WEIGHTS_VERSION, len(blob)))
        fh.write(blob)
        for p in params:
            fh.write(np.ascontiguousarray(p, dtype=np.float32).tobytes())
    manifest = {
        "config": model.config.to_dict(),
        "vocabulary_hash": model.vocabulary.hash() if model.vocabulary else None,
        "provenance": model.provenance,
        "final_loss": model.training_log[-1] if model.training_log else None,
    }
    with open(str(path) + ".manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)


def load_model(path, expected_spec_hash: str | None = None, transfer_mode: bool = False) -> AutoencoderModel:
    with open(path, "rb") as fh:
        if fh.read(4) != WEIGHTS_MAGIC:
            raise ValueError("not a weights file")
        version, hlen = struct.unpack("<II", fh.read(8))
        if version != WEIGHTS_VERSION:
            raise ValueError(f"unsupported weights version {version}")
        header = json.loads(fh.read(hlen).decode("utf-8"))
        config = AeConfig.from_dict(header["config"])
        vocab = LabelVocabulary(header["vocabulary"]) if header["vocabulary"] else None
        model = build(config, vocab)
        if model.net.spec_hash() != header["spec_hash"]:
            raise ValueError("stored architecture hash does not match its config")
        if expected_spec_hash and header["spec_hash"] != expected_spec_hash and not transfer_mode:
            raise ValueError("architecture hash mismatch (pass transfer_mode to adapt weights)")
        params = []
        for shape in header["shapes"]:
            count = int(np.prod(shape))
            buf = fh.read(4 * count)
            params.append(np.frombuffer(buf, dtype=np.float32).reshape(shape).copy())
        model.net.set_params(params)
        model.training_log = list(header["training_log"])
        model.provenance = header["provenance"]
    return model
