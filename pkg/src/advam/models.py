"""Generator (U-Net encoder-decoder), discriminator and classifier networks,
their forward passes, and the checkpoint file format."""
from contextlib import contextmanager
from dataclasses import asdict, dataclass
import json
import struct

import numpy as np

from . import layers as L
from . import numerics as nx
from .config import ConfigError, ModelConfig
from .numerics import ShapeError, Tensor


@dataclass
class GeneratorNet:
    encoder_layers: list
    decoder_layers: list
    input_shape: tuple  # (1, F, T)
    stride_axis: str = "freq"
    slope: float = L.DEFAULT_SLOPE

    @property
    def depth(self):
        return len(self.encoder_layers)

    @property
    def skip_map(self):
        """(decoder index, encoder index) pairs joined by concatenation."""
        n = self.depth
        return [(j, n - 1 - j) for j in range(1, n)]

    @property
    def encoder_channels(self):
        return [p.out_units for p in self.encoder_layers]

    def spatial_shapes(self):
        """Spatial (H, W) of the input and of every encoder output."""
        h, w = self.input_shape[1:]
        shapes = [(h, w)]
        for p in self.encoder_layers:
            sh, sw = p.stride
            h, w = -(-h // sh), -(-w // sw)
            shapes.append((h, w))
        return shapes

    @property
    def bottleneck_shape(self):
        return (self.encoder_channels[-1],) + self.spatial_shapes()[-1]

    @property
    def h_size(self):
        c, h, w = self.bottleneck_shape
        return c * h * w

    def encoder_parameters(self):
        return [t for p in self.encoder_layers for t in p.parameters()]

    def decoder_parameters(self):
        return [t for p in self.decoder_layers for t in p.parameters()]

    def parameters(self):
        return self.encoder_parameters() + self.decoder_parameters()

    def layers(self):
        return list(self.encoder_layers) + list(self.decoder_layers)


@dataclass
class DiscriminatorNet:
    hidden: L.LayerParams
    output: L.LayerParams
    slope: float = L.DEFAULT_SLOPE

    def parameters(self):
        return self.hidden.parameters() + self.output.parameters()

    def layers(self):
        return [self.hidden, self.output]


@dataclass
class ClassifierNet:
    hidden: list
    output: L.LayerParams

    @property
    def num_classes(self):
        return self.output.out_units

    def parameters(self):
        return [t for p in self.hidden for t in p.parameters()] + self.output.parameters()

    def layers(self):
        return list(self.hidden) + [self.output]


@dataclass
class Networks:
    generator: GeneratorNet
    discriminator: DiscriminatorNet
    classifier: ClassifierNet
    arch: dict

    def layers(self):
        return self.generator.layers() + self.discriminator.layers() + self.classifier.layers()

    def parameters(self):
        return [t for p in self.layers() for t in p.parameters()]


def channel_schedule(depth, base, cap=512):
    return [min(base * 2 ** i, cap) for i in range(depth)]


def check_generator_shape(feat_dim, frames, depth, stride_axis="freq"):
    size = feat_dim if stride_axis == "freq" else frames
    if size % (2 ** depth) != 0:
        raise ConfigError(
            f"{stride_axis} axis of size {size} cannot be halved {depth} times without remainder"
        )


def build_generator(rng, feat_dim, frames, depth=4, base_channels=16, max_channels=512,
                    kernel=3, stride_axis="freq", slope=L.DEFAULT_SLOPE):
    check_generator_shape(feat_dim, frames, depth, stride_axis)
    stride = (2, 1) if stride_axis == "freq" else (1, 2)
    k = (kernel, kernel)
    chans = channel_schedule(depth, base_channels, max_channels)
    enc, c_in = [], 1
    for c in chans:
        enc.append(L.init_conv(rng, c_in, c, k, stride, "leaky_relu"))
        c_in = c
    dec = []
    for j in range(depth):
        mirrored = chans[depth - 1 - j]
        n_in = mirrored if j == 0 else 2 * mirrored
        n_out = chans[depth - 2 - j] if j < depth - 1 else 1
        act = "leaky_relu" if j < depth - 1 else "linear"
        dec.append(L.init_tconv(rng, n_in, n_out, k, stride, act))
    return GeneratorNet(enc, dec, (1, feat_dim, frames), stride_axis, slope)


def build_discriminator(rng, in_size, hidden=64, slope=L.DEFAULT_SLOPE):
    return DiscriminatorNet(
        L.init_dense(rng, in_size, hidden, "leaky_relu"),
        L.init_dense(rng, hidden, 1, "linear"),
        slope,
    )


def build_classifier(rng, in_size, num_classes, hidden=128, dropout_rate=0.3):
    h1 = L.init_dense(rng, in_size, hidden, "relu", dropout_rate)
    h2 = L.init_dense(rng, hidden, hidden, "relu", dropout_rate)
    return ClassifierNet([h1, h2], L.init_dense(rng, hidden, num_classes, "linear"))


def architecture(model_cfg, feat_dim, frames, num_classes):
    return {"model": asdict(model_cfg), "feat_dim": feat_dim, "frames": frames,
            "num_classes": num_classes}


def build_networks(rng, model_cfg: ModelConfig, feat_dim, frames, num_classes):
    """Initialise G, D and C in that order from one RNG stream."""
    g = build_generator(rng, feat_dim, frames, model_cfg.depth, model_cfg.base_channels,
                        model_cfg.max_channels, model_cfg.kernel, model_cfg.stride_axis,
                        model_cfg.slope)
    d = build_discriminator(rng, feat_dim * frames, model_cfg.d_hidden, model_cfg.slope)
    c = build_classifier(rng, g.h_size, num_classes, model_cfg.c_hidden, model_cfg.c_dropout)
    return Networks(g, d, c, architecture(model_cfg, feat_dim, frames, num_classes))


@contextmanager
def frozen(*modules):
    """Treat the parameters of ``modules`` as constants inside the block."""
    params = [t for m in modules for t in m.parameters()]
    saved = [t.requires_grad for t in params]
    for t in params:
        t.requires_grad = False
    try:
        yield
    finally:
        for t, flag in zip(params, saved):
            t.requires_grad = flag


def _as_batch(g, x):
    if not isinstance(x, Tensor):
        x = Tensor(x)
    if x.shape == tuple(g.input_shape):
        return nx.reshape(x, (1,) + x.shape), True
    if x.ndim != 4 or x.shape[1:] != tuple(g.input_shape):
        raise ShapeError(f"generator expects {g.input_shape} inputs, got {x.shape}")
    return x, False


def _encode(g, x):
    acts = [x]
    for p in g.encoder_layers:
        acts.append(L.apply_layer(p, acts[-1], slope=g.slope))
    return acts


def encode(g, x):
    """Bottleneck vector h (N x h_size) without running the decoder."""
    xb, single = _as_batch(g, x)
    code = _encode(g, xb)[-1]
    h = nx.reshape(code, (code.shape[0], -1))
    return nx.reshape(h, (h.shape[1],)) if single else h


def generator_trace(g, x):
    """Encoder activations (input first) and decoder outputs for a batch ``x``."""
    acts = _encode(g, x)
    n = g.depth
    y, outs = acts[-1], []
    for j, p in enumerate(g.decoder_layers):
        if j > 0:
            y = L.concat_channels(y, acts[n - j])
        y = L.apply_layer(p, y, slope=g.slope, output_size=acts[n - 1 - j].shape[2:])
        outs.append(y)
    return acts, outs


def generator_forward(g, x):
    """Return (x_hat, h) from one pass; x_hat has the shape of ``x``."""
    xb, single = _as_batch(g, x)
    acts, outs = generator_trace(g, xb)
    code, y = acts[-1], outs[-1]
    h = nx.reshape(code, (code.shape[0], -1))
    if single:
        return nx.reshape(y, y.shape[1:]), nx.reshape(h, (h.shape[1],))
    return y, h


def discriminator_forward(d, s):
    """One unbounded score per sample, shape (N,)."""
    if not isinstance(s, Tensor):
        s = Tensor(s)
    width = d.hidden.in_units
    if s.size % width != 0:
        raise ShapeError(f"discriminator expects samples of {width} values, got {s.shape}")
    flat = nx.reshape(s, (s.size // width, width))
    z = L.apply_layer(d.hidden, flat, slope=d.slope)
    out = L.apply_layer(d.output, z)
    return nx.reshape(out, (out.shape[0],))


def classifier_logits(c, h, mode="eval", rng=None):
    if not isinstance(h, Tensor):
        h = Tensor(h)
    single = h.ndim == 1
    if single:
        h = nx.reshape(h, (1, h.shape[0]))
    if h.ndim != 2 or h.shape[1] != c.hidden[0].in_units:
        raise ShapeError(f"classifier expects h of length {c.hidden[0].in_units}, got {h.shape}")
    z = h
    for p in c.hidden:
        z = L.apply_layer(p, z, mode, rng)
    logits = L.apply_layer(c.output, z)
    return nx.reshape(logits, (logits.shape[1],)) if single else logits


def classifier_forward(c, h, mode="eval", rng=None):
    """Posterior over the K classes for each row of ``h``."""
    return L.softmax(classifier_logits(c, h, mode, rng))


def acoustic_model_posteriors(g, c, x):
    """Test-time model: encoder of G followed by C, without D or the decoder."""
    with nx.no_grad():
        return classifier_forward(c, encode(g, x), "eval").data


# checkpoints ------------------------------------------------------------------------

MAGIC = b"ADVAMCKP"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _write_blob(fh, arr):
    arr = np.ascontiguousarray(arr, dtype="<f8")
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(arr.tobytes())


def _read_blob(fh):
    (ndim,) = struct.unpack("<I", _read(fh, 4))
    shape = struct.unpack(f"<{ndim}I", _read(fh, 4 * ndim))
    count = int(np.prod(shape)) if ndim else 1
    return np.frombuffer(_read(fh, 8 * count), dtype="<f8").reshape(shape).astype(np.float64)


def _read(fh, n):
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointError("truncated checkpoint")
    return buf


def _write_str(fh, s):
    b = s.encode()
    fh.write(struct.pack("<I", len(b)))
    fh.write(b)


def _read_str(fh):
    (n,) = struct.unpack("<I", _read(fh, 4))
    return _read(fh, n).decode()


def save_checkpoint(path, nets, config_digest, corpus_digest, extras=(), meta=None):
    """Header, then one shape-prefixed float64 blob per tensor in architecture order.

    ``extras`` are further arrays (optimizer moments) and ``meta`` a small
    JSON-able dict, both appended after the network weights.
    """
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        _write_str(fh, config_digest)
        _write_str(fh, corpus_digest)
        _write_str(fh, json.dumps(nets.arch, sort_keys=True))
        params = nets.parameters()
        fh.write(struct.pack("<I", len(params)))
        for t in params:
            _write_blob(fh, t.data)
        extras = list(extras)
        fh.write(struct.pack("<I", len(extras)))
        for arr in extras:
            _write_blob(fh, arr)
        _write_str(fh, json.dumps(meta or {}, sort_keys=True))


@dataclass
class Checkpoint:
    nets: Networks
    config_digest: str
    corpus_digest: str
    extras: list
    meta: dict


def load_checkpoint(path, expected_digest=None, expected_corpus=None):
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise CheckpointError(f"cannot open checkpoint {path}: {exc}") from None
    with fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise CheckpointError(f"{path} is not a checkpoint file")
        (version,) = struct.unpack("<I", _read(fh, 4))
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        digest = _read_str(fh)
        corpus = _read_str(fh)
        if expected_digest is not None and digest != expected_digest:
            raise CheckpointError(
                f"config digest mismatch: checkpoint {digest[:12]} vs expected {expected_digest[:12]}"
            )
        if expected_corpus is not None and corpus != expected_corpus:
            raise CheckpointError(
                f"corpus digest mismatch: checkpoint {corpus[:12]} vs corpus {expected_corpus[:12]}"
            )
        arch = json.loads(_read_str(fh))
        nets = build_networks(np.random.default_rng(0), ModelConfig(**arch["model"]),
                              arch["feat_dim"], arch["frames"], arch["num_classes"])
        params = nets.parameters()
        (count,) = struct.unpack("<I", _read(fh, 4))
        if count != len(params):
            raise CheckpointError(f"checkpoint holds {count} tensors, architecture needs {len(params)}")
        for t in params:
            arr = _read_blob(fh)
            if arr.shape != t.shape:
                raise CheckpointError(f"tensor shape {arr.shape} does not match {t.shape}")
            t.data[...] = arr
        (n_extra,) = struct.unpack("<I", _read(fh, 4))
        extras = [_read_blob(fh) for _ in range(n_extra)]
        meta = json.loads(_read_str(fh))
    return Checkpoint(nets, digest, corpus, extras, meta)
