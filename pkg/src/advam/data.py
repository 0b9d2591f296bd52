"""Synthetic clean/noisy frame corpus, normalization, context splicing and
minibatch sampling.

Each class owns a smooth spectral template; clean frames wander around it
with a slow AR(1) jitter and noisy frames add colored noise scaled to an
exact per-utterance SNR.
"""
from dataclasses import asdict, dataclass, field
import json
import math
import struct

import numpy as np

from .config import DataConfig, data_digest

SPLITS = ("train", "dev", "test")
NOISE_KINDS = ("bus", "cafe", "pedestrian", "street")
STD_FLOOR = 1e-8


class DataError(ValueError):
    pass


@dataclass
class Utterance:
    id: str
    clean_frames: np.ndarray  # T x F
    noisy_frames: np.ndarray  # T x F
    labels: np.ndarray        # T
    snr_db: float
    noise_kind: str

    def __post_init__(self):
        t = self.clean_frames.shape[0]
        if self.noisy_frames.shape != self.clean_frames.shape or self.labels.shape != (t,):
            raise DataError(f"utterance {self.id}: misaligned clean/noisy/labels")

    @property
    def num_frames(self):
        return self.clean_frames.shape[0]


@dataclass
class Corpus:
    num_classes: int
    feat_dim: int
    splits: dict
    config: DataConfig
    digest: str
    mean: np.ndarray = None
    std: np.ndarray = None

    def __post_init__(self):
        if self.mean is None and self.splits.get("train"):
            self.mean, self.std = train_stats(self.splits["train"])

    def counts(self):
        return tuple(len(self.splits.get(s, [])) for s in SPLITS)


# synthesis ------------------------------------------------------------------------------

def _class_templates(rng, k, f):
    grid = np.arange(f)
    tilt = np.linspace(0.6, -0.6, f)
    templates = np.empty((k, f))
    for c in range(k):
        curve = np.zeros(f)
        for _ in range(3):
            centre = rng.uniform(0, f - 1)
            width = rng.uniform(1.5, 0.15 * f + 1.5)
            curve += rng.uniform(0.6, 1.4) * np.exp(-0.5 * ((grid - centre) / width) ** 2)
        curve += tilt
        templates[c] = curve - curve.mean()
    return templates


def _smooth_freq(x, width):
    if width <= 1:
        return x
    kernel = np.hanning(width + 2)[1:-1]
    kernel /= kernel.sum()
    pad = width // 2
    xp = np.pad(x, ((0, 0), (pad, width - 1 - pad)), mode="edge")
    out = np.empty_like(x)
    for i in range(x.shape[0]):
        out[i] = np.convolve(xp[i], kernel, mode="valid")
    return out


def _ar1(rng, t, f, rho, sigma):
    eps = rng.standard_normal((t, f)) * sigma
    out = np.empty((t, f))
    out[0] = eps[0]
    innov = math.sqrt(1.0 - rho * rho)
    for i in range(1, t):
        out[i] = rho * out[i - 1] + innov * eps[i]
    return out


def _segment_labels(rng, t, k):
    labels = np.empty(t, dtype=np.int64)
    pos, prev = 0, -1
    while pos < t:
        dur = int(rng.integers(4, 13))
        c = int(rng.integers(0, k - 1))
        if c >= prev >= 0:
            c += 1
        labels[pos:pos + dur] = c
        pos += dur
        prev = c
    return labels


def _noise(rng, kind, t, f, templates):
    grid = np.linspace(0.0, 1.0, f)
    if kind == "bus":
        env, rho, width = np.exp(-3.0 * grid), 0.95, 5
        base = _ar1(rng, t, f, rho, 1.0)
    elif kind == "cafe":
        # babble: random mixtures of class templates drifting over time
        w = _ar1(rng, t, templates.shape[0], 0.8, 1.0)
        base = w @ templates / math.sqrt(templates.shape[0]) + 0.3 * _ar1(rng, t, f, 0.5, 1.0)
        env, width = np.ones(f), 1
    elif kind == "pedestrian":
        env, rho, width = np.exp(-0.5 * ((grid - 0.45) / 0.2) ** 2) + 0.1, 0.8, 3
        base = _ar1(rng, t, f, rho, 1.0)
    else:
        env, rho, width = 0.3 + grid, 0.3, 2
        base = _ar1(rng, t, f, rho, 1.0)
        bursts = rng.random(t) < 0.1
        base[bursts] *= 3.0
    noise = _smooth_freq(base, width) * env
    return noise - noise.mean()


def mix_at_snr(clean, noise, snr_db):
    """Scale ``noise`` so that 10 log10(P_clean / P_noise) equals ``snr_db``."""
    if math.isinf(snr_db) and snr_db > 0:
        return clean.copy()
    p_clean = np.mean(clean ** 2)
    p_noise = np.mean(noise ** 2)
    gain = math.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0)))
    return clean + gain * noise


def measured_snr(utt):
    resid = utt.noisy_frames - utt.clean_frames
    p_noise = np.mean(resid ** 2)
    if p_noise == 0:
        return math.inf
    return 10.0 * math.log10(np.mean(utt.clean_frames ** 2) / p_noise)


def synthesize_corpus(cfg: DataConfig):
    cfg.validate()
    k, f = cfg.num_classes, cfg.feat_dim
    templates = _class_templates(np.random.default_rng([cfg.seed, 7]), k, f)
    sizes = {"train": cfg.n_train, "dev": cfg.n_dev, "test": cfg.n_test}
    splits = {}
    for si, split in enumerate(SPLITS):
        rng = np.random.default_rng([cfg.seed, 100 + si])
        utts = []
        for u in range(sizes[split]):
            t = int(rng.integers(cfg.min_frames, cfg.max_frames + 1))
            labels = _segment_labels(rng, t, k)
            offset = rng.normal(0.0, 0.15, f)
            jitter = _smooth_freq(_ar1(rng, t, f, 0.9, 0.35), 3)
            clean = templates[labels] + offset + jitter
            kind = NOISE_KINDS[int(rng.integers(len(NOISE_KINDS)))]
            snr = float(cfg.snr_grid[int(rng.integers(len(cfg.snr_grid)))])
            noise = _noise(rng, kind, t, f, templates)
            noisy = mix_at_snr(clean, noise, snr)
            utts.append(Utterance(f"{split}_{u:05d}", clean, noisy, labels, snr, kind))
        splits[split] = utts
    return Corpus(k, f, splits, cfg, data_digest(cfg))


# normalization ----------------------------------------------------------------------------

def train_stats(train_utts):
    """Per-dimension mean/std of the noisy training frames."""
    frames = np.concatenate([u.noisy_frames for u in train_utts])
    return frames.mean(axis=0), frames.std(axis=0)


def normalize(corpus, frames):
    if corpus.mean is None:
        raise DataError("corpus has no training statistics")
    return (frames - corpus.mean) / np.maximum(corpus.std, STD_FLOOR)


def denormalize(corpus, frames):
    return frames * np.maximum(corpus.std, STD_FLOOR) + corpus.mean


# splicing ----------------------------------------------------------------------------------

def context_indices(num_frames, context):
    if context < 1 or context % 2 == 0:
        raise DataError(f"context must be a positive odd count, got {context}")
    if context > 2 * num_frames:
        raise DataError(f"context {context} exceeds twice the {num_frames} available frames")
    half = context // 2
    idx = np.arange(num_frames)[:, None] + np.arange(-half, half + 1)[None, :]
    return np.clip(idx, 0, num_frames - 1)


def splice_context(frames, context):
    """T x F frames -> T x 1 x F x context patches with edge replication."""
    frames = np.asarray(frames, dtype=np.float64)
    idx = context_indices(frames.shape[0], context)
    return np.ascontiguousarray(frames[idx].transpose(0, 2, 1)[:, None])


def center_frame(patches):
    return patches[:, 0, :, patches.shape[-1] // 2]


@dataclass
class SplitData:
    """One split flattened to frame level, normalized, with splice indices."""
    noisy: np.ndarray
    clean: np.ndarray
    labels: np.ndarray
    index: np.ndarray  # frames x context, into the flat arrays
    snr: np.ndarray
    kind: np.ndarray
    context: int
    utt_ids: list = field(default_factory=list)

    def __len__(self):
        return self.labels.shape[0]

    def patches(self, rows, source="noisy"):
        frames = self.noisy if source == "noisy" else self.clean
        return np.ascontiguousarray(frames[self.index[rows]].transpose(0, 2, 1)[:, None])


def prepare_split(corpus, split, context):
    utts = corpus.splits.get(split)
    if not utts:
        raise DataError(f"split {split!r} is empty or missing")
    noisy, clean, labels, index, snr, kind = [], [], [], [], [], []
    base = 0
    for u in utts:
        t = u.num_frames
        noisy.append(normalize(corpus, u.noisy_frames))
        clean.append(normalize(corpus, u.clean_frames))
        labels.append(u.labels)
        index.append(context_indices(t, context) + base)
        snr.append(np.full(t, u.snr_db))
        kind.append(np.full(t, NOISE_KINDS.index(u.noise_kind)))
        base += t
    return SplitData(
        np.concatenate(noisy), np.concatenate(clean), np.concatenate(labels),
        np.concatenate(index), np.concatenate(snr), np.concatenate(kind), context,
        [u.id for u in utts],
    )


# batching ----------------------------------------------------------------------------------

@dataclass
class Batch:
    noisy: np.ndarray
    labels: np.ndarray
    clean: np.ndarray
    rows: np.ndarray
    clean_rows: np.ndarray


def sample_batches(split, batch_size, shuffle_rng, clean_rng):
    """One epoch of batches: a permutation of the noisy frames, each paired with
    an equally sized clean batch drawn uniformly and independently."""
    n = len(split)
    if n == 0:
        raise DataError("cannot sample from an empty split")
    if batch_size > n:
        raise DataError(f"batch size {batch_size} exceeds split size {n}")
    order = shuffle_rng.permutation(n)
    for lo in range(0, n, batch_size):
        rows = order[lo:lo + batch_size]
        clean_rows = clean_rng.integers(0, n, size=len(rows))
        yield Batch(split.patches(rows), split.labels[rows], split.patches(clean_rows, "clean"),
                    rows, clean_rows)


# container file ------------------------------------------------------------------------------

MAGIC = b"ADVAMCRP"
VERSION = 1


def _pack_str(s):
    b = s.encode()
    return struct.pack("<I", len(b)) + b


def _entry(split_id, utt, offset):
    return (struct.pack("<B", split_id) + _pack_str(utt.id)
            + struct.pack("<QIdB", offset, utt.num_frames, utt.snr_db,
                          NOISE_KINDS.index(utt.noise_kind)))


def _block(utt):
    parts = []
    for arr in (utt.clean_frames, utt.noisy_frames):
        a = np.ascontiguousarray(arr, dtype="<f8")
        parts.append(struct.pack("<Q", a.size) + a.tobytes())
    lab = np.ascontiguousarray(utt.labels, dtype="<u4")
    parts.append(struct.pack("<Q", lab.size) + lab.tobytes())
    return b"".join(parts)


def write_corpus(path, corpus):
    """Write the binary container plus a ``<path>.manifest.txt`` summary."""
    entries = [(si, u) for si, s in enumerate(SPLITS) for u in corpus.splits.get(s, [])]
    header = (MAGIC + struct.pack("<IIIIII", VERSION, corpus.num_classes, corpus.feat_dim,
                                  *corpus.counts())
              + _pack_str(corpus.digest) + _pack_str(json.dumps(asdict(corpus.config), sort_keys=True)))
    blocks = [_block(u) for _, u in entries]
    table_len = sum(len(_entry(si, u, 0)) for si, u in entries)
    offset = len(header) + table_len
    table = []
    for (si, u), blk in zip(entries, blocks):
        table.append(_entry(si, u, offset))
        offset += len(blk)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(b"".join(table))
        fh.write(b"".join(blocks))
    with open(f"{path}.manifest.txt", "w") as fh:
        fh.write(f"# digest {corpus.digest} classes {corpus.num_classes} feat_dim {corpus.feat_dim}\n")
        for si, u in entries:
            fh.write(f"{SPLITS[si]} {u.id} {u.num_frames} {u.snr_db!r} {u.noise_kind}\n")


class _Reader:
    def __init__(self, buf):
        self.buf, self.pos = buf, 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise DataError("truncated corpus file")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self):
        (n,) = self.unpack("<I")
        return self.take(n).decode()

    def array(self, dtype, width):
        (n,) = self.unpack("<Q")
        return np.frombuffer(self.take(n * width), dtype=dtype)


def read_corpus(path):
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read corpus {path}: {exc}") from None
    r = _Reader(buf)
    if r.take(len(MAGIC)) != MAGIC:
        raise DataError(f"{path} is not a corpus container")
    version, k, f, *counts = r.unpack("<IIIIII")
    if version != VERSION:
        raise DataError(f"unsupported corpus version {version}")
    digest = r.string()
    cfg_dict = json.loads(r.string())
    cfg_dict["snr_grid"] = tuple(cfg_dict["snr_grid"])
    cfg = DataConfig(**cfg_dict)
    table = []
    for _ in range(sum(counts)):
        (split_id,) = r.unpack("<B")
        uid = r.string()
        offset, t, snr, kind = r.unpack("<QIdB")
        table.append((split_id, uid, offset, t, snr, kind))
    splits = {s: [] for s in SPLITS}
    for split_id, uid, offset, t, snr, kind in table:
        r.pos = offset
        clean = r.array("<f8", 8).reshape(t, f).astype(np.float64)
        noisy = r.array("<f8", 8).reshape(t, f).astype(np.float64)
        labels = r.array("<u4", 4).astype(np.int64)
        splits[SPLITS[split_id]].append(Utterance(uid, clean, noisy, labels, snr, NOISE_KINDS[kind]))
    return Corpus(k, f, splits, cfg, digest)
