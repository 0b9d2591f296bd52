"""Alternating D -> G -> C minibatch updates with Adam, the epoch loop,
metrics export and per-epoch checkpoints."""
from dataclasses import dataclass, field
import csv
import glob
import logging
import math
import os

import numpy as np

from . import _accel
from . import numerics as nx
from .config import RunConfig, TrainConfig
from .data import prepare_split, sample_batches
from .evalkit import frame_accuracy
from .losses import loss_category, loss_discriminator, loss_generator_adv, loss_generator_total
from .models import (build_networks, classifier_logits, discriminator_forward, encode, frozen,
                     generator_forward, load_checkpoint, save_checkpoint)
from .numerics import Tensor

logger = logging.getLogger(__name__)

METRICS_HEADER = ["step", "loss_d", "loss_g_adv", "loss_c", "frame_acc_train", "frame_acc_dev"]

# independent RNG streams, so switching one consumer off never shifts another
STREAMS = {"init": 1, "shuffle": 2, "clean": 3, "dropout": 4}


def stream(seed, name, epoch=None):
    key = [int(seed), STREAMS[name]]
    if epoch is not None:
        key.append(int(epoch))
    return np.random.default_rng(key)


class NumericAbort(ArithmeticError):
    def __init__(self, message, checkpoint=None):
        super().__init__(message if checkpoint is None else f"{message} (last good checkpoint: {checkpoint})")
        self.checkpoint = checkpoint


@dataclass
class OptimizerState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def fresh(cls, params):
        return cls([np.zeros(p.shape) for p in params], [np.zeros(p.shape) for p in params])


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8, names=None):
    """One bias-corrected Adam update in place. ``None`` gradients leave that
    parameter and its moments untouched."""
    for i, g in enumerate(grads):
        if g is not None and not np.all(np.isfinite(g)):
            name = names[i] if names else f"parameter {i}"
            raise NumericAbort(f"non-finite gradient for {name}")
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            continue
        if g.shape != p.shape:
            raise nx.ShapeError(f"gradient {g.shape} does not match parameter {p.shape}")
        _accel.adam_update(p.data, np.ascontiguousarray(g), m, v, lr, beta1, beta2, eps, bc1, bc2)


def _update(params, state, cfg: TrainConfig):
    adam_step(params, [p.grad for p in params], state, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    for p in params:
        p.zero_grad()


@dataclass
class MetricsRecord:
    step: int
    loss_d: float = None
    loss_g_adv: float = None
    loss_c: float = None
    frame_acc_train: float = None
    frame_acc_dev: float = None
    epoch: int = 0

    def row(self):
        return [str(self.step)] + [
            "" if v is None else repr(float(v))
            for v in (self.loss_d, self.loss_g_adv, self.loss_c, self.frame_acc_train, self.frame_acc_dev)
        ]


@dataclass
class OptimizerStates:
    d: OptimizerState
    g: OptimizerState
    c: OptimizerState

    @classmethod
    def fresh(cls, nets):
        return cls(OptimizerState.fresh(nets.discriminator.parameters()),
                   OptimizerState.fresh(nets.generator.parameters()),
                   OptimizerState.fresh(nets.classifier.parameters()))

    def flat(self):
        out = []
        for s in (self.d, self.g, self.c):
            out += s.m + s.v
        return out


def _check_finite(value, what):
    if value is not None and not math.isfinite(value):
        raise NumericAbort(f"non-finite {what} loss")


def train_minibatch(nets, opt, batch, cfg: TrainConfig, dropout_rng, step=0):
    """Algorithm step on one minibatch: update D, then G, then C.

    D sees G's output as a constant; G minimises alpha * V_GAN + V(C) with D
    and C held fixed; C minimises V(C) on a fresh h treated as a constant.
    """
    g, d, c = nets.generator, nets.discriminator, nets.classifier
    x_noisy = Tensor(batch.noisy)
    labels = batch.labels
    rec = MetricsRecord(step)

    if cfg.d_updates_enabled:
        with nx.no_grad():
            x_hat, _ = generator_forward(g, x_noisy)
        loss_d = loss_discriminator(discriminator_forward(d, Tensor(batch.clean)),
                                    discriminator_forward(d, x_hat))
        rec.loss_d = loss_d.value
        _check_finite(rec.loss_d, "discriminator")
        loss_d.tensor.backward()
        _update(d.parameters(), opt.d, cfg)

    with frozen(d, c):
        adv = None
        if cfg.alpha > 0:
            x_hat, h = generator_forward(g, x_noisy)
            adv = loss_generator_adv(discriminator_forward(d, x_hat))
            rec.loss_g_adv = adv.value
        else:
            h = encode(g, x_noisy)
        cat = loss_category(classifier_logits(c, h, "train", dropout_rng), labels)
        total = loss_generator_total(adv, cat, cfg.alpha)
        _check_finite(total.value, "generator")
        total.tensor.backward()
    _update(g.parameters(), opt.g, cfg)

    with nx.no_grad():
        h = encode(g, x_noisy)
    loss_c = loss_category(classifier_logits(c, h, "train", dropout_rng), labels)
    rec.loss_c = loss_c.value
    _check_finite(rec.loss_c, "category")
    loss_c.tensor.backward()
    _update(c.parameters(), opt.c, cfg)
    return rec


@dataclass
class TrainResult:
    nets: object
    metrics: list
    dev_accuracy: list = field(default_factory=list)
    train_accuracy: list = field(default_factory=list)
    digest: str = ""

    @property
    def final_dev_accuracy(self):
        return self.dev_accuracy[-1] if self.dev_accuracy else float("nan")


def checkpoint_path(out_dir, epoch, subdir="checkpoints"):
    return os.path.join(out_dir, subdir, f"epoch_{epoch:03d}.ckpt")


def latest_checkpoint(out_dir, subdir="checkpoints"):
    found = sorted(glob.glob(os.path.join(out_dir, subdir, "epoch_*.ckpt")))
    return found[-1] if found else None


def _save(out_dir, epoch, step, nets, opt, cfg, corpus_digest):
    path = checkpoint_path(out_dir, epoch, cfg.paths.checkpoints)
    meta = {"epoch": epoch, "step": step, "seed": cfg.train.seed, "t": [opt.d.t, opt.g.t, opt.c.t]}
    save_checkpoint(path, nets, cfg.digest(), corpus_digest, opt.flat(), meta)
    return path


def _restore_opt(opt, extras, t):
    it = iter(extras)
    for s, ti in zip((opt.d, opt.g, opt.c), t):
        s.m = [next(it) for _ in s.m]
        s.v = [next(it) for _ in s.v]
        s.t = ti


def write_metrics(path, records, digest):
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_digest {digest}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for r in records:
            w.writerow(r.row())


def read_metrics(path):
    """Rows of a metrics CSV as dicts of floats (None for empty cells)."""
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    out = []
    for row in csv.DictReader(lines):
        out.append({k: (None if v == "" else float(v)) for k, v in row.items()})
    return out


def train(cfg: RunConfig, corpus, out_dir=None, resume=False, splits=None):
    """Run ``cfg.train.epochs`` epochs of alternating updates.

    With ``out_dir`` a checkpoint is written after initialisation and after
    every epoch, and the metrics CSV is rewritten each epoch. File names
    inside ``out_dir`` come from ``cfg.paths``. ``resume``
    continues from the newest checkpoint there.
    """
    tc = cfg.train
    context = cfg.data.context
    if splits is None:
        splits = {s: prepare_split(corpus, s, context) for s in ("train", "dev")}
    train_split, dev_split = splits["train"], splits["dev"]
    nets = build_networks(stream(tc.seed, "init"), cfg.model, corpus.feat_dim, context,
                          corpus.num_classes)
    opt = OptimizerStates.fresh(nets)
    records, dev_acc, train_acc = [], [], []
    start_epoch, step = 0, 0
    digest = cfg.digest()
    metrics_path = None
    last_good = None

    if out_dir is not None:
        os.makedirs(os.path.join(out_dir, cfg.paths.checkpoints), exist_ok=True)
        metrics_path = os.path.join(out_dir, cfg.paths.metrics)
        ckpt = latest_checkpoint(out_dir, cfg.paths.checkpoints) if resume else None
        if ckpt is not None:
            state = load_checkpoint(ckpt, expected_digest=digest, expected_corpus=corpus.digest)
            for dst, src in zip(nets.parameters(), state.nets.parameters()):
                dst.data[...] = src.data
            _restore_opt(opt, state.extras, state.meta["t"])
            start_epoch, step = state.meta["epoch"], state.meta["step"]
            for row in read_metrics(metrics_path):
                if row["step"] > step:
                    break
                rec = MetricsRecord(int(row["step"]), row["loss_d"], row["loss_g_adv"], row["loss_c"],
                                    row["frame_acc_train"], row["frame_acc_dev"])
                records.append(rec)
                if rec.frame_acc_dev is not None:
                    dev_acc.append(rec.frame_acc_dev)
                    train_acc.append(rec.frame_acc_train)
            last_good = ckpt
            logger.info("resumed from %s at epoch %d", ckpt, start_epoch)
        else:
            last_good = _save(out_dir, 0, 0, nets, opt, cfg, corpus.digest)
            write_metrics(metrics_path, records, digest)

    for epoch in range(start_epoch + 1, tc.epochs + 1):
        shuffle_rng = stream(tc.seed, "shuffle", epoch)
        clean_rng = stream(tc.seed, "clean", epoch)
        dropout_rng = stream(tc.seed, "dropout", epoch)
        epoch_recs = []
        try:
            for batch in sample_batches(train_split, tc.batch_size, shuffle_rng, clean_rng):
                step += 1
                rec = train_minibatch(nets, opt, batch, tc, dropout_rng, step)
                rec.epoch = epoch
                epoch_recs.append(rec)
        except NumericAbort as exc:
            raise NumericAbort(str(exc), last_good) from exc
        last = epoch_recs[-1]
        last.frame_acc_train = frame_accuracy(nets, train_split)
        last.frame_acc_dev = frame_accuracy(nets, dev_split)
        train_acc.append(last.frame_acc_train)
        dev_acc.append(last.frame_acc_dev)
        records += [r for r in epoch_recs if r is last or r.step % tc.log_every == 0]
        logger.info("epoch %d step %d loss_c %.4f train %.4f dev %.4f", epoch, step,
                    last.loss_c, last.frame_acc_train, last.frame_acc_dev)
        if out_dir is not None:
            last_good = _save(out_dir, epoch, step, nets, opt, cfg, corpus.digest)
            write_metrics(metrics_path, records, digest)

    return TrainResult(nets, records, dev_acc, train_acc, digest)
