"""Frame-accuracy evaluation of the deployed model (encoder of G plus C),
run comparison, and the alpha sweep harness."""
from dataclasses import dataclass, field
import csv
import math
import os

import numpy as np

from . import models
from .data import NOISE_KINDS

EVAL_CHUNK = 512

# dev-set WERs (%) reported for the same alpha grid, kept for documentation only
REFERENCE_DEV_WER = {0.0: 18.96, 0.2: 17.19, 0.4: 16.32, 0.6: 16.66, 0.8: 16.96}
DEFAULT_ALPHAS = (0.0, 0.2, 0.4, 0.6, 0.8)


class ComparisonError(ValueError):
    pass


def predict(nets, split, source="noisy", chunk=EVAL_CHUNK):
    """Argmax class per frame of ``split``; no dropout, no RNG use."""
    out = np.empty(len(split), dtype=np.int64)
    for lo in range(0, len(split), chunk):
        rows = np.arange(lo, min(lo + chunk, len(split)))
        post = models.acoustic_model_posteriors(
            nets.generator, nets.classifier, split.patches(rows, source))
        out[rows] = post.argmax(axis=1)
    return out


def frame_accuracy(nets, split, source="noisy"):
    return float(np.mean(predict(nets, split, source) == split.labels))


@dataclass
class EvalReport:
    split: str
    frame_accuracy: float
    frames: int
    per_class: dict
    class_counts: dict
    per_snr: dict
    snr_counts: dict
    per_noise: dict = field(default_factory=dict)
    config_digest: str = ""
    corpus_digest: str = ""
    seed: int = 0

    def to_text(self):
        lines = [
            f"split: {self.split}",
            f"frame_accuracy: {self.frame_accuracy!r}",
            f"frames: {self.frames}",
            f"config_digest: {self.config_digest}",
            f"corpus_digest: {self.corpus_digest}",
            f"seed: {self.seed}",
            "[per_class]",
        ]
        lines += [f"{k}: {v!r} ({self.class_counts[k]})" for k, v in sorted(self.per_class.items())]
        lines.append("[per_snr]")
        lines += [f"{k!r}: {v!r} ({self.snr_counts[k]})" for k, v in sorted(self.per_snr.items())]
        lines.append("[per_noise]")
        lines += [f"{k}: {v!r}" for k, v in sorted(self.per_noise.items())]
        return "\n".join(lines) + "\n"


def _grouped(correct, keys):
    acc, counts = {}, {}
    for key in np.unique(keys):
        mask = keys == key
        acc[key.item()] = float(correct[mask].mean())
        counts[key.item()] = int(mask.sum())
    return acc, counts


def evaluate(nets, split, split_name, config_digest="", corpus_digest="", seed=0, source="noisy"):
    correct = predict(nets, split, source) == split.labels
    per_class, class_counts = _grouped(correct, split.labels)
    per_snr, snr_counts = _grouped(correct, split.snr)
    per_kind, _ = _grouped(correct, split.kind)
    return EvalReport(
        split_name, float(correct.mean()), int(correct.size), per_class, class_counts,
        per_snr, snr_counts, {NOISE_KINDS[k]: v for k, v in per_kind.items()},
        config_digest, corpus_digest, seed,
    )


def weighted_mean(acc, counts):
    total = sum(counts.values())
    return sum(acc[k] * counts[k] for k in acc) / total


@dataclass
class Comparison:
    overall_delta: float
    rerr: float
    per_snr_delta: dict
    per_class_delta: dict


def relative_error_reduction(err_a, err_b):
    """100 (err_a - err_b) / err_a. Not antisymmetric under swapping a and b."""
    if err_a == 0:
        return 0.0 if err_b == 0 else -math.inf
    return 100.0 * (err_a - err_b) / err_a


def compare_runs(report_a, report_b):
    """Accuracy deltas (b - a) and frame-error RERR of b relative to a."""
    if report_a.split != report_b.split or report_a.corpus_digest != report_b.corpus_digest:
        raise ComparisonError("reports come from different splits or corpora")
    return Comparison(
        report_b.frame_accuracy - report_a.frame_accuracy,
        relative_error_reduction(1.0 - report_a.frame_accuracy, 1.0 - report_b.frame_accuracy),
        {k: report_b.per_snr[k] - report_a.per_snr[k] for k in report_a.per_snr},
        {k: report_b.per_class[k] - report_a.per_class[k] for k in report_a.per_class},
    )


@dataclass
class SweepRow:
    alpha: float
    seed_count: int
    mean_dev_acc: float
    sd_dev_acc: float
    accuracies: list


def alpha_sweep(base_cfg, corpus, alphas=DEFAULT_ALPHAS, seeds=1, out_dir=None):
    """Train and evaluate every (alpha, seed) pair; one row of dev accuracy per alpha.

    With ``out_dir`` each run writes its metrics CSV there and the table goes
    to ``sweep.csv``.
    """
    from .trainer import train

    alphas = [float(a) for a in alphas]
    if any(a < 0 or math.isnan(a) for a in alphas):
        raise ValueError("alpha values must be >= 0")
    seed_list = list(range(seeds)) if isinstance(seeds, int) else list(seeds)
    rows = []
    for alpha in alphas:
        accs = []
        for seed in seed_list:
            cfg = base_cfg.with_train(alpha=alpha, seed=base_cfg.train.seed + seed)
            run_dir = None
            if out_dir is not None:
                run_dir = os.path.join(out_dir, f"alpha{alpha:g}_seed{cfg.train.seed}")
            result = train(cfg, corpus, out_dir=run_dir)
            accs.append(result.final_dev_accuracy)
        sd = float(np.std(accs, ddof=1)) if len(accs) > 1 else 0.0
        rows.append(SweepRow(alpha, len(accs), float(np.mean(accs)), sd, accs))
    if out_dir is not None:
        write_sweep_csv(os.path.join(out_dir, "sweep.csv"), rows)
    return rows


def write_sweep_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["alpha", "seed_count", "mean_dev_acc", "sd_dev_acc"])
        for r in rows:
            w.writerow([repr(r.alpha), r.seed_count, repr(r.mean_dev_acc), repr(r.sd_dev_acc)])
