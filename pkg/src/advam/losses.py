"""Least-squares adversarial losses, the category loss and their combination.

Expectations are batch means. The discriminator emits raw scores; there is
no sigmoid anywhere on the least-squares path.
"""
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .numerics import NumericError, Tensor


@dataclass
class LossValue:
    tensor: Tensor
    batch_size: int
    components: dict = field(default_factory=dict)

    @property
    def value(self):
        return self.tensor.item()


def _scores(s):
    t = s if isinstance(s, Tensor) else Tensor(np.asarray(s, dtype=np.float64).reshape(-1))
    if t.size == 0:
        raise ValueError("empty score batch")
    return nx.reshape(t, (t.size,))


def _half_mse(scores, target):
    diff = nx.add_scalar(scores, -target) if target else scores
    return nx.scale(nx.mean(nx.square(diff)), 0.5)


def loss_discriminator(scores_clean, scores_fake):
    """1/2 mean((D(x)-1)^2) + 1/2 mean(D(G(x~))^2); batch sizes may differ."""
    sc, sf = _scores(scores_clean), _scores(scores_fake)
    real = _half_mse(sc, 1.0)
    fake = _half_mse(sf, 0.0)
    total = nx.add(real, fake)
    return LossValue(total, sc.size + sf.size, {"real": real.item(), "fake": fake.item()})


def loss_generator_adv(scores_fake):
    """1/2 mean((D(G(x~))-1)^2)."""
    sf = _scores(scores_fake)
    return LossValue(_half_mse(sf, 1.0), sf.size)


def loss_category(logits, labels):
    """Mean -log C(k|h), from logits through a fused log-softmax."""
    t = logits if isinstance(logits, Tensor) else Tensor(logits)
    if t.ndim == 1:
        t = nx.reshape(t, (1, t.size))
        labels = np.atleast_1d(labels)
    return LossValue(nx.cross_entropy(t, labels), t.shape[0])


def loss_category_from_posteriors(posteriors, labels):
    """Category loss when only probabilities are at hand (evaluation, tests)."""
    p = np.atleast_2d(np.asarray(posteriors, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if labels.min() < 0 or labels.max() >= p.shape[1]:
        raise ValueError(f"labels must lie in [0, {p.shape[1]})")
    return float(-np.mean(np.log(p[np.arange(len(labels)), labels])))


def loss_generator_total(adv, cat, alpha):
    """alpha * adv + cat. ``adv`` may be None when alpha is 0 and the term was skipped."""
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    if adv is None:
        if alpha != 0:
            raise ValueError("adversarial term missing with alpha > 0")
        return LossValue(cat.tensor, cat.batch_size, {"adv": 0.0, "category": cat.value})
    if alpha == 0:
        total = cat.tensor
    else:
        total = nx.add(nx.scale(adv.tensor, alpha), cat.tensor)
    return LossValue(total, cat.batch_size, {"adv": adv.value, "category": cat.value})


def vanilla_gan_value(d_probs_clean, d_probs_fake):
    """mean log D(x) + mean log(1 - D(G(z))) for probabilities strictly inside (0, 1)."""
    pc = np.asarray(d_probs_clean, dtype=np.float64).reshape(-1)
    pf = np.asarray(d_probs_fake, dtype=np.float64).reshape(-1)
    if pc.size == 0 or pf.size == 0:
        raise ValueError("empty probability batch")
    for p in (pc, pf):
        if not np.all((p > 0) & (p < 1)):
            raise NumericError("probabilities must lie strictly inside (0, 1)")
    return float(np.mean(np.log(pc)) + np.mean(np.log1p(-pf)))


def optimal_discriminator_score(clean_mass, fake_mass):
    """Minimiser of 1/2 p (d-1)^2 + 1/2 q d^2 over d."""
    return clean_mass / (clean_mass + fake_mass)


