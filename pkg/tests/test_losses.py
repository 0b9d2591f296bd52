import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from advam import losses
from advam import numerics as nx
from advam.numerics import Tensor


def direct_d_loss(clean, fake):
    # plain-Python substitution into the least-squares discriminator objective
    return 0.5 * sum((s - 1) ** 2 for s in clean) / len(clean) + 0.5 * sum(s ** 2 for s in fake) / len(fake)


class TestDiscriminatorLoss:
    def test_perfect_discriminator(self):
        assert losses.loss_discriminator([1.0, 1.0], [0.0, 0.0, 0.0]).value == 0.0

    def test_all_half(self):
        assert abs(losses.loss_discriminator([0.5] * 4, [0.5] * 4).value - 0.25) <= 1e-12

    def test_mixed(self):
        expected = direct_d_loss([1, 0.5], [0, 0.5])
        assert expected == 0.125
        assert abs(losses.loss_discriminator([1, 0.5], [0, 0.5]).value - expected) <= 1e-15

    def test_unequal_batches(self, rng):
        c, f = rng.normal(size=5), rng.normal(size=3)
        assert abs(losses.loss_discriminator(c, f).value - direct_d_loss(c, f)) <= 1e-14

    def test_empty(self):
        with pytest.raises(ValueError):
            losses.loss_discriminator([], [0.0])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-3, 3), min_size=1, max_size=8),
           st.lists(st.floats(-3, 3), min_size=1, max_size=8), st.randoms())
    def test_shuffle_invariant(self, clean, fake, rnd):
        a = losses.loss_discriminator(clean, fake).value
        rnd.shuffle(clean)
        rnd.shuffle(fake)
        assert abs(losses.loss_discriminator(clean, fake).value - a) <= 1e-12


class TestGeneratorAdv:
    @pytest.mark.parametrize("score, expected", [(1.0, 0.0), (0.0, 0.5), (0.5, 0.125)])
    def test_values(self, score, expected):
        assert abs(losses.loss_generator_adv([score] * 3).value - expected) <= 1e-12

    def test_empty(self):
        with pytest.raises(ValueError):
            losses.loss_generator_adv([])


class TestCategory:
    def test_certain(self):
        logits = np.array([[0.0, 800.0, 0.0]])
        assert losses.loss_category(logits, [1]).value == 0.0

    def test_uniform_k10(self):
        assert abs(losses.loss_category(np.zeros((4, 10)), [0, 3, 5, 9]).value - math.log(10)) <= 1e-12

    def test_quarter(self):
        # true class carries probability 1/4
        logits = np.log([[1.0, 1.0, 2.0]])
        assert abs(losses.loss_category(logits, [0]).value - math.log(4)) <= 1e-12
        assert abs(losses.loss_category_from_posteriors([[0.25, 0.75]], [0]) - math.log(4)) <= 1e-12

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            losses.loss_category(np.zeros((2, 3)), [0, 3])


class TestTotal:
    def test_alpha_zero_is_category(self, rng):
        cat = losses.loss_category(rng.normal(size=(3, 4)), [0, 1, 2])
        adv = losses.loss_generator_adv([0.2, 0.4])
        assert losses.loss_generator_total(adv, cat, 0.0).value == cat.value

    def test_arithmetic(self):
        adv = losses.loss_generator_adv([0.5])
        cat = losses.loss_category(np.zeros((1, 10)), [0])
        total = losses.loss_generator_total(adv, cat, 0.4)
        assert abs(total.value - (0.4 * 0.125 + math.log(10))) <= 1e-12
        assert abs(total.value - 2.352585) <= 1e-6
        assert abs(total.value - (0.4 * total.components["adv"] + total.components["category"])) <= 1e-12

    def test_zero(self):
        adv = losses.loss_generator_adv([1.0])
        cat = losses.loss_category(np.array([[0.0, 900.0]]), [1])
        assert losses.loss_generator_total(adv, cat, 0.7).value == 0.0

    def test_negative_alpha(self):
        adv = losses.loss_generator_adv([1.0])
        cat = losses.loss_category(np.zeros((1, 2)), [1])
        with pytest.raises(ValueError):
            losses.loss_generator_total(adv, cat, -0.1)

    def test_gradient_is_linear(self, rng):
        x0 = rng.normal(size=(4, 3))
        w_d = Tensor(rng.normal(size=(3, 1)))
        w_c = Tensor(rng.normal(size=(3, 5)))
        labels = [0, 2, 4, 1]

        def terms(x):
            adv = losses.loss_generator_adv(nx.reshape(nx.matmul(x, w_d), (4,)))
            cat = losses.loss_category(nx.matmul(x, w_c), labels)
            return adv, cat

        grads = []
        for which in ("adv", "cat"):
            x = Tensor(x0, requires_grad=True)
            adv, cat = terms(x)
            (adv if which == "adv" else cat).tensor.backward()
            grads.append(x.grad)
        x = Tensor(x0, requires_grad=True)
        adv, cat = terms(x)
        losses.loss_generator_total(adv, cat, 0.4).tensor.backward()
        np.testing.assert_allclose(x.grad, 0.4 * grads[0] + grads[1], rtol=0, atol=1e-12)

        x = Tensor(x0, requires_grad=True)
        adv, cat = terms(x)
        losses.loss_generator_total(adv, cat, 0.0).tensor.backward()
        assert x.grad.tobytes() == grads[1].tobytes()


class TestVanillaGan:
    def test_half(self):
        assert abs(losses.vanilla_gan_value([0.5] * 3, [0.5] * 2) - 2 * math.log(0.5)) <= 1e-12

    def test_equilibrium(self):
        assert abs(losses.vanilla_gan_value([0.5], [0.5]) + 2 * math.log(2)) <= 1e-12

    def test_limit_from_below(self):
        prev = -math.inf
        for eps in (1e-1, 1e-3, 1e-6):
            v = losses.vanilla_gan_value([1 - eps], [eps])
            assert prev < v < 0
            prev = v

    @pytest.mark.parametrize("bad", [[0.0], [1.0]])
    def test_boundary_probabilities(self, bad):
        with pytest.raises(nx.NumericError):
            losses.vanilla_gan_value(bad, [0.5])


def test_optimal_score_closed_form():
    p, q = 0.75, 0.25
    d = losses.optimal_discriminator_score(p, q)
    grid = np.linspace(0, 1, 100001)
    objective = 0.5 * p * (grid - 1) ** 2 + 0.5 * q * grid ** 2
    assert abs(grid[objective.argmin()] - d) <= 1e-5
    assert d == 0.75
