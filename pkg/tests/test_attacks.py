import numpy as np
import pytest

from advprune.attacks import AttackSpec, fgsm, ifgsm, perturb
from advprune.errors import ParameterError
from advprune.models import build_mlp, forward

from test_models import clean_accuracy, train_plain_sgd, two_blobs


def per_example_loss(model, x, labels):
    logits = forward(model, x, "eval").data
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    return logz - shifted[np.arange(len(labels)), labels]


@pytest.fixture(scope="module")
def trained():
    x, y = two_blobs(60, 0.12, seed=3)
    model = build_mlp([2, 16, 16, 2], seed=2)
    train_plain_sgd(model, x, y, epochs=150, eta=0.5)
    return model, x, y


class TestSpecValidation:
    def test_negative_eps(self):
        with pytest.raises(ParameterError):
            AttackSpec("fgsm", eps=-0.1).validate()

    def test_zero_steps(self):
        with pytest.raises(ParameterError):
            AttackSpec("ifgsm", eps=0.1, alpha=0.01, steps=0).validate()

    def test_unknown_family(self):
        with pytest.raises(ParameterError):
            AttackSpec("cw", eps=0.1).validate()

    def test_bad_clamp(self):
        with pytest.raises(ParameterError):
            AttackSpec("fgsm", eps=0.1, clamp=(1.0, 0.0)).validate()


class TestFgsm:
    def test_zero_eps_is_identity(self, trained):
        model, x, y = trained
        adv = fgsm(model, x, y, AttackSpec("fgsm", eps=0.0))
        np.testing.assert_array_equal(adv, x)

    def test_matches_closed_form_logistic_gradient(self):
        # Single affine layer: grad_x L = (softmax(Wx+b) - onehot_y)^T W.
        model = build_mlp([1, 2], seed=9)
        W, b = model.params["m0.l0.w"], model.params["m0.l0.b"]
        x = np.array([[0.4]])
        y = np.array([0])
        z = x @ W.T + b
        p = np.exp(z - z.max()) / np.exp(z - z.max()).sum()
        grad = (p - np.array([[1.0, 0.0]])) @ W
        eps = 0.05
        expected = np.clip(x + eps * np.sign(grad), 0.0, 1.0)
        adv = fgsm(model, x, y, AttackSpec("fgsm", eps=eps))
        np.testing.assert_array_equal(adv, expected)

    def test_ascent_direction_on_most_examples(self, trained):
        model, x, y = trained
        adv = fgsm(model, x, y, AttackSpec("fgsm", eps=0.02))
        before = per_example_loss(model, x, y)
        after = per_example_loss(model, adv, y)
        frac = float((after >= before - 1e-9).mean())
        assert frac >= 0.9

    def test_linf_and_clamp_containment(self, trained):
        model, x, y = trained
        eps = 0.07
        adv = fgsm(model, x, y, AttackSpec("fgsm", eps=eps))
        assert np.max(np.abs(adv - x)) <= eps
        assert adv.min() >= 0.0 and adv.max() <= 1.0


class TestIfgsm:
    def test_single_step_reduces_to_fgsm_bit_exact(self, trained):
        model, x, y = trained
        eps = 0.05
        a = fgsm(model, x, y, AttackSpec("fgsm", eps=eps))
        b = ifgsm(model, x, y, AttackSpec("ifgsm", eps=eps, alpha=eps, steps=1))
        c = ifgsm(model, x, y, AttackSpec("ifgsm", eps=eps, alpha=2 * eps, steps=1))
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(a, c)

    def test_zero_eps_identity(self, trained):
        model, x, y = trained
        spec = AttackSpec("ifgsm", eps=0.0, alpha=0.01, steps=5)
        np.testing.assert_array_equal(ifgsm(model, x, y, spec), x)

    def test_projection_property_many_trials(self, trained):
        model, _, _ = trained
        rng = np.random.default_rng(17)
        eps = 0.03
        spec = AttackSpec("ifgsm", eps=eps, alpha=0.02, steps=4, random_init=True)
        worst = 0.0
        for _ in range(1000):
            x = rng.uniform(size=(1, 2))
            y = rng.integers(0, 2, size=1)
            adv = ifgsm(model, x, y, spec, rng=rng)
            worst = max(worst, float(np.max(np.abs(adv - x))))
            assert adv.min() >= 0.0 and adv.max() <= 1.0
        assert worst <= eps

    def test_random_init_requires_rng(self, trained):
        model, x, y = trained
        spec = AttackSpec("ifgsm", eps=0.1, alpha=0.02, steps=2, random_init=True)
        with pytest.raises(ParameterError):
            ifgsm(model, x, y, spec)

    def test_stronger_than_fgsm_on_trained_model(self, trained):
        model, x, y = trained
        eps = 0.12
        a1 = clean_accuracy(model, x, y)
        adv2 = fgsm(model, x, y, AttackSpec("fgsm", eps=eps))
        adv3 = ifgsm(model, x, y, AttackSpec("ifgsm", eps=eps, alpha=eps / 4, steps=20))
        a2 = 100.0 * float((forward(model, adv2, "eval").data.argmax(axis=1) == y).mean())
        a3 = 100.0 * float((forward(model, adv3, "eval").data.argmax(axis=1) == y).mean())
        assert a3 <= a2 <= a1


class TestPerturbDispatch:
    def test_none_is_identity(self, trained):
        model, x, y = trained
        adv = perturb(model, x, y, AttackSpec("none"))
        np.testing.assert_array_equal(adv, x)
        assert clean_accuracy(model, adv, y) == clean_accuracy(model, x, y)

    def test_returns_copy_not_alias(self, trained):
        model, x, y = trained
        adv = perturb(model, x, y, AttackSpec("none"))
        adv[0, 0] += 1.0
        assert x[0, 0] != adv[0, 0]

    def test_noise_injected_model_attack_is_seeded(self):
        from advprune.models import BlockSpec, build_residual_ensemble

        spec = BlockSpec(in_dim=2, width=6, blocks=1, out_dim=2)
        model = build_residual_ensemble(2, spec, sigma=0.2, seed=5)
        x = np.random.default_rng(6).uniform(size=(4, 2))
        y = np.array([0, 1, 0, 1])
        atk = AttackSpec("ifgsm", eps=0.05, alpha=0.02, steps=3, random_init=True)
        a = perturb(model, x, y, atk, rng=np.random.default_rng(42), stochastic=True)
        b = perturb(model, x, y, atk, rng=np.random.default_rng(42), stochastic=True)
        np.testing.assert_array_equal(a, b)
