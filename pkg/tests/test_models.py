import numpy as np
import pytest

from advprune.errors import ContractError, DimensionError, ParameterError
from advprune.models import (
    BlockSpec,
    build_convnet,
    build_mlp,
    build_residual_ensemble,
    forward,
    strip_skip_connections,
)
from advprune.tensor import backward, softmax_cross_entropy

from helpers import central_diff, rel_err


def train_plain_sgd(model, inputs, labels, epochs, eta, seed=0):
    """Full-batch SGD helper used by smoke oracles."""
    rng = np.random.default_rng(seed)
    for _ in range(epochs):
        logits = forward(model, inputs, "train", rng)
        loss = softmax_cross_entropy(logits, labels)
        grads = backward(loss)
        for pid in model.params:
            model.params[pid] = model.params[pid] - eta * grads[pid].data
    return model


def clean_accuracy(model, inputs, labels):
    logits = forward(model, inputs, "eval").data
    return 100.0 * float((logits.argmax(axis=1) == labels).mean())


def two_blobs(n_per_class, spread, seed):
    rng = np.random.default_rng(seed)
    centers = np.array([[0.3, 0.3], [0.7, 0.7]])
    xs, ys = [], []
    for c in range(2):
        xs.append(centers[c] + spread * rng.normal(size=(n_per_class, 2)))
        ys.append(np.full(n_per_class, c))
    return np.clip(np.concatenate(xs), 0, 1), np.concatenate(ys)


class TestBuildMlp:
    def test_single_layer(self):
        m = build_mlp([4, 1])
        assert set(m.params) == {"m0.l0.w", "m0.l0.b"}
        assert m.params["m0.l0.w"].shape == (1, 4)
        assert len(m.group_views()) == 1

    def test_parameter_count(self):
        m = build_mlp([8, 16, 3])
        assert m.parameter_count() == 8 * 16 + 16 + 16 * 3 + 3

    def test_zero_width_rejected(self):
        with pytest.raises(ParameterError):
            build_mlp([4, 0, 2])
        with pytest.raises(ParameterError):
            build_mlp([4])

    def test_trains_on_two_blobs(self):
        x, y = two_blobs(40, 0.08, seed=5)
        m = build_mlp([2, 32, 32, 2], seed=1)
        train_plain_sgd(m, x, y, epochs=200, eta=0.5)
        assert clean_accuracy(m, x, y) >= 95.0

    def test_single_linear_layer_is_affine(self):
        m = build_mlp([3, 2], seed=3)
        x = np.random.default_rng(0).normal(size=(4, 3))
        logits = forward(m, x, "eval").data
        expected = x @ m.params["m0.l0.w"].T + m.params["m0.l0.b"]
        np.testing.assert_array_equal(logits, expected)


class TestBuildConvnet:
    def test_shapes_and_registry(self):
        m = build_convnet((1, 8, 8), [4], kernel=3, classes=3)
        x = np.random.default_rng(1).uniform(size=(2, 1, 8, 8))
        logits = forward(m, x, "eval").data
        assert logits.shape == (2, 3)
        # conv filters plus head rows
        assert len(m.group_views()) == 4 + 3

    def test_kernel_consumes_input(self):
        with pytest.raises(ParameterError):
            build_convnet((1, 4, 4), [2, 2, 2], kernel=3, classes=2)


class TestResidualEnsemble:
    def spec(self):
        return BlockSpec(in_dim=2, width=8, blocks=2, out_dim=2)

    def test_degenerate_single_member(self):
        m = build_residual_ensemble(1, self.spec(), sigma=0.0, seed=2)
        x = np.random.default_rng(3).uniform(size=(5, 2))
        out_eval = forward(m, x, "eval").data
        out_train = forward(m, x, "train").data
        np.testing.assert_array_equal(out_eval, out_train)

    def test_zero_members_rejected(self):
        with pytest.raises(ParameterError):
            build_residual_ensemble(0, self.spec(), sigma=0.0)

    def test_output_is_member_average(self):
        m = build_residual_ensemble(2, self.spec(), sigma=0.0, seed=4)
        x = np.random.default_rng(5).uniform(size=(3, 2))
        full = forward(m, x, "eval").data
        singles = []
        for keep in range(2):
            solo = build_residual_ensemble(1, self.spec(), sigma=0.0, seed=4)
            solo.params = {
                pid.replace("m0.", "m0."): np.array(m.params[pid.replace("m0.", f"m{keep}.")])
                for pid in solo.params
            }
            singles.append(forward(solo, x, "eval").data)
        np.testing.assert_allclose(full, (singles[0] + singles[1]) / 2.0, rtol=0, atol=1e-15)

    def test_members_have_disjoint_params(self):
        m = build_residual_ensemble(2, self.spec(), sigma=0.0)
        m0 = {p for p in m.params if p.startswith("m0.")}
        m1 = {p for p in m.params if p.startswith("m1.")}
        assert m0 and m1 and not (m0 & m1)
        assert len(m0) + len(m1) == len(m.params)

    def test_seeded_noise_reproducible(self):
        m = build_residual_ensemble(2, self.spec(), sigma=0.1, seed=6)
        x = np.random.default_rng(7).uniform(size=(4, 2))
        a = forward(m, x, "train", np.random.default_rng(11)).data
        b = forward(m, x, "train", np.random.default_rng(11)).data
        c = forward(m, x, "train", np.random.default_rng(12)).data
        np.testing.assert_array_equal(a, b)
        assert np.any(a != c)

    def test_eval_mode_noise_free_and_deterministic(self):
        m = build_residual_ensemble(2, self.spec(), sigma=0.5, seed=8)
        x = np.random.default_rng(9).uniform(size=(4, 2))
        a = forward(m, x, "eval").data
        b = forward(m, x, "eval").data
        np.testing.assert_array_equal(a, b)

    def test_ensemble_permutation_symmetry(self):
        m = build_residual_ensemble(3, self.spec(), sigma=0.0, seed=10)
        x = np.random.default_rng(13).uniform(size=(4, 2))
        base = forward(m, x, "eval").data
        # swap member 0 and member 2 parameter contents
        swapped = m.copy()
        for pid in list(m.params):
            if pid.startswith("m0."):
                swapped.params[pid] = m.params["m2." + pid[3:]]
            elif pid.startswith("m2."):
                swapped.params[pid] = m.params["m0." + pid[3:]]
        out = forward(swapped, x, "eval").data
        assert np.max(np.abs(out - base)) < 1e-12


class TestStripSkipConnections:
    def test_requires_residual_blocks(self):
        with pytest.raises(ContractError):
            strip_skip_connections(build_mlp([2, 4, 2]))

    def test_zero_block_passes_nothing(self):
        spec = BlockSpec(in_dim=2, width=2, blocks=1, out_dim=2)
        m = build_residual_ensemble(1, spec, sigma=0.0, seed=0)
        # zero every block weight; stem and head become identity-ish probes
        for pid in m.params:
            if ".g" in pid:
                m.params[pid] = np.zeros_like(m.params[pid])
        x = np.random.default_rng(1).uniform(size=(3, 2))
        stem = x @ m.params["m0.l0.w"].T + m.params["m0.l0.b"]
        full = forward(m, x, "eval").data
        stripped = forward(strip_skip_connections(m), x, "eval").data
        head_w, head_b = m.params["m0.l2.w"], m.params["m0.l2.b"]
        np.testing.assert_allclose(full, stem @ head_w.T + head_b, atol=1e-15)
        np.testing.assert_allclose(stripped, np.zeros((3, 2)) @ head_w.T + head_b, atol=1e-15)

    def test_registry_unchanged(self):
        spec = BlockSpec(in_dim=2, width=4, blocks=2, out_dim=2)
        m = build_residual_ensemble(2, spec, sigma=0.1, seed=3)
        s = strip_skip_connections(m)
        assert [i.param_id for i in s.registry] == [i.param_id for i in m.registry]
        assert s.skip is False and m.skip is True


class TestForwardContracts:
    def test_shape_mismatch(self):
        m = build_mlp([3, 2])
        with pytest.raises(DimensionError):
            forward(m, np.zeros((4, 5)), "eval")

    def test_bad_mode(self):
        m = build_mlp([3, 2])
        with pytest.raises(ParameterError):
            forward(m, np.zeros((4, 3)), "test")

    def test_input_gradient_matches_finite_differences(self):
        m = build_mlp([3, 4, 2], seed=7)
        x = np.random.default_rng(8).uniform(0.2, 0.8, size=(2, 3))
        labels = np.array([0, 1])
        logits = forward(m, x, "train")
        grads = backward(softmax_cross_entropy(logits, labels))

        def f(xv):
            out = forward(m, xv, "eval").data
            shifted = out - out.max(axis=1, keepdims=True)
            logz = np.log(np.exp(shifted).sum(axis=1))
            return float((logz - shifted[np.arange(2), labels]).mean())

        fd = central_diff(f, x.copy())
        assert rel_err(grads["@input"].data, fd) < 1e-5


class TestGroupPartition:
    def test_groups_cover_weights_disjointly(self):
        spec = BlockSpec(in_dim=3, width=5, blocks=1, out_dim=2)
        for m in [build_mlp([3, 4, 2]), build_convnet((1, 6, 6), [3], 3, 2),
                  build_residual_ensemble(2, spec, 0.1)]:
            views = m.group_views()
            seen = set()
            for v in views:
                key = (v.param_id, v.index)
                assert key not in seen
                seen.add(key)
            for pid, (_, count) in m.grouping().items():
                rows = {i for p, i in seen if p == pid}
                assert rows == set(range(count))
                total = sum(v.values.size for v in views if v.param_id == pid)
                assert total == m.params[pid].size

    def test_biases_carry_no_group(self):
        m = build_mlp([3, 4, 2])
        grouped = set(m.grouping())
        for info in m.registry:
            if info.kind == "bias":
                assert info.param_id not in grouped
