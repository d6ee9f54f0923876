"""Hypernetwork tests: weight generation, slicing gradients, meta-training, eval."""

import numpy as np
import pytest

from metaprune.arch import (
    ArchTemplate,
    LayerSpec,
    builtin_template,
    channels_of,
    full_nev,
    random_nev,
)
from metaprune.errors import CheckpointError, DatasetError, MetapruneError
from metaprune.hypernet import (
    HyperNet,
    evaluate_nev,
    forward_network,
    generate_weights,
    load_hypernet,
    meta_train,
    normalize_nev,
    save_hypernet,
    slice_sizes,
)
from metaprune.tensorcore import (
    Schedule,
    Tensor,
    backward,
    softmax_cross_entropy,
    sum_squares,
    zero_grads,
)

from test_tensorcore import assert_grad_matches, finite_difference


@pytest.fixture(scope="module")
def mininet():
    return builtin_template("mininet")


def tiny_template():
    """One conv plus a dense head; small enough for finite differences."""
    layers = (
        LayerSpec(name="c", kind="conv", base_width=4, in_source=-1,
                  spatial_out=(5, 5), kernel=(3, 3), norm=True, act="relu"),
        LayerSpec(name="fc", kind="dense", base_width=3, in_source=0,
                  spatial_out=(1, 1), prunable=False, norm=False, act="none",
                  bias=True),
    )
    return ArchTemplate(name="tiny", input_shape=(1, 5, 5), layers=layers, slots=((0,),))


class TestNormalizeNev:
    def test_full_width_maps_to_ones(self, mininet):
        assert np.array_equal(normalize_nev(mininet, (30,) * 4), np.ones(4))

    def test_min_maps_to_tenth(self, mininet):
        assert np.allclose(normalize_nev(mininet, (0,) * 4), 0.10)

    def test_injective_on_distinct_nevs(self, mininet):
        rng = np.random.default_rng(0)
        seen = set()
        for _ in range(100):
            nev = random_nev(mininet, rng)
            vec = tuple(normalize_nev(mininet, nev))
            if nev in seen:
                continue
            seen.add(nev)
            back = tuple(round((v - 0.10) / 0.03) for v in vec)
            assert back == nev


class TestGenerateWeights:
    def test_same_nev_identical_weights(self, mininet):
        h = HyperNet(mininet, rng=np.random.default_rng(1))
        nev = (10, 20, 5, 30)
        a = generate_weights(h, nev)
        b = generate_weights(h, nev)
        for wa, wb in zip(a.weights, b.weights):
            assert np.array_equal(wa["kernel"].data, wb["kernel"].data)

    def test_kernel_shapes_match_slices(self, mininet):
        h = HyperNet(mininet, rng=np.random.default_rng(2))
        rng = np.random.default_rng(3)
        for _ in range(5):
            nev = random_nev(mininet, rng)
            model = generate_weights(h, nev)
            assert model.channels == tuple(
                channels_of(mininet, nev, i) for i in range(len(mininet.layers))
            )
            for idx, entry in enumerate(model.weights):
                crop_sizes, c_out = slice_sizes(mininet, nev, idx)
                got = entry["kernel"].data.shape[: len(crop_sizes)]
                assert got == tuple(crop_sizes)
                if "bias" in entry:
                    assert entry["bias"].data.shape == (c_out,)

    def test_distant_slots_give_different_shapes(self, mininet):
        # rounded channel counts differ once slots are >= 3 grid steps apart
        h = HyperNet(mininet, rng=np.random.default_rng(4))
        a = generate_weights(h, (10, 10, 10, 10))
        b = generate_weights(h, (13, 10, 10, 10))
        shapes_a = [w["kernel"].data.shape for w in a.weights]
        shapes_b = [w["kernel"].data.shape for w in b.weights]
        assert shapes_a != shapes_b

    def test_dense_head_not_pruned(self, mininet):
        h = HyperNet(mininet, rng=np.random.default_rng(5))
        model = generate_weights(h, (0, 0, 0, 0))
        assert model.weights[-1]["kernel"].data.shape[1] == 10
        assert model.weights[-1]["bias"].data.shape == (10,)

    def test_gradients_reach_generators_through_crop(self):
        t = tiny_template()
        h = HyperNet(t, hidden=4, rng=np.random.default_rng(6))
        nev = (15,)

        def build():
            model = generate_weights(h, nev)
            return sum_squares(model.weights[0]["kernel"])

        loss = build()
        backward(loss)
        gen = h.generators[0]
        for p in (gen.w1, gen.b1, gen.w2, gen.b2):
            assert p.grad is not None
            numeric = finite_difference(lambda: float(build().data), p.data)
            assert_grad_matches(p.grad, numeric)

    def test_full_path_gradient_matches_finite_differences(self):
        t = tiny_template()
        h = HyperNet(t, hidden=4, rng=np.random.default_rng(7))
        rng = np.random.default_rng(8)
        x = rng.normal(size=(4, 1, 5, 5))
        labels = rng.integers(0, 3, size=4)
        nev = (12,)

        def build():
            model = generate_weights(h, nev)
            logits = forward_network(t, model.channels, model.weights, Tensor(x))
            return softmax_cross_entropy(logits, labels)

        loss = build()
        backward(loss)
        for gen in h.generators:
            for p in gen.params:
                assert p.grad is not None
                numeric = finite_difference(lambda: float(build().data), p.data)
                assert_grad_matches(p.grad, numeric)


class TestForwardNetwork:
    def test_shape_soundness_random_nevs(self, mininet):
        h = HyperNet(mininet, rng=np.random.default_rng(9))
        rng = np.random.default_rng(10)
        x = Tensor(rng.normal(size=(3, 1, 28, 28)))
        for _ in range(10):
            nev = random_nev(mininet, rng)
            model = generate_weights(h, nev)
            logits = forward_network(mininet, model.channels, model.weights, x)
            assert logits.data.shape == (3, 10)
            assert np.isfinite(logits.data).all()

    def test_pooled_templates_are_analytic_only(self):
        t = builtin_template("resnet50")
        with pytest.raises(MetapruneError, match="analytic-only"):
            forward_network(t, (), [], Tensor(np.zeros((1, 3, 224, 224))))


class TestMetaTrain:
    def _data(self, n=200, seed=0):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(n, 1, 28, 28))
        y = rng.integers(0, 10, size=n)
        return x, y

    def test_zero_epochs_leaves_params(self, mininet):
        h = HyperNet(mininet, rng=np.random.default_rng(11))
        before = [p.data.copy() for p in h.params]
        x, y = self._data()
        sched = Schedule(kind="per-epoch-decay", initial_lr=0.5)
        log = meta_train(h, x, y, 0, sched, np.random.default_rng(0))
        assert log == []
        for p, b in zip(h.params, before):
            assert np.array_equal(p.data, b)

    def test_empty_dataset_rejected(self, mininet):
        h = HyperNet(mininet, rng=np.random.default_rng(12))
        sched = Schedule(kind="per-epoch-decay", initial_lr=0.5)
        with pytest.raises(DatasetError):
            meta_train(h, np.zeros((0, 1, 28, 28)), np.zeros(0, dtype=int), 1,
                       sched, np.random.default_rng(0))

    def test_fixed_seed_bit_identical_params(self, mininet):
        x, y = self._data(n=192, seed=3)
        sched = Schedule(kind="milestone-decay", initial_lr=1.0, milestones=(2,))

        def run():
            h = HyperNet(mininet, rng=np.random.default_rng(13))
            meta_train(h, x, y, 2, sched, np.random.default_rng(5), batch_size=64)
            return [p.data.copy() for p in h.params]

        a, b = run(), run()
        for pa, pb in zip(a, b):
            assert np.array_equal(pa, pb)

    def test_loss_decreases_on_learnable_data(self, mininet):
        # tiny structured problem: two blobs decide the label parity
        rng = np.random.default_rng(14)
        n = 320
        y = rng.integers(0, 10, size=n)
        x = rng.normal(scale=0.3, size=(n, 1, 28, 28))
        for i in range(n):
            x[i, 0, :14, :14] += y[i] / 5.0
            x[i, 0, 14:, 14:] -= y[i] / 5.0
        h = HyperNet(mininet, rng=np.random.default_rng(15))
        sched = Schedule(kind="milestone-decay", initial_lr=1.0, milestones=(20,))
        log = meta_train(h, x, y, 6, sched, np.random.default_rng(6), batch_size=64)
        assert log[-1]["mean_loss"] < log[0]["mean_loss"]


class TestEvaluateNev:
    def _balanced_val(self, per_class=50, seed=0):
        rng = np.random.default_rng(seed)
        y = np.repeat(np.arange(10), per_class)
        x = rng.normal(size=(len(y), 1, 28, 28))
        return x, y

    def test_untrained_is_chance_level(self, mininet):
        h = HyperNet(mininet, rng=np.random.default_rng(16))
        x, y = self._balanced_val(per_class=100)
        calib = np.random.default_rng(17).normal(size=(128, 1, 28, 28))
        acc = evaluate_nev(h, full_nev(mininet), x, y, calib)
        sigma = (0.1 * 0.9 / len(y)) ** 0.5
        assert abs(acc - 0.1) < 3 * sigma + 1e-9

    def test_same_nev_same_accuracy(self, mininet):
        h = HyperNet(mininet, rng=np.random.default_rng(18))
        x, y = self._balanced_val()
        calib = np.random.default_rng(19).normal(size=(64, 1, 28, 28))
        nev = (8, 16, 24, 30)
        assert evaluate_nev(h, nev, x, y, calib) == evaluate_nev(h, nev, x, y, calib)

    def test_no_parameter_mutation(self, mininet):
        h = HyperNet(mininet, rng=np.random.default_rng(20))
        x, y = self._balanced_val()
        calib = np.random.default_rng(21).normal(size=(64, 1, 28, 28))
        before = [p.data.copy() for p in h.params]
        evaluate_nev(h, (5, 15, 25, 30), x, y, calib)
        for p, b in zip(h.params, before):
            assert np.array_equal(p.data, b)

    def test_empty_validation_rejected(self, mininet):
        h = HyperNet(mininet, rng=np.random.default_rng(22))
        calib = np.zeros((4, 1, 28, 28))
        with pytest.raises(DatasetError, match="empty validation"):
            evaluate_nev(h, full_nev(mininet), np.zeros((0, 1, 28, 28)),
                         np.zeros(0, dtype=int), calib)


class TestCheckpoint:
    def test_roundtrip(self, mininet, tmp_path):
        h = HyperNet(mininet, rng=np.random.default_rng(23))
        path = tmp_path / "hyper.ckpt"
        save_hypernet(path, h)
        again = load_hypernet(path, mininet)
        assert again.hidden == h.hidden
        for ga, gb in zip(h.generators, again.generators):
            for name in ("w1", "b1", "w2", "b2"):
                assert np.array_equal(getattr(ga, name).data, getattr(gb, name).data)

    def test_byte_stable_save(self, mininet, tmp_path):
        h = HyperNet(mininet, rng=np.random.default_rng(24))
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_hypernet(p1, h)
        save_hypernet(p2, h)
        assert p1.read_bytes() == p2.read_bytes()

    def test_template_mismatch_rejected(self, mininet, tmp_path):
        h = HyperNet(mininet, rng=np.random.default_rng(25))
        path = tmp_path / "hyper.ckpt"
        save_hypernet(path, h)
        other = tiny_template()
        with pytest.raises(CheckpointError, match="trained for template"):
            load_hypernet(path, other)

    def test_non_hypernet_checkpoint_rejected(self, mininet, tmp_path):
        from metaprune.tensorcore import save_checkpoint

        path = tmp_path / "plain.ckpt"
        save_checkpoint(path, {"a": np.ones(3)})
        with pytest.raises(CheckpointError, match="manifest"):
            load_hypernet(path, mininet)
