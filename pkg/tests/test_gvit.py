import dataclasses
import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F
from hypothesis import given, settings
from hypothesis import strategies as st

from urgr import InvalidArgument
from urgr.gvit import (
    ClassDistribution,
    GViTConfig,
    GViTTrainConfig,
    build_gvit,
    classify,
    cross_entropy,
    gvit_forward,
    predict_logits,
    train_gvit,
    vit_encode,
)

from gradcheck import TOL, check_gradients, worst

SMALL = GViTConfig(graph_grid=16, gc_dims=(8, 8), token_grid=4, embed_dim=8, depth=2, heads=2)


def small_model(seed=0, **kw):
    return build_gvit(dataclasses.replace(SMALL, **kw), seed=seed, dtype=torch.float64)


def scan_argmax(p):
    best = 0
    for i in range(1, len(p)):
        if p[i] > p[best]:
            best = i
    return best + 1


class TestClassDistribution:
    def test_sums_to_one(self, rng):
        d = ClassDistribution.from_logits(rng.normal(size=6) * 30)
        assert abs(d.probs.sum() - 1) < 1e-6
        assert (d.probs >= 0).all()

    def test_rejects_bad_length(self):
        with pytest.raises(InvalidArgument):
            ClassDistribution.from_logits(np.zeros(5))

    def test_model_output_sums_to_one(self, rng):
        d = gvit_forward(rng.random((16, 16, 3)), small_model())
        assert abs(d.probs.sum() - 1) < 1e-6


class TestClassify:
    def test_uniform_picks_first(self):
        assert classify(ClassDistribution(np.full(6, 1 / 6))) == 1

    def test_tie_picks_lowest(self):
        p = np.array([0.1, 0.3, 0.1, 0.3, 0.1, 0.1])
        assert classify(ClassDistribution(p)) == 2

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.integers(0, 4), min_size=6, max_size=6).filter(any))
    def test_matches_full_scan(self, counts):
        p = np.array(counts, dtype=float)
        p /= p.sum()
        assert classify(ClassDistribution(p)) == scan_argmax(p)


class TestCrossEntropy:
    def test_uniform_is_log_six(self):
        d = ClassDistribution.from_logits(np.zeros(6))
        for k in range(1, 7):
            assert cross_entropy(d, k) == pytest.approx(math.log(6), abs=1e-12)

    def test_shift_invariant(self, rng):
        z = rng.normal(size=6)
        a = cross_entropy(ClassDistribution.from_logits(z), 3)
        b = cross_entropy(ClassDistribution.from_logits(z + 123.0), 3)
        assert abs(a - b) < 1e-10

    def test_extreme_logits_stay_finite(self):
        z = np.array([1000.0, -1000, 0, 0, 0, 0])
        assert math.isfinite(cross_entropy(ClassDistribution.from_logits(z), 2))

    def test_matches_torch(self, rng):
        z = rng.normal(size=6)
        expected = F.cross_entropy(torch.from_numpy(z)[None], torch.tensor([4])).item()
        assert cross_entropy(ClassDistribution.from_logits(z), 5) == pytest.approx(expected, abs=1e-12)

    def test_probabilities_only(self):
        d = ClassDistribution(np.array([0.5, 0.5, 0, 0, 0, 0]))
        assert cross_entropy(d, 1) == pytest.approx(math.log(2))
        assert cross_entropy(d, 3) == math.inf

    @pytest.mark.parametrize("label", [0, 7])
    def test_label_range(self, label):
        with pytest.raises(InvalidArgument):
            cross_entropy(ClassDistribution.from_logits(np.zeros(6)), label)


class TestConfig:
    @pytest.mark.parametrize("kw", [{"gc_dims": (7,)}, {"graph_grid": 10, "token_grid": 4},
                                    {"embed_dim": 10, "heads": 4}, {"num_classes": 5}])
    def test_rejects(self, kw):
        with pytest.raises(InvalidArgument):
            GViTConfig(**kw)

    def test_roundtrip(self):
        assert GViTConfig.from_dict(SMALL.to_dict()) == SMALL


class TestModel:
    def test_logit_shape(self, rng):
        assert predict_logits(rng.random((3, 16, 16, 3)), small_model()).shape == (3, 6)

    def test_other_input_sizes_are_pooled(self, rng):
        assert predict_logits(rng.random((2, 32, 32, 3)), small_model()).shape == (2, 6)

    def test_batch_of_one_only(self, rng):
        with pytest.raises(InvalidArgument):
            gvit_forward(rng.random((2, 16, 16, 3)), small_model())

    def test_repeated_inference_is_identical(self, rng):
        model, img = small_model(), rng.random((16, 16, 3))
        first = gvit_forward(img, model).probs
        for _ in range(99):
            assert np.array_equal(gvit_forward(img, model).probs, first)

    def test_training_mode_dropout_is_seeded(self, rng):
        model, img = small_model(), rng.random((16, 16, 3))
        a = gvit_forward(img, model, True, torch.Generator().manual_seed(1)).probs
        b = gvit_forward(img, model, True, torch.Generator().manual_seed(1)).probs
        c = gvit_forward(img, model, True, torch.Generator().manual_seed(2)).probs
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_attention_weights_exposed(self):
        model = small_model()
        w = []
        vit_encode(torch.zeros(16, 8, dtype=torch.float64), model, weights_out=w)
        assert len(w) == 2 and w[0].shape == (1, 2, 16, 16)

    def test_encode_rejects_wrong_token_count(self):
        with pytest.raises(InvalidArgument):
            vit_encode(torch.zeros(15, 8, dtype=torch.float64), small_model())


class TestGradients:
    def test_vit_encode(self):
        model = small_model(seed=2)
        tokens = torch.randn(16, 8, dtype=torch.float64, requires_grad=True)
        c = torch.randn(16, 8, dtype=torch.float64)
        tensors = {"tokens": tokens, **dict(model.named_parameters())}
        tensors = {k: v for k, v in tensors.items() if not k.startswith(("gc_", "reduce", "hidden", "classifier"))}
        rows = check_gradients(lambda: (vit_encode(tokens, model) * c).sum(), tensors)
        assert worst(rows)[-1] < TOL

    def test_forward_and_cross_entropy(self, rng):
        model = small_model(seed=3)
        img = rng.random((16, 16, 3))
        x = torch.from_numpy(img.transpose(2, 0, 1)[None].copy())
        label = 4

        def loss():
            return F.cross_entropy(model(x), torch.tensor([label - 1]))

        def public_loss():
            return cross_entropy(gvit_forward(img, model), label)

        assert loss().item() == pytest.approx(public_loss(), abs=1e-12)
        rows = check_gradients(loss, dict(model.named_parameters()), numeric_fn=public_loss)
        assert worst(rows)[-1] < TOL


class TestTraining:
    def data(self, n=24, seed=0):
        # two trivially separable classes: bright top half versus bright bottom half
        rng = np.random.default_rng(seed)
        labels = np.array([1, 6] * (n // 2))
        images = 0.1 + 0.05 * rng.random((n, 16, 16, 3))
        images[labels == 1, :8] += 0.7
        images[labels == 6, 8:] += 0.7
        return images, labels

    def test_learns_separable_classes(self):
        images, labels = self.data()
        hyper = GViTTrainConfig(lr=1e-2, batch_size=8, epochs=30)
        res = train_gvit(images, labels, SMALL, hyper)
        pred = predict_logits(images, res.model).argmax(1) + 1
        assert (pred == labels).mean() == 1.0
        assert res.history[-1]["loss"] < res.history[0]["loss"]

    def test_deterministic(self):
        images, labels = self.data()
        hyper = GViTTrainConfig(batch_size=8, epochs=2)
        a = train_gvit(images, labels, SMALL, hyper)
        b = train_gvit(images, labels, SMALL, hyper)
        assert a.history == b.history

    def test_label_range(self):
        images, labels = self.data()
        labels[0] = 7
        with pytest.raises(InvalidArgument):
            train_gvit(images, labels, SMALL, GViTTrainConfig(epochs=1))
