import json
import math

import numpy as np
import pytest
import torch

from urgr import InvalidArgument
from urgr.data import SynthConfig, render_empty_frame, synth_generate
from urgr.evaluation import (
    REFERENCE_HZ,
    InferenceResult,
    Pipeline,
    bench_throughput,
    data_sweep,
    eval_classifier,
    eval_sr,
    evaluate_manifest,
    jsonable,
    pipeline_predictions,
    urgr_infer,
)
from urgr.focus import FocusConfig, OracleDetector
from urgr.gvit import GViTConfig, build_gvit
from urgr.hqnet import HQNetConfig, build_hqnet

SMALL = GViTConfig(graph_grid=16, gc_dims=(8, 8), token_grid=4, embed_dim=8, depth=1, heads=2)


@pytest.fixture(scope="module")
def pipeline():
    return Pipeline(build_gvit(SMALL, seed=0), None, FocusConfig(target_size=32))


@pytest.fixture(scope="module")
def corpus():
    return synth_generate(SynthConfig(count=12, seed=5, height=96, width=128, k=480))


class TestClassifierReport:
    def test_oracle_predictions(self):
        labels = [1, 2, 3, 4, 5, 6] * 2
        r = eval_classifier(labels, [3.0] * 12, labels)
        assert r.accuracy == 1.0
        assert np.array_equal(np.diag(r.confusion), [2] * 6)

    def test_hand_computed_matrix(self):
        labels = [1, 1, 2, 3, 4, 6]
        preds = [1, 2, 2, 3, 5, 6]
        r = eval_classifier(labels, [0.5, 1.5, 2.5, 3.5, 4.5, 5.5], preds)
        expected = np.zeros((6, 6), dtype=int)
        for y, p in zip(labels, preds):
            expected[y - 1, p - 1] += 1
        assert r.confusion == expected.tolist()
        assert r.accuracy == pytest.approx(4 / 6)
        assert r.precision[1] == 0.5 and r.recall[0] == 0.5

    def test_row_sums_are_class_counts(self, rng):
        labels = rng.integers(1, 7, 50).tolist()
        preds = rng.integers(1, 7, 50).tolist()
        r = eval_classifier(labels, rng.uniform(0, 25, 50), preds)
        assert np.array(r.confusion).sum(axis=1).tolist() == [labels.count(k) for k in range(1, 7)]

    def test_bins_recombine_to_overall(self, rng):
        labels = rng.integers(1, 7, 80).tolist()
        preds = [y if rng.random() < 0.7 else 1 for y in labels]
        r = eval_classifier(labels, rng.uniform(0, 25, 80), preds)
        assert len(r.per_bin) == 26
        correct = sum(b["accuracy"] * b["count"] for b in r.per_bin if b["count"])
        assert correct / 80 == pytest.approx(r.accuracy, abs=1e-12)
        assert sum(b["count"] for b in r.per_bin) == 80

    def test_no_user_outside_matrix(self):
        r = eval_classifier([1, 2, 3], [1.0, 2.0, 3.0], [1, None, 3])
        assert r.no_user == 1
        assert r.no_user_by_class == [0, 1, 0, 0, 0, 0]
        assert np.array(r.confusion).sum() == 2
        assert r.accuracy == pytest.approx(2 / 3)

    def test_report_is_strict_json(self):
        r = eval_classifier([1, 2], [1.0, 25.0], [1, 2])
        text = json.dumps(r.to_dict(), allow_nan=False)
        assert json.loads(text)["per_bin"][25]["count"] == 1

    def test_length_mismatch(self):
        with pytest.raises(InvalidArgument):
            eval_classifier([1, 2], [1.0], [1, 2])


class TestSRReport:
    def pairs(self, rng, n=4):
        clean = rng.random((n, 8, 8, 3))
        return [(np.clip(c + 0.05 * rng.standard_normal(c.shape), 0, 1), c) for c in clean]

    def test_identity_has_zero_gain(self, rng):
        r = eval_sr(self.pairs(rng), lambda x: x)
        assert r.psnr_gain == 0.0
        assert r.mse == r.baseline_mse

    def test_oracle_is_infinite(self, rng):
        pairs = self.pairs(rng)
        lookup = {id(d): c for d, c in pairs}
        r = eval_sr(pairs, lambda x: lookup[id(x)])
        assert r.psnr == math.inf and r.mse == 0.0
        d = json.loads(json.dumps(r.to_dict(), allow_nan=False))
        assert d["model"]["psnr"] == "inf" and d["psnr_gain"] is None

    def test_dimension_change(self, rng):
        with pytest.raises(InvalidArgument):
            eval_sr(self.pairs(rng), lambda x: x[:4])

    def test_empty(self):
        with pytest.raises(InvalidArgument):
            eval_sr([], lambda x: x)


class TestSweep:
    def test_shape_and_statistics(self):
        rows = data_sweep(20, [0.25, 0.5, 1.0], lambda idx, seed: len(idx), lambda m: m / 20, k=3)
        assert [r["n_train"] for r in rows] == [5, 10, 20]
        assert [r["mean"] for r in rows] == [0.25, 0.5, 1.0]
        assert all(r["std"] == 0 and len(r["scores"]) == 3 for r in rows)
        assert all(r["monotone_so_far"] for r in rows)

    def test_full_fraction_uses_every_item_in_order(self):
        seen = []
        data_sweep(6, [1.0], lambda idx, seed: seen.append(idx), lambda m: 0.0, k=2)
        assert seen == [list(range(6))] * 2

    def test_seeded(self):
        run = lambda: data_sweep(30, [0.3], lambda idx, s: sum(idx), lambda m: m, k=4, seed=9)
        assert run() == run()

    @pytest.mark.parametrize("fractions", [[0.0], [1.5]])
    def test_bad_fraction(self, fractions):
        with pytest.raises(InvalidArgument):
            data_sweep(10, fractions, lambda i, s: 0, lambda m: 0)


class TestInference:
    def test_result_json(self, pipeline, corpus):
        s = corpus.samples[0]
        res = urgr_infer(corpus.load_image(0), s.detector(), pipeline)
        d = res.to_json()
        assert set(d) == {"class", "name", "certainty"}
        assert 1 <= d["class"] <= 6 and 0 < d["certainty"] <= 1
        assert abs(res.probs.sum() - 1) < 1e-6

    def test_no_user(self, pipeline):
        res = urgr_infer(render_empty_frame(0, SynthConfig(height=96, width=128, k=480)),
                         OracleDetector(None), pipeline)
        assert res.no_user and res.to_json() == {"no_user": True}

    def test_batched_matches_single_frames(self, pipeline, corpus):
        preds = pipeline_predictions(corpus, pipeline)
        single = [urgr_infer(corpus.load_image(i), s.detector(), pipeline).label
                  for i, s in enumerate(corpus.samples)]
        assert preds == single

    def test_with_enhancer(self, corpus):
        hq = build_hqnet(HQNetConfig(input_size=16, scale_factor=0.05, encoder_levels=2,
                                     token_grid=4, latent_grid=2))
        p = Pipeline(build_gvit(SMALL), hq, FocusConfig(target_size=32))
        assert p.prepare(corpus.load_image(1), corpus.samples[1].detector()).shape == (16, 16, 3)

    def test_manifest_report(self, pipeline, corpus):
        r = evaluate_manifest(corpus, pipeline)
        assert r.n == 12
        assert np.array(r.confusion).sum(axis=1).tolist() == list(corpus.class_histogram().values())

    def test_jsonable(self):
        assert jsonable({"a": [math.inf, np.float64(1.5)]}) == {"a": ["inf", 1.5]}
        assert InferenceResult(None).no_user


class TestBench:
    def test_schema(self, pipeline, corpus):
        frames = [(corpus.load_image(i), s.detector()) for i, s in enumerate(corpus.samples)]
        r = bench_throughput(frames[:10], pipeline, repetitions=1)
        assert set(r) == {"hz", "p50_ms", "p95_ms", "mean_ms", "n_frames", "repetitions", "reference_hz"}
        assert math.isfinite(r["hz"]) and r["hz"] > 0
        assert r["reference_hz"] == REFERENCE_HZ
        assert r["p95_ms"] >= r["p50_ms"]

    def test_needs_ten_frames(self, pipeline, corpus):
        frames = [(corpus.load_image(0), corpus.samples[0].detector())] * 9
        with pytest.raises(InvalidArgument):
            bench_throughput(frames, pipeline)
