"""Threshold-sweep metrics against brute-force pixel counting."""

import numpy as np
import pytest

from hrcam.cams import CamMap
from hrcam.metrics import (
    THRESHOLDS,
    ConfusionCounts,
    binarize,
    confusion,
    evaluate_method,
    metrics_from_counts,
    ordering_report,
    read_metrics_csv,
    sweep,
    write_metrics_csv,
)
from hrcam.simdata import Sample


def norm_map(values):
    return CamMap(np.asarray(values, dtype=np.float64), 1, "hrcam", normalized=True)


def brute_force_row(values, mask, t):
    """Python-loop pixel counting with the documented metric formulas."""
    tp = fp = tn = fn = 0
    h, w = values.shape
    for y in range(h):
        for x in range(w):
            pred = values[y, x] > t
            truth = bool(mask[y, x])
            if pred and truth:
                tp += 1
            elif pred and not truth:
                fp += 1
            elif not pred and truth:
                fn += 1
            else:
                tn += 1
    sens = tp / (tp + fn) if tp + fn else 0.0
    spec = tn / (tn + fp) if tn + fp else 0.0
    prec = tp / (tp + fp) if tp + fp else 0.0
    fall = 1.0 - spec if fp + tn else 0.0
    return (tp, fp, tn, fn), (sens, spec, prec, fall)


class TestBinarize:
    def test_all_ones_all_positive(self):
        assert binarize(norm_map(np.ones((3, 3))), 0.9).all()

    def test_all_zeros_all_negative(self):
        assert not binarize(norm_map(np.zeros((3, 3))), 0.1).any()

    def test_fixed_case(self):
        out = binarize(norm_map([[0.9, 0.2], [0.4, 0.8]]), 0.5)
        assert np.array_equal(out, [[True, False], [False, True]])

    def test_strict_inequality(self):
        assert not binarize(norm_map([[0.5]]), 0.5).any()

    def test_rejects_unnormalized(self):
        with pytest.raises(ValueError):
            binarize(CamMap(np.zeros((2, 2)), 1, "hrcam", normalized=False), 0.5)

    def test_rejects_threshold_out_of_range(self):
        with pytest.raises(ValueError):
            binarize(norm_map(np.zeros((2, 2))), 1.0)


class TestConfusion:
    def test_perfect_match(self):
        m = np.array([[1, 0], [0, 1]], dtype=bool)
        c = confusion(m, m)
        assert (c.tp, c.tn, c.fp, c.fn) == (2, 2, 0, 0)

    def test_inverted(self):
        m = np.array([[1, 0], [0, 1]], dtype=bool)
        c = confusion(~m, m)
        assert c.tp == 0 and c.tn == 0 and c.fp == 2 and c.fn == 2

    def test_fixed_case(self):
        c = confusion(np.array([[1, 0], [1, 1]], dtype=bool),
                      np.array([[1, 0], [0, 1]], dtype=bool))
        assert (c.tp, c.fp, c.tn, c.fn) == (2, 1, 1, 0)

    def test_counts_conserve_pixels(self):
        rng = np.random.default_rng(0)
        a = rng.uniform(size=(8, 8)) > 0.5
        b = rng.uniform(size=(8, 8)) > 0.5
        assert confusion(a, b).total == 64

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValueError):
            confusion(np.zeros((2, 2), dtype=bool), np.zeros((3, 2), dtype=bool))


class TestMetricsFromCounts:
    def test_perfect(self):
        m = metrics_from_counts(ConfusionCounts(2, 0, 2, 0))
        assert m == {"sensitivity": 1.0, "specificity": 1.0, "precision": 1.0, "fallout": 0.0}

    def test_fixed_case(self):
        m = metrics_from_counts(ConfusionCounts(tp=2, fp=1, tn=1, fn=0))
        assert m["sensitivity"] == 1.0
        assert m["specificity"] == 0.5
        assert m["precision"] == 2.0 / 3.0
        assert m["fallout"] == 0.5

    def test_zero_over_zero_reports_zero(self):
        m = metrics_from_counts(ConfusionCounts(tp=0, fp=0, tn=4, fn=2))
        assert m["precision"] == 0.0

    def test_fallout_is_exact_complement(self):
        m = metrics_from_counts(ConfusionCounts(tp=0, fp=2, tn=1, fn=1))
        assert m["fallout"] == 1.0 - m["specificity"]


class TestSweep:
    def _random_case(self, seed):
        rng = np.random.default_rng(seed)
        values = rng.uniform(size=(8, 8))
        values -= values.min()
        values /= values.max()
        mask = rng.uniform(size=(8, 8)) > 0.7
        if not mask.any():
            mask[0, 0] = True
        if mask.all():
            mask[0, 0] = False
        return norm_map(values), mask

    def test_nine_thresholds(self):
        cam, mask = self._random_case(1)
        result = sweep(cam, mask)
        assert [r.threshold for r in result.per_threshold] == list(THRESHOLDS)

    @pytest.mark.parametrize("seed", range(10))
    def test_monotonicity(self, seed):
        cam, mask = self._random_case(seed)
        rows = sweep(cam, mask).per_threshold
        for a, b in zip(rows, rows[1:]):
            assert a.sensitivity >= b.sensitivity
            assert a.specificity <= b.specificity

    @pytest.mark.parametrize("seed", range(100))
    def test_matches_brute_force_exactly(self, seed):
        cam, mask = self._random_case(seed + 1000)
        result = sweep(cam, mask)
        for row in result.per_threshold:
            counts, expected = brute_force_row(cam.values, mask, row.threshold)
            assert sum(counts) == mask.size
            assert (row.sensitivity, row.specificity, row.precision, row.fallout) == expected

    def test_fallout_complement_every_row(self):
        cam, mask = self._random_case(7)
        result = sweep(cam, mask)
        for row in result.per_threshold:
            assert row.fallout == 1.0 - row.specificity
        assert result.means["fallout"] == 1.0 - result.means["specificity"]

    def test_rejects_degenerate_masks(self):
        cam, _ = self._random_case(2)
        with pytest.raises(ValueError):
            sweep(cam, np.zeros((8, 8), dtype=bool))
        with pytest.raises(ValueError):
            sweep(cam, np.ones((8, 8), dtype=bool))


class TestEvaluateMethod:
    def _samples(self, n, seed=0):
        rng = np.random.default_rng(seed)
        out = []
        for _ in range(n):
            mask = np.zeros((8, 8), dtype=np.uint8)
            mask[2:5, 2:5] = 1
            image = rng.uniform(size=(1, 8, 8)).astype(np.float32)
            out.append(Sample(image, 1, mask))
        return out

    @staticmethod
    def _cam_fn(sample):
        values = sample.image[0].astype(np.float64)
        values -= values.min()
        values /= values.max()
        return CamMap(values, 1, "hrcam", normalized=True)

    def test_single_sample_equals_its_sweep(self):
        samples = self._samples(1)
        dataset = evaluate_method(samples, self._cam_fn)
        single = sweep(self._cam_fn(samples[0]), samples[0].mask)
        for a, b in zip(dataset.per_threshold, single.per_threshold):
            assert (a.sensitivity, a.specificity, a.precision, a.fallout) == \
                   (b.sensitivity, b.specificity, b.precision, b.fallout)
        assert dataset.means == single.means

    def test_averages_across_samples(self):
        samples = self._samples(3, seed=5)
        dataset = evaluate_method(samples, self._cam_fn)
        sweeps = [sweep(self._cam_fn(s), s.mask) for s in samples]
        for i in range(len(THRESHOLDS)):
            expected = sum(s.per_threshold[i].sensitivity for s in sweeps) / 3
            assert dataset.per_threshold[i].sensitivity == expected

    def test_skips_empty_masks(self):
        samples = self._samples(2)
        samples.append(Sample(samples[0].image, 1, np.zeros((8, 8), dtype=np.uint8)))
        dataset = evaluate_method(samples, self._cam_fn)
        reference = evaluate_method(samples[:2], self._cam_fn)
        assert dataset.means == reference.means

    def test_thread_count_does_not_change_results(self, monkeypatch):
        samples = self._samples(4, seed=9)
        seq = evaluate_method(samples, self._cam_fn)
        monkeypatch.setenv("HRCAM_THREADS", "4")
        par = evaluate_method(samples, self._cam_fn)
        assert seq.means == par.means
        for a, b in zip(seq.per_threshold, par.per_threshold):
            assert (a.sensitivity, a.specificity, a.precision, a.fallout) == \
                   (b.sensitivity, b.specificity, b.precision, b.fallout)


class TestCsvRoundTrip:
    def test_exact_reload(self, tmp_path):
        rng = np.random.default_rng(11)
        values = rng.uniform(size=(8, 8))
        values -= values.min()
        values /= values.max()
        mask = np.zeros((8, 8), dtype=bool)
        mask[1:4, 1:4] = True
        by_method = {"hrcam": sweep(norm_map(values), mask),
                     "zhou": sweep(norm_map(values * values), mask)}
        path = tmp_path / "metrics.csv"
        write_metrics_csv(path, by_method)
        back = read_metrics_csv(path)
        assert set(back) == {"hrcam", "zhou"}
        for method in by_method:
            assert back[method].means == by_method[method].means
            for a, b in zip(back[method].per_threshold, by_method[method].per_threshold):
                assert (a.threshold, a.sensitivity, a.specificity, a.precision, a.fallout) == \
                       (b.threshold, b.sensitivity, b.specificity, b.precision, b.fallout)


class TestOrderingReport:
    @staticmethod
    def _metrics(sens, spec, prec, fall):
        from hrcam.metrics import EvalMetrics, ThresholdRow
        rows = [ThresholdRow(t, sens, spec, prec, fall) for t in THRESHOLDS]
        return EvalMetrics(rows, {"sensitivity": sens, "specificity": spec,
                                  "precision": prec, "fallout": fall})

    def test_expected_ordering_passes(self):
        by_method = {
            "hrcam": self._metrics(0.8, 0.9, 0.2, 0.1),
            "gradcam": self._metrics(0.6, 0.85, 0.1, 0.15),
            "zhou": self._metrics(0.5, 0.8, 0.05, 0.2),
        }
        ok, lines = ordering_report(by_method)
        assert ok and len(lines) == 4

    def test_violated_ordering_fails(self):
        by_method = {
            "hrcam": self._metrics(0.5, 0.8, 0.05, 0.2),
            "gradcam": self._metrics(0.6, 0.85, 0.1, 0.15),
            "zhou": self._metrics(0.8, 0.9, 0.2, 0.1),
        }
        ok, _ = ordering_report(by_method)
        assert not ok

    def test_ties_pass(self):
        tied = self._metrics(0.5, 0.5, 0.5, 0.5)
        ok, _ = ordering_report({"hrcam": tied, "gradcam": tied, "zhou": tied})
        assert ok

    def test_missing_method_raises(self):
        with pytest.raises(KeyError):
            ordering_report({"hrcam": self._metrics(0.5, 0.5, 0.5, 0.5)})
