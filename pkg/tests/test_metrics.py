"""Evaluation metrics: exposure-bias gap, agreement, paired comparison."""

import json

import numpy as np
import pytest

from bidecode import data as D
from bidecode import metrics as MT
from bidecode import model as M
from bidecode.exceptions import SeedMismatchError, ShapeMismatchError
from bidecode.metrics import MetricsRecord
from bidecode.model import (
    FORWARD,
    BiDecoderModel,
    DirectionalModel,
    SymbolSequence,
)


def _record(**kw):
    base = dict(split="in_domain_test", teacher_forced_mse=0.1, free_run_mse=0.3,
                per_position_mse=[0.1, 0.2], alignment_agreement=None,
                intelligible_rate=0.5, case_count=2, model_tag="baseline",
                seed=0, step=10)
    base.update(kw)
    return MetricsRecord(**base)


# ---------------------------------------------------------------------------
# exposure bias gap


def test_gap_equal_fields_zero():
    assert MT.exposure_bias_gap(_record(free_run_mse=0.1)) == 0.0


def test_gap_fabricated_record():
    assert MT.exposure_bias_gap(_record(teacher_forced_mse=0.0, free_run_mse=0.2)) \
        == pytest.approx(0.2)


# ---------------------------------------------------------------------------
# alignment agreement


def test_agreement_identical_zero():
    a = np.full((3, 4), 0.25)
    assert MT.alignment_agreement(a, a.copy()) == 0.0


def test_agreement_uniform_vs_onehot():
    # T=2 input positions, T'=1 output position
    fwd = np.array([[0.5, 0.5]])
    bwd = np.array([[1.0, 0.0]])
    assert MT.alignment_agreement(fwd, bwd) == pytest.approx(0.5)


def test_agreement_metric_properties():
    rng = np.random.default_rng(0)
    a, b = rng.dirichlet(np.ones(5), size=4), rng.dirichlet(np.ones(5), size=4)
    d = MT.alignment_agreement(a, b)
    assert d >= 0
    assert d == pytest.approx(MT.alignment_agreement(b, a), abs=1e-15)
    assert 0 <= d <= 2


def test_agreement_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        MT.alignment_agreement(np.zeros((2, 3)), np.zeros((3, 2)))


# ---------------------------------------------------------------------------
# eval_model


def test_eval_model_deterministic(toy_dims, toy_task):
    split = D.gen_split(toy_task, "in_domain_test", 4, (2, 4), 5)
    m = DirectionalModel(toy_dims, FORWARD, seed=0)
    r1 = MT.eval_model(m, split, toy_task, model_tag="baseline")
    r2 = MT.eval_model(m, split, toy_task, model_tag="baseline")
    assert r1.to_json() == r2.to_json()
    assert r1.free_run_mse >= 0 and 0 <= r1.intelligible_rate <= 1
    assert len(r1.per_position_mse) == max(len(y) for _, y in split)


def test_eval_model_bidecoder_reports_agreement(toy_dims, toy_task):
    split = D.gen_split(toy_task, "in_domain_test", 3, (2, 4), 5)
    bm = BiDecoderModel(toy_dims, seed=1)
    rec = MT.eval_model(bm, split, toy_task, model_tag="decoder_reg")
    assert rec.alignment_agreement is not None and rec.alignment_agreement >= 0
    m = DirectionalModel(toy_dims, FORWARD, seed=1)
    rec2 = MT.eval_model(m, split, toy_task, model_tag="baseline")
    assert rec2.alignment_agreement is None


def test_free_run_frames_reverses_backward_output(toy_dims, toy_task):
    split = D.gen_split(toy_task, "in_domain_test", 1, (3, 3), 6)
    x, y = split[0]
    m_b = DirectionalModel(toy_dims, M.BACKWARD, seed=2)
    frames = MT.free_run_frames(m_b, x, len(y))
    raw = M.free_run_decode(m_b, x, max_len=len(y), stop_threshold=1.0)
    assert np.array_equal(frames, raw.frames_matrix()[::-1])


# ---------------------------------------------------------------------------
# compare_runs


def test_compare_identical_all_zero():
    recs = [_record(seed=s, free_run_mse=0.1 * (s + 1)) for s in range(5)]
    summary = MT.compare_runs(recs, list(recs), "free_run_mse")
    assert all(d == 0 for d in summary["deltas"])
    assert summary["median_delta"] == 0


def test_compare_known_medians():
    a = [_record(seed=s, free_run_mse=v) for s, v in enumerate([0.3, 0.2, 0.5])]
    b = [_record(seed=s, free_run_mse=v) for s, v in enumerate([0.1, 0.4, 0.1])]
    summary = MT.compare_runs(a, b, "free_run_mse")
    assert summary["median_a"] == pytest.approx(0.3)
    assert summary["median_b"] == pytest.approx(0.1)
    # deltas a-b: 0.2, -0.2, 0.4 -> median 0.2, a lower on 1 seed
    assert summary["median_delta"] == pytest.approx(0.2)
    assert summary["n_a_lower"] == 1 and summary["n_b_lower"] == 2


def test_compare_seed_mismatch():
    a = [_record(seed=0)]
    b = [_record(seed=1)]
    with pytest.raises(SeedMismatchError):
        MT.compare_runs(a, b, "free_run_mse")


# ---------------------------------------------------------------------------
# record serialization


def test_record_json_roundtrip(tmp_path):
    rec = _record(alignment_agreement=0.12)
    rt = MetricsRecord.from_json(rec.to_json())
    assert rt == rec
    path = tmp_path / "metrics.jsonl"
    MT.append_record(rec, path)
    MT.append_record(_record(seed=1), path)
    loaded = MT.load_records(path)
    assert len(loaded) == 2 and loaded[0] == rec
    # line-delimited JSON objects
    lines = path.read_text().strip().split("\n")
    assert all(isinstance(json.loads(ln), dict) for ln in lines)
