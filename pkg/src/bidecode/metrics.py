"""Evaluation metrics: exposure bias, intelligibility proxy, agreement.

All metrics are pure functions of their inputs. Records serialize as one
JSON object per line so runs can be appended, diffed, and plotted by
external tools.
"""

import json
import statistics
from dataclasses import dataclass, field, asdict

import numpy as np

from . import model as M
from .data import symbol_recovery
from .exceptions import SeedMismatchError, ShapeMismatchError


@dataclass
class MetricsRecord:
    split: str
    teacher_forced_mse: float
    free_run_mse: float
    per_position_mse: list
    alignment_agreement: float  # None for single-decoder models
    intelligible_rate: float
    case_count: int
    model_tag: str = ""
    seed: int = 0
    step: int = 0

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line):
        return cls(**json.loads(line))


def exposure_bias_gap(record):
    """Free-run error minus teacher-forced error on the same split."""
    return record.free_run_mse - record.teacher_forced_mse


def alignment_agreement(pass_fwd, pass_bwd):
    """Mean absolute difference between two position-indexed alignment
    matrices of the same utterance."""
    a = pass_fwd.alignment_matrix() if isinstance(pass_fwd, M.PassResult) else np.asarray(pass_fwd)
    b = pass_bwd.alignment_matrix() if isinstance(pass_bwd, M.PassResult) else np.asarray(pass_bwd)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"alignment shapes differ: {a.shape} vs {b.shape}")
    return float(np.mean(np.abs(a - b)))


@dataclass
class AgreementReport:
    mean: float
    per_utterance: list = field(default_factory=list)


def free_run_frames(model, x, length):
    """Free-run frames in absolute position order, forced to `length`."""
    out = M.free_run_decode(model, x, max_len=length, stop_threshold=1.0)
    frames = out.frames_matrix()
    if out.direction == M.BACKWARD:
        frames = frames[::-1]
    return frames


def eval_model(model, split, spec, model_tag="", seed=0, step=0):
    """Aggregate teacher-forced vs free-run error, per-position free-run
    error, the intelligibility proxy, and (for twin decoders) alignment
    agreement over one split.

    Free-run decoding is forced to the target length (unreachable stop
    threshold) so errors are position-comparable across models.
    """
    if len(split) == 0:
        raise ValueError("split is empty")
    tf_sq, fr_sq = [], []
    pos_sq = {}
    n_intelligible = 0
    agreements = []
    bidec = model.kind == "bidecoder"
    for x, y in split:
        tprime = len(y)
        res_f = M.teacher_forced_pass(model, x, y, direction=model.direction)
        pred_tf = res_f.frames_matrix()
        tf_sq.append(np.mean((pred_tf - y.frames) ** 2))
        if bidec:
            res_b = M.teacher_forced_pass(model, x, y, direction=M.BACKWARD)
            agreements.append(alignment_agreement(res_f, res_b))

        fr = free_run_frames(model, x, tprime)
        err = (fr - y.frames) ** 2
        fr_sq.append(np.mean(err))
        per_pos = err.mean(axis=1)
        for t in range(tprime):
            pos_sq.setdefault(t, []).append(per_pos[t])
        _, ok = symbol_recovery(spec, fr, x)
        n_intelligible += int(ok)

    max_t = max(pos_sq) + 1
    per_position = [float(np.mean(pos_sq[t])) for t in range(max_t)]
    return MetricsRecord(
        split=split.name,
        teacher_forced_mse=float(np.mean(tf_sq)),
        free_run_mse=float(np.mean(fr_sq)),
        per_position_mse=per_position,
        alignment_agreement=float(np.mean(agreements)) if agreements else None,
        intelligible_rate=n_intelligible / len(split),
        case_count=len(split),
        model_tag=model_tag,
        seed=seed,
        step=step,
    )


def compare_runs(records_a, records_b, metric):
    """Paired per-seed comparison of one metric between two runs."""
    by_seed_a = {r.seed: r for r in records_a}
    by_seed_b = {r.seed: r for r in records_b}
    if set(by_seed_a) != set(by_seed_b):
        raise SeedMismatchError(
            f"seed sets differ: {sorted(by_seed_a)} vs {sorted(by_seed_b)}"
        )
    seeds = sorted(by_seed_a)
    vals_a = [getattr(by_seed_a[s], metric) for s in seeds]
    vals_b = [getattr(by_seed_b[s], metric) for s in seeds]
    deltas = [a - b for a, b in zip(vals_a, vals_b)]
    return {
        "metric": metric,
        "seeds": seeds,
        "values_a": vals_a,
        "values_b": vals_b,
        "deltas": deltas,
        "median_a": statistics.median(vals_a),
        "median_b": statistics.median(vals_b),
        "median_delta": statistics.median(deltas),
        "n_a_lower": sum(d < 0 for d in deltas),
        "n_b_lower": sum(d > 0 for d in deltas),
        "n_tied": sum(d == 0 for d in deltas),
    }


def save_records(records, path):
    with open(path, "w") as f:
        for r in records:
            f.write(r.to_json() + "\n")


def append_record(record, path):
    with open(path, "a") as f:
        f.write(record.to_json() + "\n")


def load_records(path):
    with open(path) as f:
        return [MetricsRecord.from_json(line) for line in f if line.strip()]
