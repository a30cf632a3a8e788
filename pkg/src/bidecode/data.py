"""Synthetic symbol -> continuous-trajectory task.

Each vocabulary symbol owns a fixed prototype segment (2..4 frames of
D-channel values in [-1, 1], a linear ramp between two random endpoint
frames drawn once from the task seed). An utterance
is rendered by concatenating prototypes with a 1-frame linear crossfade at
each boundary, so the rendering oracle is exact and deterministic at zero
noise. Variable per-symbol durations force nontrivial attention
alignments.

Splits: train / in-domain test share the training length range; the
out-of-domain split uses strictly longer token sequences, standing in for
a challenging long-input test set.
"""

import io
from dataclasses import dataclass, field

import numpy as np

from .exceptions import BidecodeError, ConfigError, VocabularyError
from .model import FeatureSequence, SymbolSequence

SEG_LEN_RANGE = (2, 4)
PROTO_MIN_DIST = 0.3
TRAIN_LEN_RANGE = (3, 10)
OOD_LEN_RANGE = (15, 30)

DATASET_MAGIC = "bidecode-dataset v1"


@dataclass
class TaskSpec:
    vocab_size: int = 12
    feature_dim: int = 8
    noise_std: float = 0.01
    seed: int = 0
    prototypes: list = field(default_factory=list, repr=False)
    seg_lengths: list = field(default_factory=list, repr=False)


def build_task(vocab_size=12, feature_dim=8, noise_std=0.01, seed=0):
    """Materialize prototypes; resamples any pair closer than the floor."""
    if vocab_size < 2:
        raise ConfigError("vocab_size must be >= 2")
    if feature_dim < 1:
        raise ConfigError("feature_dim must be >= 1")
    if noise_std < 0:
        raise ConfigError("noise_std must be >= 0")
    rng = np.random.default_rng(seed)
    spec = TaskSpec(vocab_size, feature_dim, noise_std, seed)
    lo, hi = SEG_LEN_RANGE

    def sample():
        # Linear ramp between two random endpoint frames. Piecewise-smooth
        # targets keep the task learnable by a small decoder in free-running
        # mode; fully iid frames make every position a memorization problem
        # and free-run output collapses.
        L = int(rng.integers(lo, hi + 1))
        a, b = rng.uniform(-1.0, 1.0, size=(2, feature_dim))
        w = np.linspace(0.0, 1.0, L)[:, None]
        return (1.0 - w) * a + w * b

    def too_close(a, b):
        n = min(a.shape[0], b.shape[0])
        return np.mean(np.abs(a[:n] - b[:n])) < PROTO_MIN_DIST

    protos = []
    attempts = 0
    for _ in range(vocab_size):
        while True:
            cand = sample()
            if not any(too_close(cand, p) for p in protos):
                break
            attempts += 1
            if attempts >= 100:
                raise BidecodeError("prototype resampling exhausted after 100 attempts")
        protos.append(cand)
    spec.prototypes = protos
    spec.seg_lengths = [p.shape[0] for p in protos]
    return spec


def segment_bounds(spec, x):
    """Frame range [start, stop) occupied by each symbol after crossfade.

    Boundary frames are shared: segment i ends on the frame where segment
    i+1 starts.
    """
    bounds = []
    off = 0
    for tok in x.tokens:
        L = spec.seg_lengths[tok]
        bounds.append((off, off + L))
        off += L - 1
    return bounds


def oracle_render(spec, x):
    """Exact noise-free rendering of a symbol sequence."""
    for tok in x.tokens:
        if not (0 <= tok < spec.vocab_size):
            raise VocabularyError(f"token {tok} outside vocabulary")
    out = spec.prototypes[x.tokens[0]].copy()
    for tok in x.tokens[1:]:
        p = spec.prototypes[tok]
        out[-1] = 0.5 * (out[-1] + p[0])  # 1-frame linear crossfade
        out = np.concatenate([out, p[1:]])
    return FeatureSequence(out)


def gen_split(spec, name, count, length_range, seed):
    """Sample `count` utterances with lengths uniform in length_range.

    The train split gets gaussian noise of spec.noise_std added to its
    targets; test splits are noise-free.
    """
    if count < 1:
        raise ConfigError("count must be >= 1")
    rng = np.random.default_rng((spec.seed, seed))
    lo, hi = length_range
    pairs = []
    noisy = name == "train"
    for _ in range(count):
        T = int(rng.integers(lo, hi + 1))
        tokens = [int(t) for t in rng.integers(0, spec.vocab_size, size=T)]
        x = SymbolSequence(tokens)
        y = oracle_render(spec, x)
        if noisy and spec.noise_std > 0:
            y = FeatureSequence(
                y.frames + rng.normal(0.0, spec.noise_std, size=y.frames.shape)
            )
        pairs.append((x, y))
    return DatasetSplit(name=name, pairs=pairs, spec_seed=spec.seed)


@dataclass
class DatasetSplit:
    name: str
    pairs: list
    spec_seed: int = 0

    def __len__(self):
        return len(self.pairs)

    def __getitem__(self, i):
        return self.pairs[i]

    def __iter__(self):
        return iter(self.pairs)


def symbol_recovery(spec, yhat, x_true):
    """Recover tokens from a generated trajectory by nearest prototype.

    Segments yhat at the oracle boundaries implied by x_true; each segment
    is classified to the prototype with the smallest mean squared distance
    over the overlapping frames. Missing segments count as incorrect.
    """
    yhat = np.asarray(yhat, dtype=np.float64)
    if yhat.ndim != 2 or yhat.shape[0] < 1:
        raise BidecodeError("yhat must be a nonempty (T', D) matrix")
    recovered = []
    for start, stop in segment_bounds(spec, x_true):
        seg = yhat[start:stop]
        if seg.shape[0] == 0:
            recovered.append(-1)
            continue
        best, best_d = -1, np.inf
        for tok, proto in enumerate(spec.prototypes):
            n = min(seg.shape[0], proto.shape[0])
            d = np.mean((seg[:n] - proto[:n]) ** 2)
            if d < best_d:
                best, best_d = tok, d
        recovered.append(best)
    all_correct = recovered == list(x_true.tokens)
    return recovered, all_correct


# ---------------------------------------------------------------------------
# serialization: one textual record per utterance, 9 significant digits


def _fmt(v):
    return f"{v:.9g}"


def save_split(split, path):
    with open(path, "w") as f:
        f.write(serialize_split(split))


def serialize_split(split):
    buf = io.StringIO()
    buf.write(f"{DATASET_MAGIC}\n")
    buf.write(f"seed {split.spec_seed}\n")
    buf.write(f"split {split.name}\n")
    buf.write(f"count {len(split.pairs)}\n")
    for x, y in split.pairs:
        buf.write("tokens " + ",".join(str(t) for t in x.tokens) + "\n")
        buf.write(f"frames {len(y)}\n")
        for row in y.frames:
            buf.write(" ".join(_fmt(v) for v in row) + "\n")
    return buf.getvalue()


def load_split(path):
    with open(path) as f:
        lines = f.read().splitlines()
    return _parse_split(lines, path)


def _parse_split(lines, origin):
    def fail(msg):
        raise BidecodeError(f"{origin}: {msg}")

    if not lines or lines[0] != DATASET_MAGIC:
        fail("not a dataset file (bad header)")
    if not lines[1].startswith("seed ") or not lines[2].startswith("split "):
        fail("malformed header")
    seed = int(lines[1].split()[1])
    name = lines[2].split(maxsplit=1)[1]
    count = int(lines[3].split()[1])
    pairs = []
    i = 4
    for _ in range(count):
        if not lines[i].startswith("tokens "):
            fail(f"expected tokens line at {i + 1}")
        tokens = [int(t) for t in lines[i].split(maxsplit=1)[1].split(",")]
        tprime = int(lines[i + 1].split()[1])
        i += 2
        rows = [np.array([float(v) for v in lines[i + j].split()]) for j in range(tprime)]
        i += tprime
        pairs.append((SymbolSequence(tokens), FeatureSequence(np.stack(rows))))
    return DatasetSplit(name=name, pairs=pairs, spec_seed=seed)
