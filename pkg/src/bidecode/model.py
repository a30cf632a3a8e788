"""Encoder-attention-decoder models with forward/backward decoding.

A single gated recurrent cell layer is used for both the encoder and the
decoders. Attention is location-sensitive: scores depend on the query
state, the encoder keys, and convolved features of the cumulative
alignment, which promotes monotonic progress over the input.

Two model flavors:

* ``DirectionalModel`` - one encoder + one decoder tagged with a decoding
  direction (left-to-right over target positions, or right-to-left).
* ``BiDecoderModel``   - one shared encoder + two independent decoder
  stacks, one per direction. Free-running inference touches only the
  forward stack; per-stack access counters make that checkable.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import fastops
from .autodiff import Tensor
from .exceptions import (
    DirectionMismatchError,
    ShapeMismatchError,
    VocabularyError,
)

FORWARD = "forward"
BACKWARD = "backward"


@dataclass
class ModelDims:
    """Topology of a model; checkpoints refuse to load across mismatches."""

    vocab_size: int = 12
    feature_dim: int = 8
    embed_dim: int = 8
    hidden_dim: int = 32  # encoder state size d_h
    state_dim: int = 32  # decoder state size d_s
    attn_dim: int = 16
    conv_filters: int = 8
    conv_width: int = 5

    def as_dict(self):
        return dict(self.__dict__)


@dataclass
class SymbolSequence:
    tokens: list

    def __post_init__(self):
        if len(self.tokens) < 1:
            raise ShapeMismatchError("SymbolSequence must be nonempty")

    def __len__(self):
        return len(self.tokens)


@dataclass
class FeatureSequence:
    frames: np.ndarray  # (T', D)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise ShapeMismatchError(
                f"FeatureSequence needs a (T', D) matrix, got {self.frames.shape}"
            )

    def __len__(self):
        return self.frames.shape[0]


def reverse_time(seq):
    """Reverse frame order; values untouched. An involution."""
    return FeatureSequence(seq.frames[::-1].copy())


# ---------------------------------------------------------------------------
# parameter stacks


class ParamStack:
    """Named parameter tensors plus an access counter.

    Every read during a pass goes through ``p()``, so tests can assert
    which stacks a code path touched.
    """

    def __init__(self, name):
        self.name = name
        self.params = {}
        self.access_count = 0

    def p(self, key):
        self.access_count += 1
        return self.params[key]

    def add(self, key, values):
        self.params[key] = Tensor(values, requires_grad=True)

    def named(self, prefix=""):
        return {prefix + k: v for k, v in self.params.items()}

    def freeze(self):
        for t in self.params.values():
            t.requires_grad = False

    def unfreeze(self):
        for t in self.params.values():
            t.requires_grad = True

    def reset_access_count(self):
        self.access_count = 0


def _glorot(rng, fan_out, fan_in):
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_out, fan_in))


def _add_gru(stack, prefix, d_state, d_in, rng):
    for gate in ("z", "r", "h"):
        stack.add(f"{prefix}.W{gate}", _glorot(rng, d_state, d_in + d_state))
        stack.add(f"{prefix}.b{gate}", np.zeros(d_state))


def _gru_step(stack, prefix, x_vec, h_prev):
    """One gated recurrent cell update; direction-agnostic math."""
    return fastops.gru_cell(
        stack.p(f"{prefix}.Wz"), stack.p(f"{prefix}.bz"),
        stack.p(f"{prefix}.Wr"), stack.p(f"{prefix}.br"),
        stack.p(f"{prefix}.Wh"), stack.p(f"{prefix}.bh"),
        x_vec, h_prev,
    )


class EncoderStack(ParamStack):
    def __init__(self, dims, rng, name="encoder"):
        super().__init__(name)
        self.dims = dims
        self.add("embed", _glorot(rng, dims.vocab_size, dims.embed_dim))
        _add_gru(self, "gru", dims.hidden_dim, dims.embed_dim, rng)


class DecoderStack(ParamStack):
    """Attention + recurrent cell + output heads for one direction."""

    def __init__(self, dims, direction, rng, name=None):
        super().__init__(name or f"decoder_{direction}")
        if direction not in (FORWARD, BACKWARD):
            raise DirectionMismatchError(f"unknown direction {direction!r}")
        self.dims = dims
        self.direction = direction
        d = dims
        self.add("attn.Wq", _glorot(rng, d.attn_dim, d.state_dim))
        self.add("attn.Wk", _glorot(rng, d.hidden_dim, d.attn_dim))
        # Location-feature init biased toward monotonic coverage: filter 0
        # taps the previously-attended neighbor (left for forward decoding,
        # right for backward), filter 1 the position itself, and the score
        # vector rewards accumulated mass on that neighbor while penalizing
        # mass already placed on the position. A fully random init tends to
        # leave the attention diffuse, and the decoder then degenerates into
        # copying its previous input frame instead of reading the encoder.
        step = -1 if direction == FORWARD else 1
        conv = 0.1 * _glorot(rng, d.conv_filters, d.conv_width)
        conv[0, d.conv_width // 2 + step] += 1.0
        conv[1, d.conv_width // 2] += 1.0
        half = d.attn_dim // 2
        Wl = 0.1 * _glorot(rng, d.conv_filters, d.attn_dim)
        Wl[0, :half] += 1.0
        Wl[1, half:] += 1.0
        v = np.empty(d.attn_dim)
        v[:half] = 4.0 / d.attn_dim
        v[half:] = -4.0 / d.attn_dim
        self.add("attn.Wl", Wl)
        self.add("attn.conv", conv)
        self.add("attn.b", np.zeros(d.attn_dim))
        self.add("attn.v", v)
        _add_gru(self, "gru", d.state_dim, d.feature_dim + d.hidden_dim, rng)
        # frame head reads the attention context as well as the state;
        # with the state alone the decoder degenerates into a previous-frame
        # lookup and free-running collapses
        self.add("frame.W", _glorot(rng, d.feature_dim, d.state_dim))
        self.add("frame.Wc", _glorot(rng, d.feature_dim, d.hidden_dim))
        self.add("frame.b", np.zeros(d.feature_dim))
        self.add("stop.W", _glorot(rng, 1, d.state_dim))
        self.add("stop.b", np.zeros(1))


# ---------------------------------------------------------------------------
# models


class DirectionalModel:
    """One full parameter set theta tagged with a decoding direction."""

    def __init__(self, dims, direction=FORWARD, seed=0):
        rng = np.random.default_rng(seed)
        self.dims = dims
        self.direction = direction
        self.encoder = EncoderStack(dims, rng)
        self.decoder = DecoderStack(dims, direction, rng)

    @property
    def kind(self):
        return "directional"

    def stacks(self):
        return [self.encoder, self.decoder]

    def named_params(self):
        out = {}
        out.update(self.encoder.named("encoder."))
        out.update(self.decoder.named("decoder."))
        return out

    def decoder_for(self, direction):
        if direction != self.direction:
            raise DirectionMismatchError(
                f"model decodes {self.direction}, asked for {direction}"
            )
        return self.decoder


class BiDecoderModel:
    """Shared encoder with one decoder stack per direction."""

    def __init__(self, dims, seed=0):
        rng = np.random.default_rng(seed)
        self.dims = dims
        self.direction = FORWARD  # inference direction
        self.encoder = EncoderStack(dims, rng)
        self.forward_decoder = DecoderStack(dims, FORWARD, rng)
        self.backward_decoder = DecoderStack(dims, BACKWARD, rng)

    @property
    def kind(self):
        return "bidecoder"

    def stacks(self):
        return [self.encoder, self.forward_decoder, self.backward_decoder]

    def named_params(self):
        out = {}
        out.update(self.encoder.named("encoder."))
        out.update(self.forward_decoder.named("decoder_forward."))
        out.update(self.backward_decoder.named("decoder_backward."))
        return out

    def decoder_for(self, direction):
        return self.forward_decoder if direction == FORWARD else self.backward_decoder

    @property
    def decoder(self):
        return self.forward_decoder


# ---------------------------------------------------------------------------
# forward passes


@dataclass
class EncoderOutput:
    hidden: Tensor  # (T, d_h)
    keys: Tensor  # (T, d_a), precomputed per decoder stack on demand

    @property
    def length(self):
        return self.hidden.shape[0]


@dataclass
class AttentionState:
    prev_alignment: Tensor  # length-T simplex vector
    cumulative: Tensor  # length-T nonnegative vector


@dataclass
class DecoderState:
    h: Tensor
    direction: str


def _stack_rows(tensors):
    """Stack 1-D tensors into a matrix row per tensor (recorded op)."""
    out = Tensor(np.stack([t.values for t in tensors]))
    tensors = tuple(tensors)

    def bwd(g):
        for i, t in enumerate(tensors):
            ad._accum(t, g[i])

    return ad._record("concat", tensors, out, bwd)


def encode(model, x):
    """Run the encoder recurrence over x with zero initial state."""
    enc = model.encoder
    V = enc.dims.vocab_size
    for tok in x.tokens:
        if not (0 <= tok < V):
            raise VocabularyError(f"token {tok} outside vocabulary of size {V}")
    h = Tensor(np.zeros(enc.dims.hidden_dim))
    rows = []
    embed = enc.p("embed")
    for tok in x.tokens:
        e = ad.slice_rows(embed, tok, tok + 1, squeeze=True)
        h = _gru_step(enc, "gru", e, h)
        rows.append(h)
    return _stack_rows(rows)


def make_encoder_output(dec_stack, hidden):
    """Precompute attention keys for one decoder stack."""
    keys = ad.matmul(hidden, dec_stack.p("attn.Wk"))
    return EncoderOutput(hidden=hidden, keys=keys)


def initial_attention_state(T):
    return AttentionState(
        prev_alignment=Tensor(np.full(T, 1.0 / T)),
        cumulative=Tensor(np.zeros(T)),
    )


def attend(dec_stack, state, enc, astate):
    """Location-sensitive attention step.

    Scores e_j = v . tanh(Wq s + keys_j + Wl f_j + b) with f the convolved
    cumulative alignment; returns (context, alignment, new AttentionState).
    """
    T = enc.length
    if astate.cumulative.shape != (T,):
        raise ShapeMismatchError(
            f"attention state length {astate.cumulative.shape} vs encoder {T}"
        )
    alignment = fastops.attention_alignment(
        astate.cumulative,
        dec_stack.p("attn.conv"),
        dec_stack.p("attn.Wl"),
        dec_stack.p("attn.Wq"),
        dec_stack.p("attn.b"),
        dec_stack.p("attn.v"),
        enc.keys,
        state.h,
    )
    context = ad.matmul(alignment, enc.hidden)
    new_state = AttentionState(
        prev_alignment=alignment,
        cumulative=ad.add(astate.cumulative, alignment),
    )
    return context, alignment, new_state


def initial_decoder_state(dims, direction):
    return DecoderState(h=Tensor(np.zeros(dims.state_dim)), direction=direction)


def go_frame(dims):
    """Boundary input frame for the first decoding step (all zeros)."""
    return Tensor(np.zeros(dims.feature_dim))


def decoder_step(dec_stack, prev_state, prev_frame, enc, astate):
    """One autoregressive decoder update; returns
    (new DecoderState, frame, stop_logit, alignment, new AttentionState)."""
    if prev_state.direction != dec_stack.direction:
        raise DirectionMismatchError(
            f"state tagged {prev_state.direction}, decoder is {dec_stack.direction}"
        )
    context, alignment, astate = attend(dec_stack, prev_state, enc, astate)
    inp = ad.concat([prev_frame, context])
    h = _gru_step(dec_stack, "gru", inp, prev_state.h)
    frame = fastops.affine2(
        dec_stack.p("frame.W"), h, dec_stack.p("frame.Wc"), context, dec_stack.p("frame.b")
    )
    stop = fastops.affine(dec_stack.p("stop.W"), h, dec_stack.p("stop.b"))
    return DecoderState(h, dec_stack.direction), frame, stop, alignment, astate


@dataclass
class PassResult:
    """Decoder pass outputs indexed by absolute target position 1..T'.

    Backward-direction passes are stored time-reversed into position
    order, so frames[t], states[t] and alignments[t] always refer to
    target position t+1 regardless of decoding direction.
    """

    direction: str
    frames: list = field(default_factory=list)  # Tensor (D,) per position
    stop_logits: list = field(default_factory=list)  # Tensor (1,) per position
    states: list = field(default_factory=list)  # DecoderState per position
    alignments: list = field(default_factory=list)  # Tensor (T,) per position

    def __len__(self):
        return len(self.frames)

    def frames_matrix(self):
        return np.stack([f.values for f in self.frames])

    def alignment_matrix(self):
        return np.stack([a.values for a in self.alignments])

    def frames_tensor(self):
        return ad.concat(self.frames)


def run_teacher_forced(dec_stack, enc, y, sampling_p=0.0, rng=None):
    """Teacher-forced decoder pass over target y, stored by position.

    Forward direction feeds y_{t-1} at step t; backward iterates t from T'
    down to 1 feeding y_{t+1}. With sampling_p > 0, each step's ground
    truth feed is replaced by the model's previous output with that
    probability (scheduled sampling; rng required).
    """
    if y.frames.shape[1] != dec_stack.dims.feature_dim:
        raise ShapeMismatchError(
            f"target dim {y.frames.shape[1]} vs model {dec_stack.dims.feature_dim}"
        )
    if sampling_p > 0.0 and rng is None:
        raise ValueError("sampling_p > 0 requires an rng")
    Tprime = len(y)
    forward = dec_stack.direction == FORWARD
    order = range(Tprime) if forward else range(Tprime - 1, -1, -1)

    state = initial_decoder_state(dec_stack.dims, dec_stack.direction)
    astate = initial_attention_state(enc.length)
    result = PassResult(direction=dec_stack.direction)
    result.frames = [None] * Tprime
    result.stop_logits = [None] * Tprime
    result.states = [None] * Tprime
    result.alignments = [None] * Tprime

    prev_frame = go_frame(dec_stack.dims)
    last_pred = None
    for t in order:
        feed = prev_frame
        if sampling_p > 0.0 and last_pred is not None and rng.random() < sampling_p:
            feed = last_pred
        state, frame, stop, alignment, astate = decoder_step(
            dec_stack, state, feed, enc, astate
        )
        result.frames[t] = frame
        result.stop_logits[t] = stop
        result.states[t] = state
        result.alignments[t] = alignment
        last_pred = frame
        # next position is t+1 (forward, feeds y_t) or t-1 (backward,
        # feeds y_t as its future neighbor): both feed y at position t
        prev_frame = Tensor(y.frames[t])
    return result


def teacher_forced_pass(model, x, y, direction=None, sampling_p=0.0, rng=None):
    """Encode x then run a teacher-forced decoder pass in one direction."""
    direction = direction or model.direction
    dec = model.decoder_for(direction)
    hidden = encode(model, x)
    enc = make_encoder_output(dec, hidden)
    return run_teacher_forced(dec, enc, y, sampling_p=sampling_p, rng=rng)


def free_run_decode(model, x, max_len, stop_threshold=0.5):
    """Autoregressive generation feeding the model its own output frames.

    Halts when sigmoid(stop_logit) > stop_threshold or at max_len. For a
    BiDecoderModel only the forward decoder parameters are touched. For a
    backward-tagged DirectionalModel the generated frames are in its own
    decoding order (reversed time).
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    if not (0.0 < stop_threshold <= 1.0):
        raise ValueError("stop_threshold must be in (0, 1]")
    dec = model.decoder  # forward stack on a BiDecoderModel
    with ad.no_grad():
        hidden = encode(model, x)
        enc = make_encoder_output(dec, hidden)
        state = initial_decoder_state(dec.dims, dec.direction)
        astate = initial_attention_state(enc.length)
        result = PassResult(direction=dec.direction)
        prev_frame = go_frame(dec.dims)
        for _ in range(max_len):
            state, frame, stop, alignment, astate = decoder_step(
                dec, state, prev_frame, enc, astate
            )
            result.frames.append(frame)
            result.stop_logits.append(stop)
            result.states.append(state)
            result.alignments.append(alignment)
            prev_frame = frame
            if _sigmoid_scalar(stop.values[0]) > stop_threshold:
                break
    return result


def _sigmoid_scalar(v):
    return 1.0 / (1.0 + np.exp(-v)) if v >= 0 else np.exp(v) / (1.0 + np.exp(v))
