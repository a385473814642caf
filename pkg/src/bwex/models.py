"""Waveform-to-waveform sequence models built from the nn toolkit.

Two architectures map an upsampled-narrowband mu-law level sequence to a
distribution over output levels at every sample:

* `Srnn` - a plain sample-level stack (embedding, two LSTM layers, two FF
  layers), strictly causal in its input.
* `Hrnn` - a hierarchy of tiers, each running at its own temporal
  resolution. Frame tiers consume non-overlapping frames of decoded
  amplitudes (optionally concatenated with lookahead frames) through LSTM
  layers and fan their hidden states out into per-step conditioning
  vectors for the tier below. The sample tier combines embedding vectors
  with the conditioning stream through FF layers into 256-way logits. An
  optional conditional tier on top consumes frame-level feature tracks
  (e.g. MFCCs) instead of waveform frames.

Both models are non-autoregressive: one forward pass yields logits for
every output position, and generation is a deterministic argmax.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import nn
from .dsp import ConditionTrack, QuantizedWaveform, decode_levels

PAD_LEVEL = 128  # mu-law level of zero amplitude

_TIER_KINDS = ("sample", "intermediate", "top", "conditional")


@dataclasses.dataclass(frozen=True)
class TierSpec:
    """One resolution level of the hierarchy.

    frame_size: samples covered by one step of this tier.
    n_concat: consecutive frames concatenated into each step input; values
        above 1 let the tier see that many frames of lookahead.
    width: LSTM units (frame tiers) or FF units (sample tier); None uses
        the model-wide hidden size.
    """

    frame_size: int
    n_concat: int = 1
    kind: str = "intermediate"
    width: int | None = None

    def __post_init__(self):
        if self.kind not in _TIER_KINDS:
            raise ValueError(f"unknown tier kind {self.kind!r}")
        if self.frame_size < 1 or self.n_concat < 1:
            raise ValueError("frame_size and n_concat must be positive")
        if self.kind == "sample" and self.frame_size != 1:
            raise ValueError("sample tier must have frame_size 1")


@dataclasses.dataclass(frozen=True)
class SrnnConfig:
    """Plain sample-level model: embed -> 2 LSTM layers -> 2 FF layers."""

    embed_dim: int = 256
    hidden: int = 1024
    n_lstm_layers: int = 2
    vocab: int = 256
    strategy: str = "hf"
    hf_gain: float = 4.0

    def __post_init__(self):
        if self.strategy not in ("wb", "hf"):
            raise ValueError(f"strategy must be 'wb' or 'hf', got {self.strategy!r}")
        if self.vocab != 256:
            raise ValueError("vocab is fixed at 256 (mu-law alphabet)")

    # SRNN consumes raw sequences: no length constraints, no lookahead.
    @property
    def time_multiple(self) -> int:
        return 1

    @property
    def lookahead(self) -> int:
        return 0


@dataclasses.dataclass(frozen=True)
class HrnnConfig:
    """Tier stack ordered bottom (sample) to top, plus global widths.

    The default factory `build()` reproduces the reference system:
    three tiers with frame sizes (16, 4, 1), two concatenated frames on
    both frame tiers, and four concatenated embeddings at the sample tier.
    """

    tiers: tuple[TierSpec, ...]
    embed_dim: int = 256
    hidden: int = 1024
    vocab: int = 256
    strategy: str = "hf"
    hf_gain: float = 4.0
    cond_dim: int | None = None
    cond_window_ms: float | None = None

    def __post_init__(self):
        if self.strategy not in ("wb", "hf"):
            raise ValueError(f"strategy must be 'wb' or 'hf', got {self.strategy!r}")
        if self.vocab != 256:
            raise ValueError("vocab is fixed at 256 (mu-law alphabet)")
        tiers = tuple(self.tiers)
        if len(tiers) < 2:
            raise ValueError("need at least a sample tier and one frame tier")
        if tiers[0].kind != "sample":
            raise ValueError("the bottom tier must be the sample tier")
        if any(t.kind == "sample" for t in tiers[1:]):
            raise ValueError("exactly one sample tier is allowed, at the bottom")
        if any(t.kind == "conditional" for t in tiers[:-1]):
            raise ValueError("a conditional tier may only sit at the top")
        for lower, upper in zip(tiers[:-1], tiers[1:]):
            if upper.frame_size <= lower.frame_size:
                raise ValueError("frame sizes must strictly increase up the stack")
            if upper.frame_size % lower.frame_size != 0:
                raise ValueError(
                    f"frame size {upper.frame_size} not divisible by {lower.frame_size}"
                )
        if tiers[-1].kind == "conditional":
            if self.cond_dim is None or self.cond_dim < 1:
                raise ValueError("a conditional tier requires cond_dim")
            if tiers[-1].n_concat != 1:
                raise ValueError("the conditional tier consumes one feature frame per step")
        object.__setattr__(self, "tiers", tiers)

    @classmethod
    def build(
        cls,
        frame_sizes: tuple[int, ...] = (16, 4),
        n_concat: tuple[int, ...] = (2, 2, 4),
        hidden: int = 1024,
        embed_dim: int = 256,
        strategy: str = "hf",
        hf_gain: float = 4.0,
        cond_frame_shift: int | None = None,
        cond_dim: int | None = None,
        cond_window_ms: float | None = None,
    ) -> "HrnnConfig":
        """Assemble a config from top-down frame sizes.

        frame_sizes lists the waveform frame tiers top-down (the implied
        sample tier is appended); n_concat pairs with frame_sizes plus one
        trailing entry for the sample tier. Passing cond_frame_shift adds
        a conditional tier above everything, stepping at that frame shift.
        """
        if len(n_concat) != len(frame_sizes) + 1:
            raise ValueError("n_concat needs one entry per frame tier plus the sample tier")
        tiers = [TierSpec(1, n_concat[-1], kind="sample")]
        for size, concat in zip(reversed(frame_sizes), reversed(n_concat[:-1])):
            tiers.append(TierSpec(size, concat, kind="intermediate"))
        if cond_frame_shift is not None:
            tiers.append(TierSpec(cond_frame_shift, 1, kind="conditional"))
        else:
            tiers[-1] = dataclasses.replace(tiers[-1], kind="top")
        return cls(
            tiers=tuple(tiers),
            embed_dim=embed_dim,
            hidden=hidden,
            strategy=strategy,
            hf_gain=hf_gain,
            cond_dim=cond_dim,
            cond_window_ms=cond_window_ms,
        )

    def tier_width(self, index: int) -> int:
        return self.tiers[index].width or self.hidden

    @property
    def conditional(self) -> bool:
        return self.tiers[-1].kind == "conditional"

    @property
    def time_multiple(self) -> int:
        """Output lengths must divide into whole top-tier steps."""
        return self.tiers[-1].frame_size

    @property
    def lookahead(self) -> int:
        """Trailing input samples needed beyond the last output position.

        Frame concatenation makes tier k read (n_concat - 1) * frame_size
        samples past its final step; the maximum over waveform tiers is
        the padding every forward pass requires.
        """
        return max(
            (t.n_concat - 1) * t.frame_size for t in self.tiers if t.kind != "conditional"
        )


ModelConfig = HrnnConfig | SrnnConfig


# ---------------------------------------------------------------------------
# Framing and fan-out primitives
# ---------------------------------------------------------------------------

def pad_for_model(x, cfg: ModelConfig):
    """Pad a level sequence for one forward pass.

    Appends zero-amplitude levels (128) so the output region is divisible
    by the top tier's frame size, then the lookahead tail on top of that.
    Returns (padded_levels, valid_len, mask) where mask flags the original
    positions within the output region.
    """
    levels = x.levels if isinstance(x, QuantizedWaveform) else np.asarray(x)
    valid_len = len(levels)
    if valid_len == 0:
        raise ValueError("cannot pad an empty sequence")
    multiple = cfg.time_multiple
    n_steps = -(-valid_len // multiple) * multiple
    padded = np.full(n_steps + cfg.lookahead, PAD_LEVEL, dtype=np.int32)
    padded[:valid_len] = levels
    mask = np.zeros(n_steps, dtype=bool)
    mask[:valid_len] = True
    return padded, valid_len, mask


def frame_tier_inputs(values: np.ndarray, tier: TierSpec, n_steps: int | None = None) -> np.ndarray:
    """Frame-and-concatenate step inputs for one tier.

    values is a padded 1-D sample sequence (or 2-D [length, dim] sequence
    of embedding vectors for the sample tier). Step t concatenates frames
    t .. t+n_concat-1, each of frame_size entries. Raises if the padded
    length cannot supply the lookahead frames.
    """
    values = np.asarray(values)
    length = values.shape[0]
    if n_steps is None:
        n_steps = (length - (tier.n_concat - 1) * tier.frame_size) // tier.frame_size
    needed = (n_steps + tier.n_concat - 1) * tier.frame_size
    if n_steps < 1 or length < needed:
        raise ValueError(
            f"insufficient lookahead padding: have {length} entries, need {needed}"
        )
    out = _frame_inputs(values[None], tier.frame_size, tier.n_concat, n_steps)
    return out[0]


def _frame_inputs(x: np.ndarray, frame_size: int, n_concat: int, n_steps: int) -> np.ndarray:
    """x [B, length(, dim)] -> [B, n_steps, n_concat * frame_size(* dim)]."""
    batch = x.shape[0]
    parts = []
    for j in range(n_concat):
        seg = x[:, j * frame_size : (j + n_steps) * frame_size]
        parts.append(seg.reshape(batch, n_steps, -1))
    return np.concatenate(parts, axis=2) if len(parts) > 1 else parts[0]


def conditioning_fanout(h: np.ndarray, weights: np.ndarray, biases: np.ndarray) -> np.ndarray:
    """Expand tier hidden states into per-lower-step conditioning vectors.

    h [B, T, H_up] with weights [r, H_down, H_up] yields [B, T*r, H_down]:
    each upper step t emits r projections, ordered j = 1..r within t.
    """
    expanded = np.einsum("bth,rjh->btrj", h, weights) + biases
    batch, steps, ratio, down = expanded.shape
    return expanded.reshape(batch, steps * ratio, down)


def _fanout_backward(d_out: np.ndarray, h: np.ndarray, weights: np.ndarray):
    batch, total, down = d_out.shape
    ratio = weights.shape[0]
    d4 = d_out.reshape(batch, total // ratio, ratio, down)
    d_weights = np.einsum("btrj,bth->rjh", d4, h)
    d_biases = d4.sum(axis=(0, 1))
    dh = np.einsum("btrj,rjh->bth", d4, weights)
    return d_weights, d_biases, dh


def _relu(x):
    return np.maximum(x, 0.0)


# ---------------------------------------------------------------------------
# HRNN
# ---------------------------------------------------------------------------

class Hrnn:
    """Hierarchical model; parameters live in a flat name->array dict."""

    def __init__(self, cfg: HrnnConfig, rng: np.random.Generator | int | None = None, dtype=np.float32):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        self.params: dict[str, np.ndarray] = {}
        self._init_params(rng)

    def _add_affine(self, prefix: str, n_out: int, n_in: int, rng):
        p = nn.AffineParams.create(n_out, n_in, rng, self.dtype)
        self.params[f"{prefix}.w"] = p.weight
        self.params[f"{prefix}.b"] = p.bias

    def _add_lstm(self, prefix: str, hidden: int, n_in: int, rng):
        p = nn.LstmParams.create(hidden, n_in, rng, self.dtype)
        self.params[f"{prefix}.wx"] = p.input_weights
        self.params[f"{prefix}.wh"] = p.recurrent_weights
        self.params[f"{prefix}.b"] = p.biases

    def _init_params(self, rng):
        cfg = self.cfg
        self.params["embed.table"] = nn.EmbeddingTable.create(cfg.embed_dim, rng, self.dtype).table
        for k, tier in enumerate(cfg.tiers):
            name = f"tier{k + 1}"
            width = cfg.tier_width(k)
            if tier.kind == "sample":
                self._add_affine(f"{name}.combine", width, tier.n_concat * cfg.embed_dim, rng)
                self._add_affine(f"{name}.ff1", width, width, rng)
                self._add_affine(f"{name}.ff2", cfg.vocab, width, rng)
                continue
            if tier.kind == "conditional":
                n_in = cfg.cond_dim
            else:
                n_in = tier.n_concat * tier.frame_size
            if tier.kind == "intermediate":
                self._add_affine(f"{name}.combine", width, n_in, rng)
                n_in = width
            self._add_lstm(f"{name}.lstm", width, n_in, rng)
            ratio = tier.frame_size // cfg.tiers[k - 1].frame_size
            below = cfg.tier_width(k - 1)
            self.params[f"{name}.fanout.w"] = nn.init_uniform((ratio, below, width), width, rng, self.dtype)
            self.params[f"{name}.fanout.b"] = np.zeros((ratio, below), dtype=self.dtype)

    def _affine(self, prefix: str) -> nn.AffineParams:
        return nn.AffineParams(self.params[f"{prefix}.w"], self.params[f"{prefix}.b"])

    def _lstm(self, prefix: str) -> nn.LstmParams:
        return nn.LstmParams(self.params[f"{prefix}.wx"], self.params[f"{prefix}.wh"], self.params[f"{prefix}.b"])

    def _embedding(self) -> nn.EmbeddingTable:
        return nn.EmbeddingTable(self.params["embed.table"])

    def init_state(self, batch_size: int) -> dict:
        """Zero hidden/cell states for every LSTM tier (utterance start)."""
        state = {}
        for k, tier in enumerate(self.cfg.tiers):
            if tier.kind == "sample":
                continue
            width = self.cfg.tier_width(k)
            zeros = np.zeros((batch_size, width), dtype=self.dtype)
            state[k] = (zeros, zeros.copy())
        return state

    def load_params(self, values: dict):
        """Replace all parameters; names and shapes must match exactly."""
        unknown = set(values) - set(self.params)
        missing = set(self.params) - set(values)
        if unknown or missing:
            raise ValueError(f"parameter name mismatch: unknown={sorted(unknown)}, missing={sorted(missing)}")
        for name, value in values.items():
            if value.shape != self.params[name].shape:
                raise ValueError(
                    f"shape mismatch for {name!r}: {value.shape} vs {self.params[name].shape}"
                )
            self.params[name][...] = value.astype(self.dtype)

    def forward(self, levels: np.ndarray, conditions: np.ndarray | None = None, state: dict | None = None):
        """Run the hierarchy over a padded batch.

        levels [B, n_steps + lookahead] ints; conditions [B, >=n_frames, d]
        when the top tier is conditional. Returns (logits [B, n_steps, 256],
        cache, state_out); recurrent states carry across consecutive calls.
        """
        cfg = self.cfg
        levels = np.asarray(levels)
        if levels.ndim != 2:
            raise ValueError("levels must be [batch, time]")
        batch, padded_len = levels.shape
        n_steps = padded_len - cfg.lookahead
        if n_steps < cfg.time_multiple or n_steps % cfg.time_multiple != 0:
            raise ValueError(
                f"padded length {padded_len} minus lookahead {cfg.lookahead} must be a"
                f" positive multiple of {cfg.time_multiple}"
            )
        state = state if state is not None else self.init_state(batch)
        state_out = {}
        amplitudes = decode_levels(levels).astype(self.dtype)
        cache = {"levels": levels, "amplitudes": amplitudes, "n_steps": n_steps, "tiers": {}}

        conditioning = None
        for k in range(len(cfg.tiers) - 1, 0, -1):
            tier = cfg.tiers[k]
            name = f"tier{k + 1}"
            steps_k = n_steps // tier.frame_size
            if tier.kind == "conditional":
                if conditions is None:
                    raise ValueError("model has a conditional tier but no conditions were given")
                conditions = np.asarray(conditions, dtype=self.dtype)
                if conditions.ndim != 3 or conditions.shape[2] != cfg.cond_dim:
                    raise ValueError(f"conditions must be [batch, frames, {cfg.cond_dim}]")
                if conditions.shape[1] < steps_k:
                    raise ValueError(
                        f"conditions too short: {conditions.shape[1]} frames < {steps_k} steps"
                    )
                x_k = conditions[:, :steps_k]
            else:
                x_k = _frame_inputs(amplitudes, tier.frame_size, tier.n_concat, steps_k)
            tier_cache = {"x": x_k}
            if tier.kind == "intermediate":
                combined = nn.affine(self._affine(f"{name}.combine"), x_k)
                lstm_in = combined + conditioning
                tier_cache["lstm_in"] = lstm_in
            else:
                lstm_in = x_k
            h0, c0 = state[k]
            h_seq, (h_last, c_last), lstm_cache = nn.lstm_forward(self._lstm(f"{name}.lstm"), lstm_in, h0, c0)
            state_out[k] = (h_last, c_last)
            conditioning = conditioning_fanout(
                h_seq, self.params[f"{name}.fanout.w"], self.params[f"{name}.fanout.b"]
            )
            tier_cache["lstm"] = lstm_cache
            tier_cache["h"] = h_seq
            cache["tiers"][k] = tier_cache

        # Sample tier: concatenated embeddings meet the conditioning stream.
        sample = cfg.tiers[0]
        vectors = nn.embed(self._embedding(), levels)
        f_sample = _frame_inputs(vectors, 1, sample.n_concat, n_steps)
        i_sample = nn.affine(self._affine("tier1.combine"), f_sample) + conditioning
        z_hidden = nn.affine(self._affine("tier1.ff1"), i_sample)
        a_hidden = _relu(z_hidden)
        logits = nn.affine(self._affine("tier1.ff2"), a_hidden)
        cache["tiers"][0] = {
            "f": f_sample,
            "i": i_sample,
            "z_hidden": z_hidden,
            "a_hidden": a_hidden,
        }
        return logits, cache, state_out

    def backward(self, cache: dict, dlogits: np.ndarray) -> dict:
        """Exact gradients of a scalar loss w.r.t. every parameter."""
        cfg = self.cfg
        grads = {}
        tiers = cache["tiers"]
        sample = tiers[0]
        n_steps = cache["n_steps"]

        (dw, db), da = nn.affine_backward(self._affine("tier1.ff2"), sample["a_hidden"], dlogits)
        grads["tier1.ff2.w"], grads["tier1.ff2.b"] = dw, db
        dz = da * (sample["z_hidden"] > 0)
        (dw, db), di = nn.affine_backward(self._affine("tier1.ff1"), sample["i"], dz)
        grads["tier1.ff1.w"], grads["tier1.ff1.b"] = dw, db
        (dw, db), df = nn.affine_backward(self._affine("tier1.combine"), sample["f"], di)
        grads["tier1.combine.w"], grads["tier1.combine.b"] = dw, db
        d_conditioning = di  # i = combine(f) + conditioning

        # Concatenated embeddings: overlap-add the frame slots back.
        levels = cache["levels"]
        embed_dim = cfg.embed_dim
        d_vectors = np.zeros((levels.shape[0], levels.shape[1], embed_dim), dtype=df.dtype)
        for j in range(cfg.tiers[0].n_concat):
            d_vectors[:, j : j + n_steps] += df[:, :, j * embed_dim : (j + 1) * embed_dim]
        grads["embed.table"] = nn.embed_backward(self._embedding(), levels, d_vectors)

        for k in range(1, len(cfg.tiers)):
            tier = cfg.tiers[k]
            name = f"tier{k + 1}"
            tc = tiers[k]
            dw_fan, db_fan, dh = _fanout_backward(d_conditioning, tc["h"], self.params[f"{name}.fanout.w"])
            grads[f"{name}.fanout.w"], grads[f"{name}.fanout.b"] = dw_fan, db_fan
            (dwx, dwh, db), dx, _, _ = nn.lstm_backward(self._lstm(f"{name}.lstm"), tc["lstm"], dh)
            grads[f"{name}.lstm.wx"], grads[f"{name}.lstm.wh"], grads[f"{name}.lstm.b"] = dwx, dwh, db
            if tier.kind == "intermediate":
                (dw, db), _ = nn.affine_backward(self._affine(f"{name}.combine"), tc["x"], dx)
                grads[f"{name}.combine.w"], grads[f"{name}.combine.b"] = dw, db
                d_conditioning = dx  # lstm_in = combine(x) + conditioning
            # Top and conditional tiers consume raw inputs: nothing upstream.
        return grads


# ---------------------------------------------------------------------------
# SRNN
# ---------------------------------------------------------------------------

class Srnn:
    """Sample-level stack: embedding, two LSTM layers, two FF layers."""

    def __init__(self, cfg: SrnnConfig, rng: np.random.Generator | int | None = None, dtype=np.float32):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        self.params: dict[str, np.ndarray] = {}
        table = nn.EmbeddingTable.create(cfg.embed_dim, rng, self.dtype)
        self.params["embed.table"] = table.table
        n_in = cfg.embed_dim
        for i in range(cfg.n_lstm_layers):
            p = nn.LstmParams.create(cfg.hidden, n_in, rng, self.dtype)
            self.params[f"lstm{i + 1}.wx"] = p.input_weights
            self.params[f"lstm{i + 1}.wh"] = p.recurrent_weights
            self.params[f"lstm{i + 1}.b"] = p.biases
            n_in = cfg.hidden
        ff1 = nn.AffineParams.create(cfg.hidden, cfg.hidden, rng, self.dtype)
        ff2 = nn.AffineParams.create(cfg.vocab, cfg.hidden, rng, self.dtype)
        self.params["ff1.w"], self.params["ff1.b"] = ff1.weight, ff1.bias
        self.params["ff2.w"], self.params["ff2.b"] = ff2.weight, ff2.bias

    def _lstm(self, i: int) -> nn.LstmParams:
        return nn.LstmParams(
            self.params[f"lstm{i}.wx"], self.params[f"lstm{i}.wh"], self.params[f"lstm{i}.b"]
        )

    def _affine(self, prefix: str) -> nn.AffineParams:
        return nn.AffineParams(self.params[f"{prefix}.w"], self.params[f"{prefix}.b"])

    def init_state(self, batch_size: int) -> dict:
        state = {}
        for i in range(1, self.cfg.n_lstm_layers + 1):
            zeros = np.zeros((batch_size, self.cfg.hidden), dtype=self.dtype)
            state[i] = (zeros, zeros.copy())
        return state

    def load_params(self, values: dict):
        unknown = set(values) - set(self.params)
        missing = set(self.params) - set(values)
        if unknown or missing:
            raise ValueError(f"parameter name mismatch: unknown={sorted(unknown)}, missing={sorted(missing)}")
        for name, value in values.items():
            if value.shape != self.params[name].shape:
                raise ValueError(
                    f"shape mismatch for {name!r}: {value.shape} vs {self.params[name].shape}"
                )
            self.params[name][...] = value.astype(self.dtype)

    def forward(self, levels: np.ndarray, conditions=None, state: dict | None = None):
        if conditions is not None:
            raise ValueError("SRNN takes no conditions")
        levels = np.asarray(levels)
        if levels.ndim != 2:
            raise ValueError("levels must be [batch, time]")
        state = state if state is not None else self.init_state(levels.shape[0])
        state_out = {}
        x = nn.embed(nn.EmbeddingTable(self.params["embed.table"]), levels).astype(self.dtype)
        cache = {"levels": levels, "lstm": {}, "x": x}
        h = x
        for i in range(1, self.cfg.n_lstm_layers + 1):
            h0, c0 = state[i]
            h, (h_last, c_last), lstm_cache = nn.lstm_forward(self._lstm(i), h, h0, c0)
            state_out[i] = (h_last, c_last)
            cache["lstm"][i] = lstm_cache
        z = nn.affine(self._affine("ff1"), h)
        a = _relu(z)
        logits = nn.affine(self._affine("ff2"), a)
        cache["z"] = z
        cache["a"] = a
        return logits, cache, state_out

    def backward(self, cache: dict, dlogits: np.ndarray) -> dict:
        grads = {}
        (dw, db), da = nn.affine_backward(self._affine("ff2"), cache["a"], dlogits)
        grads["ff2.w"], grads["ff2.b"] = dw, db
        dz = da * (cache["z"] > 0)
        (dw, db), dh = nn.affine_backward(self._affine("ff1"), cache["lstm"][self.cfg.n_lstm_layers].h, dz)
        grads["ff1.w"], grads["ff1.b"] = dw, db
        for i in range(self.cfg.n_lstm_layers, 0, -1):
            (dwx, dwh, dbs), dh, _, _ = nn.lstm_backward(self._lstm(i), cache["lstm"][i], dh)
            grads[f"lstm{i}.wx"], grads[f"lstm{i}.wh"], grads[f"lstm{i}.b"] = dwx, dwh, dbs
        grads["embed.table"] = nn.embed_backward(
            nn.EmbeddingTable(self.params["embed.table"]), cache["levels"], dh
        )
        return grads


def build_model(cfg: ModelConfig, rng=None, dtype=np.float32):
    if isinstance(cfg, SrnnConfig):
        return Srnn(cfg, rng, dtype)
    return Hrnn(cfg, rng, dtype)


# ---------------------------------------------------------------------------
# Generation and latency
# ---------------------------------------------------------------------------

def generate(model, x: QuantizedWaveform, conditions: ConditionTrack | None = None) -> QuantizedWaveform:
    """Map input levels to output levels: one forward pass, argmax decode.

    Ties resolve to the lowest level; the output is truncated back to the
    input's length. Purely deterministic.
    """
    padded, valid_len, _ = pad_for_model(x, model.cfg)
    cond = None
    if conditions is not None:
        n_frames_needed = (len(padded) - model.cfg.lookahead) // model.cfg.time_multiple
        frames = align_condition_frames(conditions.frames, n_frames_needed)
        cond = frames[None]
    logits, _, _ = model.forward(padded[None], conditions=cond)
    levels = np.argmax(logits[0], axis=-1)[:valid_len]
    return QuantizedWaveform(levels.astype(np.int32), x.sample_rate_hz)


def align_condition_frames(frames: np.ndarray, n_needed: int) -> np.ndarray:
    """Give a track exactly n_needed frames: repeat the final frame if the
    analysis window lost tail frames, else truncate."""
    if len(frames) >= n_needed:
        return frames[:n_needed]
    if len(frames) == 0:
        raise ValueError("empty condition track cannot be aligned")
    pad = np.repeat(frames[-1:], n_needed - len(frames), axis=0)
    return np.concatenate([frames, pad], axis=0)


def max_latency_ms(cfg: ModelConfig, sample_rate_hz: int) -> float:
    """Duration of future input the model may consult per output sample.

    The sample-level model is causal (zero latency). Tier stacks need
    n_concat * frame_size - 1 future samples at the widest tier; a
    conditional tier fed from a windowed analysis additionally waits for
    its window.
    """
    if isinstance(cfg, SrnnConfig):
        return 0.0
    structural = max((t.n_concat * t.frame_size - 1) for t in cfg.tiers)
    latency = structural * 1000.0 / sample_rate_hz
    if cfg.conditional and cfg.cond_window_ms is not None:
        latency = max(latency, cfg.cond_window_ms)
    return latency
