"""Corpus ingestion and training-pair construction.

Wideband recordings become (input, target) level sequences per the
mapping strategy: the input is always the mu-law encoding of the
upsampled narrowband signal, the target is either the wideband waveform
itself ("wb") or the amplified high-frequency residual ("hf"). Batching
pads each mini-batch to a shared length with a loss mask, and TBPTT
chunking slices the time axis while recurrent state carries across
chunk boundaries.
"""

from __future__ import annotations

import dataclasses
import os
import struct
import tempfile
import wave
from pathlib import Path

import numpy as np

from . import dsp
from .dsp import ConditionTrack, MfccConfig, QuantizedWaveform, Waveform
from .models import ModelConfig, align_condition_frames, PAD_LEVEL


class DataError(ValueError):
    """Malformed corpus input: file formats, manifests, rates, lengths."""


# ---------------------------------------------------------------------------
# WAV files (RIFF/WAVE, 16-bit signed little-endian PCM, mono)
# ---------------------------------------------------------------------------

_PCM_SCALE = 32768.0


def load_wav(path) -> Waveform:
    """Read a mono 16-bit PCM WAV; anything else raises DataError."""
    try:
        with wave.open(str(path), "rb") as reader:
            n_channels = reader.getnchannels()
            sample_width = reader.getsampwidth()
            rate = reader.getframerate()
            n_frames = reader.getnframes()
            payload = reader.readframes(n_frames)
    except (wave.Error, EOFError) as exc:
        raise DataError(f"{path}: not a readable RIFF/WAVE file ({exc})") from exc
    if n_channels != 1:
        raise DataError(f"{path}: expected mono audio, found {n_channels} channels")
    if sample_width != 2:
        raise DataError(f"{path}: expected 16-bit PCM, found {8 * sample_width}-bit")
    pcm = np.frombuffer(payload, dtype="<i2")
    return Waveform(pcm.astype(np.float64) / _PCM_SCALE, rate)


def save_wav(path, w: Waveform):
    """Write mono 16-bit PCM atomically (temp file + rename)."""
    pcm = np.clip(np.rint(w.samples * _PCM_SCALE), -32768, 32767).astype("<i2")
    _atomic_write(path, lambda handle: _write_wav_handle(handle, pcm, w.sample_rate_hz))


def _write_wav_handle(handle, pcm, rate):
    with wave.open(handle, "wb") as writer:
        writer.setnchannels(1)
        writer.setsampwidth(2)
        writer.setframerate(rate)
        writer.writeframes(pcm.tobytes())


def _atomic_write(path, write_fn):
    path = Path(path)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent or ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            write_fn(handle)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


# ---------------------------------------------------------------------------
# Condition-feature files
#
# Little-endian binary: magic "BWEF", version u32 = 1, dim u32,
# frame_shift_samples u32, n_frames u32, then n_frames * dim float32
# row-major.
# ---------------------------------------------------------------------------

_FEATURE_MAGIC = b"BWEF"
_FEATURE_VERSION = 1


def save_features(path, track: ConditionTrack):
    def write(handle):
        handle.write(_FEATURE_MAGIC)
        handle.write(
            struct.pack(
                "<IIII", _FEATURE_VERSION, track.dim, track.frame_shift_samples, track.n_frames
            )
        )
        handle.write(np.ascontiguousarray(track.frames, dtype="<f4").tobytes())

    _atomic_write(path, write)


def load_features(path) -> ConditionTrack:
    with open(path, "rb") as handle:
        blob = handle.read()
    if blob[:4] != _FEATURE_MAGIC:
        raise DataError(f"{path}: bad magic {blob[:4]!r}, expected {_FEATURE_MAGIC!r}")
    if len(blob) < 20:
        raise DataError(f"{path}: truncated header")
    version, dim, frame_shift, n_frames = struct.unpack("<IIII", blob[4:20])
    if version != _FEATURE_VERSION:
        raise DataError(f"{path}: unsupported feature file version {version}")
    expected = 20 + 4 * dim * n_frames
    if len(blob) != expected:
        raise DataError(f"{path}: expected {expected} bytes, found {len(blob)}")
    frames = np.frombuffer(blob[20:], dtype="<f4").reshape(n_frames, dim)
    return ConditionTrack(frames.copy(), frame_shift)


# ---------------------------------------------------------------------------
# Manifests: one utterance per line, `<id>\t<wav-path>[\t<feature-path>]`
# ---------------------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class ManifestEntry:
    utt_id: str
    wav_path: Path
    feature_path: Path | None = None


@dataclasses.dataclass(frozen=True)
class CorpusManifest:
    entries: tuple[ManifestEntry, ...]
    split: str = "train"


def load_manifest(path, split: str = "train", check_paths: bool = True) -> CorpusManifest:
    entries = []
    seen = set()
    base = Path(path).parent
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) not in (2, 3):
            raise DataError(f"{path}:{lineno}: expected 2 or 3 tab-separated fields")
        utt_id = fields[0]
        if utt_id in seen:
            raise DataError(f"{path}:{lineno}: duplicate utterance id {utt_id!r}")
        seen.add(utt_id)
        wav_path = _resolve(base, fields[1])
        feature_path = _resolve(base, fields[2]) if len(fields) == 3 else None
        if check_paths:
            if not wav_path.exists():
                raise DataError(f"{path}:{lineno}: missing wav file {wav_path}")
            if feature_path is not None and not feature_path.exists():
                raise DataError(f"{path}:{lineno}: missing feature file {feature_path}")
        entries.append(ManifestEntry(utt_id, wav_path, feature_path))
    return CorpusManifest(tuple(entries), split)


def _resolve(base: Path, field: str) -> Path:
    p = Path(field)
    return p if p.is_absolute() else base / p


# ---------------------------------------------------------------------------
# Training pairs
# ---------------------------------------------------------------------------

WIDEBAND_RATE = 16000


@dataclasses.dataclass(frozen=True)
class UtterancePair:
    """Aligned input/target level sequences plus reconstruction context."""

    utt_id: str
    input_levels: QuantizedWaveform
    target_levels: QuantizedWaveform
    narrowband: Waveform
    conditions: ConditionTrack | None = None

    def __post_init__(self):
        if len(self.input_levels) != len(self.target_levels):
            raise DataError(
                f"{self.utt_id}: input and target lengths differ"
                f" ({len(self.input_levels)} vs {len(self.target_levels)})"
            )


def build_pair(
    wideband: Waveform,
    strategy: str = "hf",
    hf_gain: float = 4.0,
    conditions: ConditionTrack | str | None = None,
    utt_id: str = "",
) -> UtterancePair:
    """Derive one training pair from a wideband recording.

    conditions may be a precomputed ConditionTrack or the string "mfcc"
    to extract 39-dim narrowband MFCCs (condition frame shifts are stored
    at the wideband rate so they line up with model samples).
    """
    if wideband.sample_rate_hz != WIDEBAND_RATE:
        raise DataError(
            f"{utt_id or 'utterance'}: expected {WIDEBAND_RATE} Hz wideband input,"
            f" got {wideband.sample_rate_hz}"
        )
    narrowband = dsp.downsample2(wideband)
    input_levels = dsp.mulaw_encode(dsp.upsample2(narrowband))
    if strategy == "wb":
        target = wideband
    elif strategy == "hf":
        target = dsp.make_hf_target(wideband, hf_gain)
    else:
        raise DataError(f"unknown mapping strategy {strategy!r}")
    if conditions == "mfcc":
        conditions = narrowband_mfcc(narrowband)
    return UtterancePair(
        utt_id=utt_id,
        input_levels=input_levels,
        target_levels=dsp.mulaw_encode(target),
        narrowband=narrowband,
        conditions=conditions,
    )


def narrowband_mfcc(narrowband: Waveform) -> ConditionTrack:
    """39-dim MFCC track of the narrowband signal, with the frame shift
    re-expressed in wideband samples."""
    cfg = MfccConfig.for_sample_rate(narrowband.sample_rate_hz)
    track = dsp.mfcc(narrowband, cfg)
    shift_wideband = cfg.frame_shift_samples * WIDEBAND_RATE // narrowband.sample_rate_hz
    return ConditionTrack(track.frames, shift_wideband)


def load_pairs(manifest: CorpusManifest, model_cfg: ModelConfig, mfcc_conditions: bool = False):
    """Materialize every manifest entry into an UtterancePair."""
    pairs = []
    for entry in manifest.entries:
        conditions: ConditionTrack | str | None = None
        if entry.feature_path is not None:
            conditions = load_features(entry.feature_path)
        elif mfcc_conditions:
            conditions = "mfcc"
        pairs.append(
            build_pair(
                load_wav(entry.wav_path),
                strategy=model_cfg.strategy,
                hf_gain=model_cfg.hf_gain,
                conditions=conditions,
                utt_id=entry.utt_id,
            )
        )
    return pairs


# ---------------------------------------------------------------------------
# Batching
# ---------------------------------------------------------------------------

@dataclasses.dataclass
class PaddedBatch:
    """One mini-batch padded to a shared, model-aligned length.

    inputs carry the lookahead tail beyond n_steps; targets and mask cover
    the n_steps output region; mask is true exactly on pre-padding
    positions.
    """

    inputs: np.ndarray        # [B, n_steps + lookahead] int32
    targets: np.ndarray       # [B, n_steps] int32
    mask: np.ndarray          # [B, n_steps] bool
    conditions: np.ndarray | None  # [B, n_steps / top_frame_size, dim] float32
    utt_ids: tuple[str, ...]
    valid_lens: np.ndarray    # [B] int

    @property
    def n_steps(self) -> int:
        return self.targets.shape[1]


def make_batch(pairs, model_cfg: ModelConfig) -> PaddedBatch:
    if not pairs:
        raise DataError("cannot build an empty batch")
    multiple = model_cfg.time_multiple
    lookahead = model_cfg.lookahead
    lengths = np.array([len(p.input_levels) for p in pairs])
    n_steps = int(-(-lengths.max() // multiple) * multiple)
    batch = len(pairs)
    inputs = np.full((batch, n_steps + lookahead), PAD_LEVEL, dtype=np.int32)
    targets = np.full((batch, n_steps), PAD_LEVEL, dtype=np.int32)
    mask = np.zeros((batch, n_steps), dtype=bool)
    conditional = getattr(model_cfg, "conditional", False)
    conditions = None
    if conditional:
        n_frames = n_steps // multiple
        conditions = np.zeros((batch, n_frames, model_cfg.cond_dim), dtype=np.float32)
    for i, pair in enumerate(pairs):
        n = len(pair.input_levels)
        inputs[i, :n] = pair.input_levels.levels
        targets[i, :n] = pair.target_levels.levels
        mask[i, :n] = True
        if conditional:
            if pair.conditions is None:
                raise DataError(f"{pair.utt_id}: conditional model but pair has no conditions")
            if pair.conditions.frame_shift_samples != multiple:
                raise DataError(
                    f"{pair.utt_id}: condition frame shift {pair.conditions.frame_shift_samples}"
                    f" does not match the conditional tier's {multiple}"
                )
            wanted = -(-n // multiple)  # frames covering this utterance
            frames = align_condition_frames(pair.conditions.frames, wanted)
            conditions[i, :wanted] = frames
    return PaddedBatch(inputs, targets, mask, conditions, tuple(p.utt_id for p in pairs), lengths)


def batch_iter(pairs, batch_size: int, seed: int, model_cfg: ModelConfig):
    """Yield PaddedBatch objects in a seed-deterministic shuffled order."""
    if batch_size < 1:
        raise DataError("batch_size must be >= 1")
    pairs = list(pairs)
    if not pairs:
        raise DataError("empty corpus")
    order = np.random.default_rng(seed).permutation(len(pairs))
    for start in range(0, len(pairs), batch_size):
        chunk = [pairs[i] for i in order[start : start + batch_size]]
        yield make_batch(chunk, model_cfg)


# ---------------------------------------------------------------------------
# TBPTT chunking
# ---------------------------------------------------------------------------

@dataclasses.dataclass
class TbpttChunk:
    inputs: np.ndarray        # [B, chunk_steps + lookahead]
    targets: np.ndarray       # [B, chunk_steps]
    mask: np.ndarray          # [B, chunk_steps]
    conditions: np.ndarray | None
    reset_state: bool         # true on the first chunk of an utterance set
    start: int                # offset of this chunk on the batch time axis


def tbptt_chunks(batch: PaddedBatch, chunk_len: int, model_cfg: ModelConfig):
    """Split a batch along time into gradient-truncation chunks.

    chunk_len is rounded up to a whole number of top-tier frames; each
    chunk's input slice carries its own lookahead tail (overlapping the
    next chunk), so chunked forwards see exactly what one full forward
    would.
    """
    if chunk_len < 1:
        raise DataError("chunk_len must be >= 1")
    multiple = model_cfg.time_multiple
    lookahead = model_cfg.lookahead
    chunk_len = -(-chunk_len // multiple) * multiple
    chunks = []
    for start in range(0, batch.n_steps, chunk_len):
        stop = min(start + chunk_len, batch.n_steps)
        conditions = None
        if batch.conditions is not None:
            conditions = batch.conditions[:, start // multiple : stop // multiple]
        chunks.append(
            TbpttChunk(
                inputs=batch.inputs[:, start : stop + lookahead],
                targets=batch.targets[:, start:stop],
                mask=batch.mask[:, start:stop],
                conditions=conditions,
                reset_state=start == 0,
                start=start,
            )
        )
    return chunks
