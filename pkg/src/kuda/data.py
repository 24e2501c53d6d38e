"""Synthetic multimodal dataset with controllable per-sample dominant modality.

Every sample carries three feature sequences (text tokens, vision and audio
feature matrices), three unimodal labels, and one multimodal label. A chosen
subset of modalities is "dominant": their unimodal label sits within a small
jitter of the multimodal label (co-dominant modalities share the exact same
label so they tie under the argmin dominance rule). Non-dominant modalities
get an independent label at least ``margin`` away, which makes roughly half
of them polarity-flipped noise modalities.

Features encode the unimodal label along a fixed random direction, plus a
"reliability cue" along a second direction when the modality is dominant, so
a fusion model can in principle infer per-sample reliability from the
features alone. Text realizes its label as tokens drawn from the vocabulary
bucket covering the label, with a leading marker token as the cue.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

MODALITIES = ("text", "vision", "audio")
N_MARKER_TOKENS = 2  # token 0: plain marker, token 1: dominant marker


class DataError(Exception):
    """Malformed dataset file or record."""


@dataclass
class SampleRecord:
    id: str
    split: str
    text: list[int]
    vision: np.ndarray
    audio: np.ndarray
    y_t: float
    y_v: float
    y_a: float
    y: float

    def unimodal_label(self, modality: str) -> float:
        return {"text": self.y_t, "vision": self.y_v, "audio": self.y_a}[modality]


@dataclass
class GeneratorSpec:
    n_samples: int = 3000
    label_range: tuple[float, float] = (-1.0, 1.0)
    split_fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)
    # sequence shapes
    text_len: int = 8
    vision_len: int = 8
    audio_len: int = 8
    vision_dim: int = 8
    audio_dim: int = 8
    # text vocabulary: label range partitioned into equal-width buckets
    n_buckets: int = 16
    tokens_per_bucket: int = 4
    # dominance regime
    dominant_prob: dict = field(default_factory=lambda: {"text": 0.5, "vision": 0.5, "audio": 0.5})
    jitter_max: float = 0.08
    margin: float = 0.3
    # probability that a non-dominant modality's label flips polarity
    noise_prob: float = 0.35
    feature_noise_std: float = 0.1
    cue_strength: float = 1.0

    @property
    def vocab_size(self) -> int:
        return N_MARKER_TOKENS + self.n_buckets * self.tokens_per_bucket

    def validate(self):
        lo, hi = self.label_range
        if hi <= lo:
            raise ValueError(f"bad label range {self.label_range}")
        if not all(0.0 <= p <= 1.0 for p in self.dominant_prob.values()):
            raise ValueError(f"dominant_prob entries must be in [0,1]: {self.dominant_prob}")
        if sum(self.dominant_prob.values()) <= 0.0:
            raise ValueError("at least one modality needs a positive dominant_prob")
        if not 0.0 <= self.noise_prob <= 1.0:
            raise ValueError(f"noise_prob must be in [0,1]: {self.noise_prob}")
        if abs(sum(self.split_fractions) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1: {self.split_fractions}")
        if self.margin <= self.jitter_max:
            raise ValueError("margin must exceed jitter_max so dominance is unambiguous")


@dataclass
class DominanceStats:
    dominant: dict[str, float]
    noise: dict[str, float]
    noise_sample_proportion: float
    tie_count: int
    n_samples: int

    def to_dict(self) -> dict:
        return asdict(self)


def _polarity(v: float) -> int:
    # zero is its own polarity class
    return 0 if v == 0 else (1 if v > 0 else -1)


def dominant_set(record: SampleRecord) -> set[str]:
    """Modalities minimizing |y_m - y|; ties include all minimizers."""
    errs = {m: abs(record.unimodal_label(m) - record.y) for m in MODALITIES}
    best = min(errs.values())
    return {m for m, e in errs.items() if e == best}


def noise_set(record: SampleRecord) -> set[str]:
    """Modalities whose unimodal polarity disagrees with the multimodal one."""
    return {m for m in MODALITIES if _polarity(record.unimodal_label(m)) != _polarity(record.y)}


def dominance_stats(records: list[SampleRecord]) -> DominanceStats:
    if not records:
        raise DataError("dominance_stats: empty dataset")
    dom_counts = {m: 0 for m in MODALITIES}
    noise_counts = {m: 0 for m in MODALITIES}
    noisy_samples = 0
    ties = 0
    for rec in records:
        dom = dominant_set(rec)
        for m in dom:
            dom_counts[m] += 1
        if len(dom) > 1:
            ties += 1
        noi = noise_set(rec)
        for m in noi:
            noise_counts[m] += 1
        if noi:
            noisy_samples += 1
    n = len(records)
    return DominanceStats(
        dominant={m: dom_counts[m] / n for m in MODALITIES},
        noise={m: noise_counts[m] / n for m in MODALITIES},
        noise_sample_proportion=noisy_samples / n,
        tie_count=ties,
        n_samples=n,
    )


def _unit(rng, d):
    v = rng.normal(size=d)
    return v / np.linalg.norm(v)


def _signal_directions(seed_seq: np.random.SeedSequence, d: int):
    rng = np.random.default_rng(seed_seq)
    u1 = _unit(rng, d)
    u2 = rng.normal(size=d)
    u2 -= u1 * (u1 @ u2)
    u2 /= np.linalg.norm(u2)
    return u1, u2


def _bucket_of(value: float, lo: float, hi: float, n_buckets: int) -> int:
    b = int((value - lo) / (hi - lo) * n_buckets)
    return min(max(b, 0), n_buckets - 1)


def synthesize(spec: GeneratorSpec, seed: int) -> list[SampleRecord]:
    spec.validate()
    lo, hi = spec.label_range
    root = np.random.SeedSequence(seed)
    dir_seed, sample_seed = root.spawn(2)
    vis_dirs = _signal_directions(dir_seed.spawn(2)[0], spec.vision_dim)
    aud_dirs = _signal_directions(dir_seed.spawn(2)[1], spec.audio_dim)
    rng = np.random.default_rng(sample_seed)

    splits = _split_assignment(spec, rng)
    scale = _dominance_scale([spec.dominant_prob[m] for m in MODALITIES])
    records = []
    for i in range(spec.n_samples):
        # multimodal label, kept far enough from the boundary that the
        # dominant jitter stays in range
        y = float(rng.uniform(lo + spec.jitter_max, hi - spec.jitter_max))
        dom = _draw_dominant_set(rng, spec, scale)
        jitter = float(rng.uniform(-spec.jitter_max, spec.jitter_max))
        labels = {}
        for m in MODALITIES:
            if m in dom:
                labels[m] = y + jitter  # shared value: co-dominant modalities tie
            else:
                flip = rng.uniform() < spec.noise_prob
                labels[m] = _draw_off_label(rng, y, lo, hi, spec.margin, opposite_polarity=flip)

        text = _make_text(rng, spec, labels["text"], "text" in dom)
        vision = _make_features(rng, spec.vision_len, vis_dirs, labels["vision"], "vision" in dom, spec)
        audio = _make_features(rng, spec.audio_len, aud_dirs, labels["audio"], "audio" in dom, spec)
        records.append(
            SampleRecord(
                id=f"s{i:05d}",
                split=splits[i],
                text=text,
                vision=vision,
                audio=audio,
                y_t=labels["text"],
                y_v=labels["vision"],
                y_a=labels["audio"],
                y=y,
            )
        )
    return records


def _split_assignment(spec: GeneratorSpec, rng) -> list[str]:
    n = spec.n_samples
    n_train = int(round(n * spec.split_fractions[0]))
    n_valid = int(round(n * spec.split_fractions[1]))
    names = ["train"] * n_train + ["valid"] * n_valid + ["test"] * (n - n_train - n_valid)
    rng.shuffle(names)
    return names


def _dominance_scale(probs: list[float]) -> float:
    """Scale factor so resample-until-nonempty keeps the configured marginals.

    Solves c = 1 - prod(1 - c*p) on (0, 1]; if no solution exists (the
    targets are too small to guarantee a nonempty dominant set) returns 1 and
    the marginals come out approximate.
    """

    def f(c):
        prod = 1.0
        for p in probs:
            prod *= 1.0 - c * p
        return c - 1.0 + prod

    if f(1.0) <= 1e-12:
        return 1.0
    lod, hid = 1e-9, 1.0
    if f(lod) >= 0.0:
        return 1.0
    for _ in range(200):
        mid = 0.5 * (lod + hid)
        if f(mid) < 0.0:
            lod = mid
        else:
            hid = mid
    return 0.5 * (lod + hid)


def _draw_dominant_set(rng, spec: GeneratorSpec, scale: float) -> set[str]:
    while True:
        dom = {m for m in MODALITIES if rng.uniform() < scale * spec.dominant_prob[m]}
        if dom:
            return dom


def _draw_off_label(rng, y: float, lo: float, hi: float, margin: float, opposite_polarity: bool) -> float:
    """Uniform draw outside the margin window, steered to the requested polarity."""
    if opposite_polarity:
        base = [(lo, 0.0)] if y > 0 else [(0.0, hi)]
    else:
        base = [(0.0, hi)] if y > 0 else [(lo, 0.0)]
    pieces = []
    for a, b in base:
        # subtract the margin window
        if b <= y - margin or a >= y + margin:
            pieces.append((a, b))
        else:
            if a < y - margin:
                pieces.append((a, y - margin))
            if b > y + margin:
                pieces.append((y + margin, b))
    if not pieces:  # steered region fully blocked; fall back to any polarity
        left = max(0.0, (y - margin) - lo)
        u = rng.uniform(0.0, left + max(0.0, hi - (y + margin)))
        return float(lo + u) if u < left else float((y + margin) + (u - left))
    lengths = [b - a for a, b in pieces]
    u = rng.uniform(0.0, sum(lengths))
    for (a, b), w in zip(pieces, lengths):
        if u <= w:
            return float(a + u)
        u -= w
    return float(pieces[-1][1])


def _make_text(rng, spec: GeneratorSpec, label: float, dominant: bool) -> list[int]:
    lo, hi = spec.label_range
    bucket = _bucket_of(label, lo, hi, spec.n_buckets)
    base = N_MARKER_TOKENS + bucket * spec.tokens_per_bucket
    body = [int(base + rng.integers(spec.tokens_per_bucket)) for _ in range(spec.text_len - 1)]
    return [1 if dominant else 0] + body


def _make_features(rng, length: int, dirs, label: float, dominant: bool, spec: GeneratorSpec) -> np.ndarray:
    """Signal lives in two spiky positions carrying label*u_signal.

    When the modality is dominant the two positions additionally carry the
    cue direction with opposite signs (+c and -c). The cue therefore cancels
    out of the sequence mean -- dominance is invisible to mean pooling and
    detectable only from position-level structure, e.g. by an attention query
    aligned with the cue direction. The sequence mean is label*u_signal in
    every case, so pooled decoders can recover the unimodal label exactly.
    """
    u_signal, u_cue = dirs
    out = rng.normal(0.0, spec.feature_noise_std, size=(length, len(u_signal)))
    hot = rng.choice(length, size=min(2, length), replace=False)
    amp = length / len(hot)
    out[hot] += amp * label * u_signal
    if dominant and len(hot) == 2:
        c = amp * spec.cue_strength * u_cue
        out[hot[0]] += c
        out[hot[1]] -= c
    return out.astype(np.float64)


# ---------------------------------------------------------------------------
# JSON Lines persistence
# ---------------------------------------------------------------------------

_SPLITS = {"train", "valid", "test"}


def store(records: list[SampleRecord], path) -> None:
    with open(path, "w") as fh:
        for rec in records:
            obj = {
                "id": rec.id,
                "split": rec.split,
                "text": list(map(int, rec.text)),
                "vision": np.asarray(rec.vision).tolist(),
                "audio": np.asarray(rec.audio).tolist(),
                "y_t": rec.y_t,
                "y_v": rec.y_v,
                "y_a": rec.y_a,
                "y": rec.y,
            }
            fh.write(json.dumps(obj) + "\n")


def load(path, label_range: tuple[float, float] = (-1.0, 1.0)) -> list[SampleRecord]:
    lo, hi = label_range
    records = []
    path = Path(path)
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc})") from None
            for fname in ("id", "split", "text", "vision", "audio", "y_t", "y_v", "y_a", "y"):
                if fname not in obj:
                    raise DataError(f"{path}:{lineno}: missing field {fname!r}")
            if obj["split"] not in _SPLITS:
                raise DataError(f"{path}:{lineno}: field 'split' has unknown value {obj['split']!r}")
            for fname in ("y_t", "y_v", "y_a", "y"):
                v = obj[fname]
                if not isinstance(v, (int, float)) or not (lo <= v <= hi):
                    raise DataError(f"{path}:{lineno}: field {fname!r} value {v!r} outside label range [{lo}, {hi}]")
            for fname in ("text", "vision", "audio"):
                if not obj[fname]:
                    raise DataError(f"{path}:{lineno}: field {fname!r} is empty")
            records.append(
                SampleRecord(
                    id=str(obj["id"]),
                    split=obj["split"],
                    text=[int(t) for t in obj["text"]],
                    vision=np.asarray(obj["vision"], dtype=np.float64),
                    audio=np.asarray(obj["audio"], dtype=np.float64),
                    y_t=float(obj["y_t"]),
                    y_v=float(obj["y_v"]),
                    y_a=float(obj["y_a"]),
                    y=float(obj["y"]),
                )
            )
    return records


def split(records: list[SampleRecord], name: str) -> list[SampleRecord]:
    return [r for r in records if r.split == name]
