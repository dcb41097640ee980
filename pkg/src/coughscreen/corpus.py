"""Dataset handling: manifests, balancing, stratified folds, synthetic clips.

The synthetic generator stands in for unavailable patient recordings: each
class gets a distinct spectral signature (harmonic stack + band-limited
noise burst shapes) with per-sample jitter, so classes are separable but
overlapping.  Detection classes contrast bursty cough-like events against
steady ambient sound.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import CANONICAL_RATE, CANONICAL_SAMPLES, AudioClip, decode_wav, encode_wav

DETECTION_LABELS = ["cough", "not_cough"]
DIAGNOSIS_LABELS = ["covid19", "pertussis", "bronchitis", "normal"]


class CorpusError(Exception):
    pass


class MissingFile(CorpusError):
    pass


class UnknownLabel(CorpusError):
    pass


class DuplicateId(CorpusError):
    pass


class EmptyClass(CorpusError):
    pass


class ClassSmallerThanK(CorpusError):
    pass


class InvalidSpec(CorpusError):
    pass


@dataclass(frozen=True)
class Sample:
    id: str
    path: Path
    label: str
    split: str | None = None

    def load_clip(self) -> AudioClip:
        return decode_wav(self.path.read_bytes())


@dataclass(frozen=True)
class Corpus:
    samples: tuple
    provenance: str = ""

    @property
    def label_set(self) -> set:
        return {s.label for s in self.samples}

    def by_label(self) -> dict:
        out: dict = {}
        for s in self.samples:
            out.setdefault(s.label, []).append(s)
        return out

    def __len__(self) -> int:
        return len(self.samples)


def load_corpus(root, manifest=None, allowed_labels=None) -> Corpus:
    """Read a manifest CSV (id,relative_path,label[,split]) under root."""
    root = Path(root)
    manifest = Path(manifest) if manifest else root / "manifest.csv"
    if not manifest.exists():
        raise MissingFile(f"manifest not found: {manifest}")
    samples = []
    seen = set()
    with open(manifest, newline="") as fh:
        for row_no, row in enumerate(csv.DictReader(fh), start=2):
            sid = row["id"].strip()
            if sid in seen:
                raise DuplicateId(f"row {row_no}: duplicate id {sid!r}")
            seen.add(sid)
            label = row["label"].strip()
            if allowed_labels is not None and label not in allowed_labels:
                raise UnknownLabel(f"row {row_no}: label {label!r} not in {sorted(allowed_labels)}")
            path = root / row["relative_path"].strip()
            if not path.exists():
                raise MissingFile(f"row {row_no}: missing file {path}")
            samples.append(
                Sample(id=sid, path=path, label=label, split=(row.get("split") or None))
            )
    if not samples:
        raise CorpusError(f"manifest {manifest} holds no samples")
    return Corpus(samples=tuple(samples), provenance=str(manifest))


def load_esc50_corpus(root, cough_category: str = "coughing") -> Corpus:
    """Map an ESC-50-style layout (audio/ + meta/esc50.csv) to cough/not_cough."""
    root = Path(root)
    meta = root / "meta" / "esc50.csv"
    if not meta.exists():
        raise MissingFile(f"metadata not found: {meta}")
    samples = []
    with open(meta, newline="") as fh:
        for row_no, row in enumerate(csv.DictReader(fh), start=2):
            path = root / "audio" / row["filename"]
            if not path.exists():
                raise MissingFile(f"row {row_no}: missing file {path}")
            label = "cough" if row["category"] == cough_category else "not_cough"
            samples.append(Sample(id=row["filename"], path=path, label=label))
    if not samples:
        raise CorpusError(f"{meta} holds no rows")
    return Corpus(samples=tuple(samples), provenance=f"esc50:{root}")


def balance_classes(corpus: Corpus, seed: int) -> Corpus:
    """Seeded subsample of every class down to the minority class count."""
    groups = corpus.by_label()
    for label, members in groups.items():
        if not members:
            raise EmptyClass(label)
    floor = min(len(m) for m in groups.values())
    rng = np.random.default_rng(seed)
    keep = set()
    for label in sorted(groups):
        members = sorted(groups[label], key=lambda s: s.id)
        chosen = rng.choice(len(members), size=floor, replace=False)
        keep.update(members[i].id for i in chosen)
    samples = tuple(s for s in corpus.samples if s.id in keep)
    return Corpus(samples=samples, provenance=corpus.provenance + "|balanced")


def kfold_split(corpus: Corpus, k: int, seed: int) -> list[tuple]:
    """Stratified folds: per class, a seeded shuffle dealt round-robin."""
    if k < 2:
        raise ValueError("k must be >= 2")
    groups = corpus.by_label()
    for label, members in groups.items():
        if len(members) < k:
            raise ClassSmallerThanK(f"class {label!r} has {len(members)} < k={k}")
    rng = np.random.default_rng(seed)
    folds: list[list[Sample]] = [[] for _ in range(k)]
    for label in sorted(groups):
        members = sorted(groups[label], key=lambda s: s.id)
        order = rng.permutation(len(members))
        for pos, idx in enumerate(order):
            folds[pos % k].append(members[idx])
    return [tuple(sorted(f, key=lambda s: s.id)) for f in folds]


# ---------------------------------------------------------------------------
# synthetic corpus generation


@dataclass(frozen=True)
class SynthSpec:
    classes: tuple
    per_class: int
    seed: int = 0
    sample_rate: int = CANONICAL_RATE
    duration: float = 3.0

    def __post_init__(self):
        if self.per_class < 1 or not self.classes:
            raise InvalidSpec("need at least one class and one sample per class")
        unknown = set(self.classes) - set(_SIGNATURES)
        if unknown:
            raise InvalidSpec(f"no synthesis recipe for {sorted(unknown)}")


@dataclass(frozen=True)
class _Signature:
    f0: float  # fundamental of the harmonic stack, Hz
    band: tuple  # noise band, Hz
    bursts: int
    burst_dur: float  # seconds
    am_rate: float | None = None  # amplitude modulation of the burst body
    steady: bool = False  # ambient (non-burst) sound


_SIGNATURES = {
    "cough": _Signature(f0=170.0, band=(400.0, 2600.0), bursts=2, burst_dur=0.35),
    "not_cough": _Signature(f0=0.0, band=(80.0, 4000.0), bursts=0, burst_dur=0.0, steady=True),
    "covid19": _Signature(f0=180.0, band=(700.0, 1600.0), bursts=2, burst_dur=0.40),
    "pertussis": _Signature(f0=430.0, band=(2600.0, 4600.0), bursts=4, burst_dur=0.18),
    "bronchitis": _Signature(f0=95.0, band=(250.0, 850.0), bursts=1, burst_dur=0.85, am_rate=24.0),
    "normal": _Signature(f0=290.0, band=(1300.0, 2700.0), bursts=2, burst_dur=0.28),
}


def _bandlimited_noise(rng, n: int, rate: int, lo: float, hi: float) -> np.ndarray:
    spectrum = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, d=1.0 / rate)
    mask = (freqs >= lo) & (freqs <= hi)
    out = np.fft.irfft(spectrum * mask, n=n)
    peak = np.max(np.abs(out))
    return out / peak if peak > 0 else out


def _burst(rng, rate: int, sig: _Signature) -> np.ndarray:
    dur = sig.burst_dur * rng.uniform(0.8, 1.2)
    n = max(int(dur * rate), 256)
    t = np.arange(n) / rate
    lo, hi = sig.band
    lo *= rng.uniform(0.9, 1.1)
    hi *= rng.uniform(0.9, 1.1)
    body = _bandlimited_noise(rng, n, rate, lo, hi) * rng.uniform(0.5, 0.8)
    if sig.f0 > 0:
        f0 = sig.f0 * rng.uniform(0.92, 1.08)
        stack = np.zeros(n)
        for h in range(1, 7):
            stack += (0.65**h) * np.sin(2 * np.pi * f0 * h * t + rng.uniform(0, 2 * np.pi))
        body += stack / np.max(np.abs(stack)) * rng.uniform(0.6, 0.9)
    attack = rng.uniform(0.004, 0.018)
    decay = dur * rng.uniform(0.25, 0.45)
    env = (1.0 - np.exp(-t / attack)) * np.exp(-t / decay)
    if sig.am_rate:
        env *= 0.65 + 0.35 * np.cos(2 * np.pi * sig.am_rate * rng.uniform(0.85, 1.15) * t)
    return body * env


def _steady_ambient(rng, n: int, rate: int, sig: _Signature) -> np.ndarray:
    t = np.arange(n) / rate
    mode = rng.integers(0, 3)
    if mode == 0:  # tonal hum with slow beating
        out = np.zeros(n)
        for _ in range(rng.integers(2, 5)):
            f = rng.uniform(100.0, 3800.0)
            out += rng.uniform(0.3, 1.0) * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
        out *= 1.0 + 0.2 * np.sin(2 * np.pi * rng.uniform(0.2, 1.5) * t)
    elif mode == 1:  # smooth broadband noise
        out = _bandlimited_noise(rng, n, rate, sig.band[0], rng.uniform(1500.0, sig.band[1]))
    else:  # slow chirp
        f0, f1 = sorted(rng.uniform(150.0, 3000.0, size=2))
        phase = 2 * np.pi * (f0 * t + (f1 - f0) * t**2 / (2 * t[-1]))
        out = np.sin(phase)
    peak = np.max(np.abs(out))
    return out / peak * rng.uniform(0.4, 0.8)


def synth_clip(label: str, rng) -> AudioClip:
    """One 3-second canonical clip with the label's spectral signature."""
    sig = _SIGNATURES[label]
    rate = CANONICAL_RATE
    n = CANONICAL_SAMPLES
    samples = rng.standard_normal(n) * 2e-3  # ambient floor, above silence gate
    if sig.steady:
        samples += _steady_ambient(rng, n, rate, sig)
    else:
        for _ in range(sig.bursts):
            burst = _burst(rng, rate, sig)
            latest = n - len(burst) - int(0.2 * rate)
            start = int(rng.uniform(0.2 * rate, max(latest, 0.2 * rate + 1)))
            samples[start : start + len(burst)] += burst[: n - start]
    peak = np.max(np.abs(samples))
    samples = samples / peak * rng.uniform(0.55, 0.85)
    return AudioClip(samples=samples, sample_rate=rate)


def synth_corpus(spec: SynthSpec, out_dir) -> Corpus:
    """Write seeded WAVs plus a manifest under out_dir and load them back."""
    out_dir = Path(out_dir)
    rows = []
    for class_idx, label in enumerate(spec.classes):
        (out_dir / label).mkdir(parents=True, exist_ok=True)
        for i in range(spec.per_class):
            rng = np.random.default_rng([spec.seed, class_idx, i])
            clip = synth_clip(label, rng)
            sid = f"{label}_{i:04d}"
            rel = f"{label}/{sid}.wav"
            (out_dir / rel).write_bytes(encode_wav(clip))
            rows.append((sid, rel, label))
    with open(out_dir / "manifest.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "relative_path", "label"])
        writer.writerows(rows)
    return load_corpus(out_dir)
