"""Dataset container, label vocabulary, stratified folds, and a toy corpus.

The on-disk layout is a minimal bit-exact container:

    signals.f32le   raw little-endian float32, C-order, shape [n_records, L, 12]
    labels.u8       raw bytes, shape [n_records, n_labels], values 0/1
    meta.json       n_records, sampling_rate, lead_order, vocabulary,
                    folds (ints 1-10), record_ids

Folds 1-8 are training data, fold 9 validation, fold 10 test.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .leads import TWELVE_LEADS, reconstruct_12_leads

TRAIN_FOLDS = tuple(range(1, 9))
VAL_FOLD = 9
TEST_FOLD = 10


@dataclass
class EcgRecord:
    """One ECG record: signal [L_time x n_leads] in mV plus bookkeeping."""
    signal: np.ndarray
    sampling_rate: int
    record_id: str
    fold: int

    def __post_init__(self):
        self.signal = np.asarray(self.signal, dtype=np.float32)
        if self.signal.ndim != 2:
            raise ValueError("schema violation: signal must be [time x leads]")
        if self.signal.shape[1] not in (8, 12):
            raise ValueError("schema violation: n_leads must be 8 or 12")
        if not (1 <= self.fold <= 10):
            raise ValueError("schema violation: fold out of range")
        if not np.all(np.isfinite(self.signal)):
            raise ValueError("corrupt signal: non-finite values")


@dataclass
class LabelVocabulary:
    """Fixed ordered list of statement codes with code -> index lookup."""
    codes: list[str]
    index: dict[str, int] = field(init=False)

    def __post_init__(self):
        if len(set(self.codes)) != len(self.codes):
            raise ValueError("schema violation: duplicate statement codes")
        self.index = {c: i for i, c in enumerate(self.codes)}

    def __len__(self) -> int:
        return len(self.codes)


def encode_labels(statements: list[str], vocab: LabelVocabulary) -> np.ndarray:
    """Multi-hot encode a set of statement codes against the vocabulary."""
    vec = np.zeros(len(vocab), dtype=np.float32)
    for code in statements:
        if code not in vocab.index:
            raise ValueError(f"unknown statement: {code!r}")
        vec[vocab.index[code]] = 1.0
    return vec


def decode_labels(vec: np.ndarray, vocab: LabelVocabulary) -> list[str]:
    """Inverse of encode_labels for binary vectors."""
    vec = np.asarray(vec)
    if vec.shape != (len(vocab),):
        raise ValueError("schema violation: label vector length mismatch")
    return [vocab.codes[i] for i in np.flatnonzero(vec > 0.5)]


@dataclass
class Dataset:
    """Immutable-after-load collection of records, labels, and fold splits."""
    records: list[EcgRecord]
    labels: list[np.ndarray]
    vocabulary: LabelVocabulary

    def __post_init__(self):
        if len(self.records) != len(self.labels):
            raise ValueError("schema violation: records/labels length mismatch")
        n = len(self.vocabulary)
        for vec in self.labels:
            if vec.shape != (n,):
                raise ValueError("schema violation: label vector length mismatch")

    def __len__(self) -> int:
        return len(self.records)

    def indices_for(self, split: str) -> list[int]:
        folds = {"train": TRAIN_FOLDS, "val": (VAL_FOLD,), "test": (TEST_FOLD,)}[split]
        return [i for i, r in enumerate(self.records) if r.fold in folds]

    def subset(self, indices: list[int]) -> "Dataset":
        return Dataset(records=[self.records[i] for i in indices],
                       labels=[self.labels[i] for i in indices],
                       vocabulary=self.vocabulary)

    def split(self, name: str) -> "Dataset":
        return self.subset(self.indices_for(name))

    def signal_array(self) -> np.ndarray:
        """All signals stacked as [n, L, n_leads]."""
        return np.stack([r.signal for r in self.records])

    def label_array(self) -> np.ndarray:
        return np.stack(self.labels)


def save_dataset(dataset: Dataset, root: str | Path) -> None:
    """Write the container layout (signals.f32le, labels.u8, meta.json)."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    signals = dataset.signal_array().astype("<f4")
    if signals.shape[2] != 12:
        raise ValueError("schema violation: container stores 12-lead records")
    (root / "signals.f32le").write_bytes(np.ascontiguousarray(signals).tobytes())
    labels = dataset.label_array()
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("schema violation: container labels must be binary")
    (root / "labels.u8").write_bytes(labels.astype(np.uint8).tobytes())
    meta = {
        "n_records": len(dataset),
        "sampling_rate": dataset.records[0].sampling_rate if dataset.records else 100,
        "lead_order": TWELVE_LEADS,
        "vocabulary": dataset.vocabulary.codes,
        "folds": [r.fold for r in dataset.records],
        "record_ids": [r.record_id for r in dataset.records],
    }
    (root / "meta.json").write_text(json.dumps(meta, indent=1))


def load_dataset(root: str | Path, expected_rate: int = 100) -> Dataset:
    """Load a dataset directory, validating shapes, folds, and finiteness."""
    root = Path(root)
    for name in ("signals.f32le", "labels.u8", "meta.json"):
        if not (root / name).is_file():
            raise FileNotFoundError(f"corpus not found: missing {root / name}")
    meta = json.loads((root / "meta.json").read_text())
    n = int(meta["n_records"])
    if n < 1:
        raise ValueError("schema violation: empty metadata listing")
    if int(meta["sampling_rate"]) != expected_rate:
        raise ValueError("schema violation: sampling rate mismatch")
    if meta["lead_order"] != TWELVE_LEADS:
        raise ValueError("schema violation: unexpected lead order")
    vocab = LabelVocabulary(list(meta["vocabulary"]))
    raw = np.frombuffer((root / "signals.f32le").read_bytes(), dtype="<f4")
    if raw.size % (n * 12) != 0:
        raise ValueError("schema violation: signal buffer size mismatch")
    length = raw.size // (n * 12)
    signals = raw.reshape(n, length, 12)
    if not np.all(np.isfinite(signals)):
        raise ValueError("corrupt signal: non-finite values")
    labels = np.frombuffer((root / "labels.u8").read_bytes(), dtype=np.uint8)
    if labels.size != n * len(vocab):
        raise ValueError("schema violation: label buffer size mismatch")
    labels = labels.reshape(n, len(vocab))
    folds = meta["folds"]
    ids = meta["record_ids"]
    if len(folds) != n or len(ids) != n:
        raise ValueError("schema violation: metadata arrays length mismatch")
    records = [EcgRecord(signal=signals[i], sampling_rate=expected_rate,
                         record_id=str(ids[i]), fold=int(folds[i]))
               for i in range(n)]
    return Dataset(records=records,
                   labels=[labels[i].astype(np.float32) for i in range(n)],
                   vocabulary=vocab)


# ---------------------------------------------------------------------------
# Toy corpus

# Per-label waveform effects. The first four labels carry strong, independent
# morphology changes so that conditional structure is learnable at desk scale;
# further labels apply mild amplitude modulation. All effects are stationary
# (random phase per record): the generator backbone is translation-
# equivariant, so only stationary statistics are reproducible. Margins are
# deliberately large and temporally broad so the class structure survives
# imperfect synthesis.
TOY_AMP_ON, TOY_AMP_OFF = 2.4, 1.0          # R-peak amplitude (label 0)
TOY_RATE_ON, TOY_RATE_OFF = 1.6, 0.8        # beat rate in Hz (label 1)
TOY_TWAVE_ON, TOY_TWAVE_OFF = -0.8, 0.8     # T-wave polarity (label 2)
TOY_DRIFT_AMP = 0.9                         # 0.33 Hz baseline wave (label 3)
TOY_NOISE_STD = 0.03

# Per-lead scale applied to the shared beat template (8 generated leads).
TOY_LEAD_SCALES = np.array([1.0, 0.85, 0.6, 0.9, 1.1, 1.0, 0.8, 0.7])


def toy_vocabulary(n_labels: int) -> LabelVocabulary:
    return LabelVocabulary([f"TOY{i}" for i in range(n_labels)])


def _toy_waveform(label: np.ndarray, length: int, fs: int,
                  rng: np.random.Generator) -> np.ndarray:
    """One 12-lead quasi-ECG whose morphology is a function of the label."""
    amp = TOY_AMP_ON if label[0] else TOY_AMP_OFF
    rate = TOY_RATE_ON if len(label) > 1 and label[1] else TOY_RATE_OFF
    t_amp = TOY_TWAVE_ON if len(label) > 2 and label[2] else TOY_TWAVE_OFF
    # Mild multiplicative effect for labels beyond the first four.
    for j in range(4, len(label)):
        if label[j]:
            amp *= 1.0 + 0.05 * ((-1) ** j)

    t = np.arange(length) / fs
    period = 1.0 / rate
    phase = rng.uniform(0.0, period)
    beat = np.zeros(length)
    peak_time = phase
    while peak_time < t[-1] + period:
        beat += amp * np.exp(-0.5 * ((t - peak_time) / 0.035) ** 2)      # R
        beat += t_amp * np.exp(-0.5 * ((t - peak_time - 0.25) / 0.09) ** 2)  # T
        beat += 0.15 * np.exp(-0.5 * ((t - peak_time + 0.15) / 0.04) ** 2)   # P
        peak_time += period
    # Slow baseline wave with random phase (label 3).
    if len(label) > 3 and label[3]:
        beat = beat + TOY_DRIFT_AMP * np.sin(
            2 * np.pi * 0.33 * t + rng.uniform(0.0, 2 * np.pi))

    eight = TOY_LEAD_SCALES[:, None] * beat[None, :]
    eight = eight + rng.normal(0.0, TOY_NOISE_STD, size=eight.shape)
    return reconstruct_12_leads(eight).T.astype(np.float32)  # [L x 12]


def make_toy_corpus(n_records: int, n_labels: int, length: int,
                    seed: int) -> Dataset:
    """Deterministic label-conditional quasi-ECG corpus for desk-scale runs."""
    if n_records < 10 or n_labels < 2 or length < 100:
        raise ValueError("toy config invalid: need n_records >= 10, "
                         "n_labels >= 2, length >= 100")
    fs = 100
    rng = np.random.default_rng(seed)
    vocab = toy_vocabulary(n_labels)
    records, labels = [], []
    for i in range(n_records):
        label = (rng.random(n_labels) < 0.5).astype(np.float32)
        signal = _toy_waveform(label, length, fs, rng)
        records.append(EcgRecord(signal=signal, sampling_rate=fs,
                                 record_id=f"toy{i:06d}", fold=(i % 10) + 1))
        labels.append(label)
    return Dataset(records=records, labels=labels, vocabulary=vocab)
