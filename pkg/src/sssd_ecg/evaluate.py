"""Multi-label ECG classifier and the real/synthetic evaluation protocol.

A 1-D XResNet-style bottleneck network is trained with binary cross-entropy
on random 2.5 s crops; test-time predictions average sigmoid outputs over
seven overlapping crops. Quality of synthetic data is summarized by a 2x2
macro-AUROC grid: {train real, train synthetic} x {test real, test synthetic},
with a single reference classifier trained on real data reused for both
"train real" cells.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch
from scipy.stats import rankdata
from torch import nn

from .data import Dataset


@dataclass
class ClassifierConfig:
    stage_blocks: tuple[int, ...] = (3, 4, 6, 3)
    base_width: int = 64
    expansion: int = 4
    stride: int = 1
    lr: float = 1e-3
    weight_decay: float = 1e-3
    batch_size: int = 64
    epochs: int = 100
    crop_length: int = 250
    tta_crops: int = 7
    tta_stride: int = 125
    in_leads: int = 12

    @classmethod
    def desk(cls) -> "ClassifierConfig":
        """Reduced CI profile: one block per stage, quarter width, 20 epochs."""
        return cls(stage_blocks=(1, 1, 1, 1), base_width=16, epochs=20)


class _Bottleneck(nn.Module):
    def __init__(self, in_ch: int, planes: int, expansion: int, stride: int):
        super().__init__()
        out_ch = planes * expansion
        self.conv1 = nn.Conv1d(in_ch, planes, 1, bias=False)
        self.bn1 = nn.BatchNorm1d(planes)
        self.conv2 = nn.Conv1d(planes, planes, 3, stride=stride, padding=1,
                               bias=False)
        self.bn2 = nn.BatchNorm1d(planes)
        self.conv3 = nn.Conv1d(planes, out_ch, 1, bias=False)
        self.bn3 = nn.BatchNorm1d(out_ch)
        nn.init.zeros_(self.bn3.weight)  # xresnet trick: identity-ish blocks
        if in_ch != out_ch or stride != 1:
            self.shortcut = nn.Sequential(
                nn.Conv1d(in_ch, out_ch, 1, stride=stride, bias=False),
                nn.BatchNorm1d(out_ch))
        else:
            self.shortcut = nn.Identity()

    def forward(self, x):
        h = torch.relu(self.bn1(self.conv1(x)))
        h = torch.relu(self.bn2(self.conv2(h)))
        h = self.bn3(self.conv3(h))
        return torch.relu(h + self.shortcut(x))


class XResNet1d(nn.Module):
    """1-D XResNet with a three-conv stem and bottleneck stages."""

    def __init__(self, cfg: ClassifierConfig, n_labels: int):
        super().__init__()
        w = cfg.base_width
        self.stem = nn.Sequential(
            nn.Conv1d(cfg.in_leads, w // 2, 5, stride=2, padding=2, bias=False),
            nn.BatchNorm1d(w // 2), nn.ReLU(),
            nn.Conv1d(w // 2, w // 2, 3, padding=1, bias=False),
            nn.BatchNorm1d(w // 2), nn.ReLU(),
            nn.Conv1d(w // 2, w, 3, padding=1, bias=False),
            nn.BatchNorm1d(w), nn.ReLU(),
            nn.MaxPool1d(3, stride=2, padding=1),
        )
        stages = []
        in_ch = w
        for i, n_blocks in enumerate(cfg.stage_blocks):
            planes = w * (2 ** i)
            for _ in range(n_blocks):
                stages.append(_Bottleneck(in_ch, planes, cfg.expansion,
                                          cfg.stride))
                in_ch = planes * cfg.expansion
        self.stages = nn.Sequential(*stages)
        self.head = nn.Linear(in_ch, n_labels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.stages(self.stem(x))
        return self.head(h.mean(dim=-1))


def macro_auroc(scores: np.ndarray, truth: np.ndarray) -> float:
    """Macro-averaged AUROC via the rank statistic, ties counted 0.5.

    Labels whose truth column contains a single class are excluded.
    """
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth)
    if scores.ndim != 2 or scores.shape != truth.shape or scores.shape[0] < 1:
        raise ValueError("schema violation: scores/truth shape mismatch")
    aucs = []
    for j in range(scores.shape[1]):
        pos = truth[:, j] > 0.5
        n_pos = int(pos.sum())
        n_neg = len(pos) - n_pos
        if n_pos == 0 or n_neg == 0:
            continue
        ranks = rankdata(scores[:, j])  # average ranks handle ties as 0.5
        u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2
        aucs.append(u / (n_pos * n_neg))
    if not aucs:
        raise ValueError("AUROC undefined: all labels degenerate")
    return float(np.mean(aucs))


def per_label_auroc(scores: np.ndarray, truth: np.ndarray) -> float | None:
    """Single-label AUROC, or None when the truth column is degenerate."""
    pos = truth > 0.5
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def crop_offsets(length: int, crop: int, stride: int, n_crops: int) -> list[int]:
    offsets = [i * stride for i in range(n_crops)]
    if offsets[-1] + crop > length:
        raise ValueError("record too short")
    return offsets


def predict_record(classifier: nn.Module, record: np.ndarray,
                   cfg: ClassifierConfig) -> np.ndarray:
    """Mean sigmoid output over the seven-crop test-time grid.

    `record` is [L x leads]; crops start at 0, stride 125.
    """
    record = np.asarray(record, dtype=np.float32)
    if record.shape[0] < cfg.crop_length:
        raise ValueError("record too short")
    offsets = crop_offsets(record.shape[0], cfg.crop_length, cfg.tta_stride,
                           cfg.tta_crops)
    crops = np.stack([record[o:o + cfg.crop_length].T for o in offsets])
    classifier.eval()
    with torch.no_grad():
        logits = classifier(torch.from_numpy(crops))
        probs = torch.sigmoid(logits).mean(dim=0)
    return probs.numpy()


def predict_dataset(classifier: nn.Module, dataset: Dataset,
                    cfg: ClassifierConfig) -> np.ndarray:
    return np.stack([predict_record(classifier, r.signal, cfg)
                     for r in dataset.records])


def train_classifier(cfg: ClassifierConfig, train_set: Dataset,
                     val_set: Dataset, seed: int = 0,
                     model: nn.Module | None = None):
    """Train on random crops with per-epoch validation model selection.

    Returns (classifier with the best-validation parameters, history dict).
    """
    if len(train_set) == 0:
        raise ValueError("no training data")
    torch.manual_seed(seed)
    n_labels = len(train_set.vocabulary)
    classifier = model if model is not None else XResNet1d(cfg, n_labels)
    opt = torch.optim.Adam(classifier.parameters(), lr=cfg.lr,
                           weight_decay=cfg.weight_decay)
    loss_fn = nn.BCEWithLogitsLoss()
    signals = train_set.signal_array()  # [n, L, leads]
    labels = torch.from_numpy(train_set.label_array())
    rng = np.random.default_rng(seed)
    length = signals.shape[1]
    history = {"val_auroc": [], "train_loss": []}
    best_score, best_state, best_epoch = -np.inf, None, -1
    for epoch in range(cfg.epochs):
        classifier.train()
        order = rng.permutation(len(train_set))
        epoch_losses = []
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            offs = rng.integers(0, length - cfg.crop_length + 1, size=len(idx))
            batch = np.stack([signals[i, o:o + cfg.crop_length].T
                              for i, o in zip(idx, offs)])
            logits = classifier(torch.from_numpy(batch))
            loss = loss_fn(logits, labels[idx])
            if not torch.isfinite(loss):
                raise RuntimeError("classifier diverged")
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_losses.append(float(loss.detach()))
        scores = predict_dataset(classifier, val_set, cfg)
        val_score = macro_auroc(scores, val_set.label_array())
        history["train_loss"].append(float(np.mean(epoch_losses)))
        history["val_auroc"].append(val_score)
        if val_score > best_score:
            best_score = val_score
            best_epoch = epoch
            best_state = {k: v.detach().clone()
                          for k, v in classifier.state_dict().items()}
    classifier.load_state_dict(best_state)
    history["selected_epoch"] = best_epoch
    history["selected_auroc"] = best_score
    return classifier, history


@dataclass
class MetricTable:
    """2x2 macro-AUROC grid over {train, test} x {real, synthetic}."""
    real_real: float
    real_synth: float
    synth_real: float
    synth_synth: float
    per_label: dict = field(default_factory=dict)
    reference_hash: str = ""
    synthetic_hash: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def three_way_protocol(real: Dataset, synthetic: Dataset,
                       cfg: ClassifierConfig, seed: int = 0,
                       reference: nn.Module | None = None) -> MetricTable:
    """Fill the 2x2 metric grid with one reference classifier trained on real
    data (reused for both train-real cells) and one trained on synthetic."""
    from .model import checkpoint_hash

    if real.vocabulary.codes != synthetic.vocabulary.codes:
        raise ValueError("incompatible datasets: vocabulary mismatch")
    if reference is None:
        reference, _ = train_classifier(cfg, real.split("train"),
                                        real.split("val"), seed=seed)
    synth_clf, _ = train_classifier(cfg, synthetic.split("train"),
                                    synthetic.split("val"), seed=seed + 1)
    real_test, synth_test = real.split("test"), synthetic.split("test")

    per_label: dict = {}

    def cell(name, clf, test_set):
        scores = predict_dataset(clf, test_set, cfg)
        truth = test_set.label_array()
        per_label[name] = [per_label_auroc(scores[:, j], truth[:, j])
                           for j in range(truth.shape[1])]
        return macro_auroc(scores, truth)

    return MetricTable(
        real_real=cell("real_real", reference, real_test),
        real_synth=cell("real_synth", reference, synth_test),
        synth_real=cell("synth_real", synth_clf, real_test),
        synth_synth=cell("synth_synth", synth_clf, synth_test),
        per_label=per_label,
        reference_hash=checkpoint_hash(reference),
        synthetic_hash=checkpoint_hash(synth_clf),
    )


def write_metrics(table: MetricTable, out_dir: str | Path,
                  extra: dict | None = None) -> None:
    """Emit metrics.json plus a delimited metrics.csv."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = table.to_dict()
    if extra:
        payload.update(extra)
    (out_dir / "metrics.json").write_text(json.dumps(payload, indent=1))
    rows = ["train_source,test_source,macro_auroc",
            f"real,real,{table.real_real:.6f}",
            f"real,synthetic,{table.real_synth:.6f}",
            f"synthetic,real,{table.synth_real:.6f}",
            f"synthetic,synthetic,{table.synth_synth:.6f}"]
    (out_dir / "metrics.csv").write_text("\n".join(rows) + "\n")
