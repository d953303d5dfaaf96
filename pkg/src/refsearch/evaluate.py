"""Scoring predictions on directory-labeled test sets: confusion matrix, F1.

Dataset layout is root/<label>/<file>.png; every file's true label is its
parent directory's name. Metrics follow the usual conventions: precision
TP/(TP+FP), recall TP/(TP+FN), f1 2PR/(P+R), with 0/0 defined as 0, and
macro-F1 the unweighted mean of per-class F1.
"""

from __future__ import annotations

import csv
import io
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .encoder import EncoderManifest, make_encoder, preprocess
from .imageio import ImageDecodeError, load_png
from .knn import ClassifierConfig, batch_classify
from .store import ReferenceIndex


class DatasetError(ValueError):
    """Empty/missing dataset root or an undecodable item in strict mode."""


@dataclass
class LabeledDataset:
    root: Path
    items: list[tuple[Path, str]]  # (image path, true label), sorted

    @property
    def labels(self) -> list[str]:
        return sorted({label for _, label in self.items})


def load_dataset(root: str | Path, warn=None) -> LabeledDataset:
    """Walk root/<label>/*.png in sorted order.

    Files nested deeper than one level are skipped with a warning; decoding
    is deferred to evaluation time.
    """
    root = Path(root)
    warn = warn or (lambda msg: print(f"warning: {msg}", file=sys.stderr))
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} is not a directory")
    items: list[tuple[Path, str]] = []
    for label_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        label = label_dir.name
        for entry in sorted(label_dir.rglob("*.png")):
            if entry.parent != label_dir:
                warn(f"ignoring nested file {entry} (expected root/<label>/<file>.png)")
                continue
            items.append((entry, label))
    if not items:
        raise DatasetError(f"dataset root {root} contains no <label>/*.png files")
    return LabeledDataset(root=root, items=items)


@dataclass
class ConfusionMatrix:
    labels: list[str]              # ordered, distinct
    counts: np.ndarray             # (L, L) int64, rows true, columns predicted

    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float


@dataclass
class MetricsReport:
    per_class: dict[str, ClassMetrics]
    macro_f1: float
    confusion: ConfusionMatrix
    item_count: int


def _safe_div(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


def metrics_from_pairs(pairs: list[tuple[str, str]]) -> MetricsReport:
    """Build the report from (true label, predicted label) pairs."""
    if not pairs:
        raise DatasetError("no evaluated items")
    labels = sorted({t for t, _ in pairs} | {p for _, p in pairs})
    pos = {label: i for i, label in enumerate(labels)}
    counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for truth, pred in pairs:
        counts[pos[truth], pos[pred]] += 1

    per_class: dict[str, ClassMetrics] = {}
    for i, label in enumerate(labels):
        tp = float(counts[i, i])
        fp = float(counts[:, i].sum() - counts[i, i])
        fn = float(counts[i, :].sum() - counts[i, i])
        precision = _safe_div(tp, tp + fp)
        recall = _safe_div(tp, tp + fn)
        f1 = _safe_div(2.0 * precision * recall, precision + recall)
        per_class[label] = ClassMetrics(precision, recall, f1)
    macro_f1 = float(np.mean([m.f1 for m in per_class.values()]))
    return MetricsReport(
        per_class=per_class,
        macro_f1=macro_f1,
        confusion=ConfusionMatrix(labels=labels, counts=counts),
        item_count=len(pairs),
    )


def evaluate(
    dataset: LabeledDataset,
    index: ReferenceIndex,
    manifest: EncoderManifest,
    config: ClassifierConfig = ClassifierConfig(),
    permissive: bool = False,
    warn=None,
    workers: int | None = None,
) -> MetricsReport:
    """Encode and classify every dataset item, then score the predictions.

    An undecodable image is fatal unless permissive is set, in which case it
    is skipped with a warning. Classification may fan out over `workers`
    threads; results are identical either way.
    """
    warn = warn or (lambda msg: print(f"warning: {msg}", file=sys.stderr))
    backend = make_encoder(manifest)
    truths: list[str] = []
    embeddings: list[np.ndarray] = []
    for path, label in dataset.items:
        try:
            pixels = load_png(path)
        except ImageDecodeError as exc:
            if not permissive:
                raise DatasetError(str(exc)) from exc
            warn(f"skipping {path}: {exc}")
            continue
        embeddings.append(backend.encode(preprocess(pixels, manifest)))
        truths.append(label)
    if not truths:
        raise DatasetError("every dataset item failed to decode")
    predictions = batch_classify(embeddings, index, config, workers=workers)
    return metrics_from_pairs(list(zip(truths, [p.label for p in predictions])))


def report_json(report: MetricsReport) -> str:
    """Lossless JSON rendering (full float precision)."""
    doc = {
        "item_count": report.item_count,
        "macro_f1": report.macro_f1,
        "per_class": {
            label: {"precision": m.precision, "recall": m.recall, "f1": m.f1}
            for label, m in report.per_class.items()
        },
        "confusion": {
            "labels": report.confusion.labels,
            "counts": report.confusion.counts.tolist(),
        },
    }
    return json.dumps(doc, indent=2) + "\n"


def parse_report_json(text: str) -> MetricsReport:
    doc = json.loads(text)
    per_class = {
        label: ClassMetrics(m["precision"], m["recall"], m["f1"])
        for label, m in doc["per_class"].items()
    }
    confusion = ConfusionMatrix(
        labels=list(doc["confusion"]["labels"]),
        counts=np.array(doc["confusion"]["counts"], dtype=np.int64),
    )
    return MetricsReport(
        per_class=per_class,
        macro_f1=doc["macro_f1"],
        confusion=confusion,
        item_count=doc["item_count"],
    )


def report_csv(report: MetricsReport) -> str:
    """Per-class rows plus a macro row, 4 decimal places."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["label", "precision", "recall", "f1"])
    for label in report.confusion.labels:
        m = report.per_class[label]
        writer.writerow([label, f"{m.precision:.4f}", f"{m.recall:.4f}", f"{m.f1:.4f}"])
    macro_p = float(np.mean([m.precision for m in report.per_class.values()]))
    macro_r = float(np.mean([m.recall for m in report.per_class.values()]))
    writer.writerow(["macro", f"{macro_p:.4f}", f"{macro_r:.4f}", f"{report.macro_f1:.4f}"])
    return out.getvalue()
