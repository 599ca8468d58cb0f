"""Tag-level evaluation: confusion matrices, per-tag precision/recall/F1,
micro/macro/weighted aggregates, and the top-level-category comparison.

Zero-denominator convention: precision, recall, and F1 are all 0 when their
denominator is 0, matching common sequence-labeling evaluators. Tags with no
gold support and no predictions are omitted from the per-tag table and from
macro averaging; tags with support but all-zero scores stay in.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np

from .corpus import Dataset
from .errors import EvalError
from .tagset import TagSet, collapse_tag


@dataclass(frozen=True)
class ConfusionMatrix:
    """Square count matrix; rows are gold tags, columns predicted tags."""

    tags: tuple[str, ...]
    counts: np.ndarray

    def total(self) -> int:
        return int(self.counts.sum())

    def support(self, tag: str) -> int:
        return int(self.counts[self.tags.index(tag)].sum())


@dataclass(frozen=True)
class TagScore:
    tag: str
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class Aggregate:
    precision: float
    recall: float
    f1: float

    def as_dict(self) -> dict:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1}


@dataclass(frozen=True)
class EvalReport:
    per_tag: tuple[TagScore, ...]
    micro: Aggregate
    macro: Aggregate
    weighted: Aggregate
    total: int

    def to_json(self) -> dict:
        return {
            "per_tag": [
                {
                    "tag": r.tag,
                    "precision": r.precision,
                    "recall": r.recall,
                    "f1": r.f1,
                    "support": r.support,
                }
                for r in self.per_tag
            ],
            "micro": self.micro.as_dict(),
            "macro": self.macro.as_dict(),
            "weighted": self.weighted.as_dict(),
            "total": self.total,
        }


def _structure_error(kind, index, gold_value, pred_value):
    raise EvalError(
        f"gold/prediction structure mismatch at {kind} {index}: "
        f"{gold_value!r} vs {pred_value!r}"
    )


def compute_confusion(gold: Dataset, predicted: Dataset,
                      tags=None) -> ConfusionMatrix:
    """Count gold-vs-predicted tags token by token.

    The two datasets must agree in sentence count, sentence lengths, and
    token surfaces; the first divergence is reported. `tags` fixes the
    row/column order; observed tags missing from it are appended in order of
    first appearance.
    """
    if len(gold.sentences) != len(predicted.sentences):
        _structure_error("sentence count", "",
                         len(gold.sentences), len(predicted.sentences))
    order: list[str] = list(tags) if tags is not None else []
    seen = set(order)
    pairs: list[tuple[str, str]] = []
    for i, (g, p) in enumerate(zip(gold.sentences, predicted.sentences)):
        if len(g) != len(p):
            _structure_error("sentence length", i, len(g), len(p))
        for j, (gt, pt) in enumerate(zip(g.tokens, p.tokens)):
            if gt.surface != pt.surface:
                _structure_error("token", f"{i}:{j}", gt.surface, pt.surface)
            for tag in (gt.tag, pt.tag):
                if tag not in seen:
                    seen.add(tag)
                    order.append(tag)
            pairs.append((gt.tag, pt.tag))
    index = {tag: k for k, tag in enumerate(order)}
    counts = np.zeros((len(order), len(order)), dtype=np.int64)
    for gt, pt in pairs:
        counts[index[gt], index[pt]] += 1
    return ConfusionMatrix(tuple(order), counts)


def restrict_top_k(confusion: ConfusionMatrix, k: int) -> ConfusionMatrix:
    """Keep only the k most frequent gold tags (by support, ties by current
    order); used for compact confusion-matrix figures."""
    supports = confusion.counts.sum(axis=1)
    ranked = sorted(range(len(confusion.tags)), key=lambda i: (-supports[i], i))
    keep = sorted(ranked[:k])
    tags = tuple(confusion.tags[i] for i in keep)
    counts = confusion.counts[np.ix_(keep, keep)]
    return ConfusionMatrix(tags, counts.copy())


def support_weighted_aggregate(rows) -> Aggregate:
    """Support-weighted mean of (precision, recall, f1, support) rows."""
    total = sum(r[3] for r in rows)
    if total == 0:
        return Aggregate(0.0, 0.0, 0.0)
    return Aggregate(
        sum(r[0] * r[3] for r in rows) / total,
        sum(r[1] * r[3] for r in rows) / total,
        sum(r[2] * r[3] for r in rows) / total,
    )


def unweighted_aggregate(rows) -> Aggregate:
    """Plain mean of (precision, recall, f1, ...) rows."""
    n = len(rows)
    if n == 0:
        return Aggregate(0.0, 0.0, 0.0)
    return Aggregate(
        sum(r[0] for r in rows) / n,
        sum(r[1] for r in rows) / n,
        sum(r[2] for r in rows) / n,
    )


def compute_report(confusion: ConfusionMatrix) -> EvalReport:
    """Per-tag scores plus micro/macro/weighted aggregates.

    micro precision = micro recall = micro F1 = token accuracy, since every
    token carries exactly one gold and one predicted tag.
    """
    total = confusion.total()
    if len(confusion.tags) == 0 or total == 0:
        raise EvalError("cannot evaluate an empty confusion matrix")
    counts = confusion.counts
    gold_sums = counts.sum(axis=1)
    pred_sums = counts.sum(axis=0)
    diag = np.diag(counts)

    per_tag = []
    for i, tag in enumerate(confusion.tags):
        support = int(gold_sums[i])
        predicted = int(pred_sums[i])
        if support == 0 and predicted == 0:
            continue
        precision = diag[i] / predicted if predicted > 0 else 0.0
        recall = diag[i] / support if support > 0 else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        per_tag.append(TagScore(tag, float(precision), float(recall), float(f1), support))

    accuracy = float(diag.sum() / total)
    micro = Aggregate(accuracy, accuracy, accuracy)
    rows = [(r.precision, r.recall, r.f1, r.support) for r in per_tag]
    macro = unweighted_aggregate(rows)
    weighted = support_weighted_aggregate(rows)
    return EvalReport(tuple(per_tag), micro, macro, weighted, total)


def collapse_dataset(dataset: Dataset, tagset: TagSet) -> Dataset:
    """Replace every tag by its top-level category."""
    from .corpus import TaggedSentence, Token

    return Dataset(
        tuple(
            TaggedSentence(
                tuple(Token(t.surface, collapse_tag(t.tag, tagset)) for t in s.tokens)
            )
            for s in dataset.sentences
        ),
        name=dataset.name,
    )


def collapse_and_compare(gold: Dataset, predicted: Dataset,
                         tagset: TagSet) -> tuple[EvalReport, EvalReport]:
    """Fine-grained report plus the report after collapsing both sides to
    top-level categories. Collapsing merges classes, so every fine-level
    match survives: collapsed micro F1 >= fine micro F1."""
    fine = compute_report(compute_confusion(gold, predicted, tags=None))
    collapsed = compute_report(
        compute_confusion(
            collapse_dataset(gold, tagset), collapse_dataset(predicted, tagset)
        )
    )
    return fine, collapsed


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

_AGGREGATE_LABELS = ("micro avg", "macro avg", "weighted avg")


def emit_report(report: EvalReport, format: str = "text") -> str:
    """Render a report as an aligned text table, CSV, or JSON. All three
    carry the same values; text rounds to 4 decimals for display."""
    if format == "json":
        return json.dumps(report.to_json(), ensure_ascii=False, indent=2) + "\n"
    aggregates = [
        ("micro avg", report.micro),
        ("macro avg", report.macro),
        ("weighted avg", report.weighted),
    ]
    if format == "csv":
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["tag", "precision", "recall", "f1", "support"])
        for r in report.per_tag:
            writer.writerow([r.tag, repr(r.precision), repr(r.recall),
                             repr(r.f1), r.support])
        for label, agg in aggregates:
            writer.writerow([label, repr(agg.precision), repr(agg.recall),
                             repr(agg.f1), report.total])
        return out.getvalue()
    if format in ("text", "table", "text-table"):
        width = max([len("weighted avg")] + [len(r.tag) for r in report.per_tag])
        header = f"{'':{width}}  precision  recall  f1      support"
        lines = [header]
        for r in report.per_tag:
            lines.append(
                f"{r.tag:{width}}  {r.precision:9.4f}  {r.recall:6.4f}  "
                f"{r.f1:6.4f}  {r.support:7d}"
            )
        lines.append("")
        for label, agg in aggregates:
            lines.append(
                f"{label:{width}}  {agg.precision:9.4f}  {agg.recall:6.4f}  "
                f"{agg.f1:6.4f}  {report.total:7d}"
            )
        return "\n".join(lines) + "\n"
    raise EvalError(f"unknown report format {format!r}")


def parse_report_json(text) -> EvalReport:
    doc = json.loads(text)
    per_tag = tuple(
        TagScore(r["tag"], r["precision"], r["recall"], r["f1"], r["support"])
        for r in doc["per_tag"]
    )
    agg = lambda d: Aggregate(d["precision"], d["recall"], d["f1"])
    return EvalReport(per_tag, agg(doc["micro"]), agg(doc["macro"]),
                      agg(doc["weighted"]), doc["total"])


def confusion_to_csv(confusion: ConfusionMatrix) -> str:
    """CSV with a tag header row and a leading gold-tag column."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["gold\\predicted", *confusion.tags])
    for i, tag in enumerate(confusion.tags):
        writer.writerow([tag, *confusion.counts[i].tolist()])
    return out.getvalue()
