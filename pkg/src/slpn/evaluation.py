"""Entity-level evaluation: the three-way entity partition, ranking metrics
over uncertainty scores, the count-weighted combined score, entity F1,
prediction dumps, and report building."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

from .data import Entity, decode_bioes
from .evidence import MEASURES

DUMP_FORMAT = "slpn-predictions"
DUMP_VERSION = 1
REPORT_FORMAT = "slpn-report"
REPORT_VERSION = 1


class UndefinedMetricError(ValueError):
    """A ranking metric was requested on a single-class label set."""


class SchemaVersionError(ValueError):
    """A structured file declares an unsupported format or version."""


@dataclass
class EntityPartition:
    """Three-way split of one sentence's entities.

    ``shared`` pairs each span-matched predicted entity with the gold label of
    the same span (the predicted label may differ); ``unique_gt`` holds gold
    entities no prediction matched; ``unique_pred`` holds predictions whose
    span matches no gold entity (the wrong-span cases).
    """

    shared: list[tuple[Entity, str]] = field(default_factory=list)
    unique_gt: list[Entity] = field(default_factory=list)
    unique_pred: list[Entity] = field(default_factory=list)


def _check_disjoint(entities: Sequence[Entity], which: str) -> None:
    last_end = -1
    for ent in sorted(entities, key=lambda e: (e.start, e.end)):
        if ent.start <= last_end:
            raise ValueError(f"overlapping entities in {which} list at token {ent.start}")
        last_end = ent.end


def partition_entities(gt: Sequence[Entity], pred: Sequence[Entity]) -> EntityPartition:
    """Partition by exact span equality; labels do not affect matching."""
    _check_disjoint(gt, "ground-truth")
    _check_disjoint(pred, "predicted")
    gt_by_span = {(e.start, e.end): e for e in gt}
    part = EntityPartition()
    for prediction in pred:
        match = gt_by_span.get((prediction.start, prediction.end))
        if match is not None:
            part.shared.append((prediction, match.label))
        else:
            part.unique_pred.append(prediction)
    matched = {(p.start, p.end) for p, _ in part.shared}
    part.unique_gt = [g for g in gt if (g.start, g.end) not in matched]
    return part


def entity_uncertainty(values: Sequence[float], span: Entity, mode: str = "mean") -> float:
    """Aggregate per-token uncertainty over a span: mean (default) or max."""
    if not 0 <= span.start <= span.end < len(values):
        raise ValueError(f"span {span} outside a sentence of {len(values)} tokens")
    window = np.asarray(values[span.start : span.end + 1], dtype=float)
    if mode == "mean":
        return float(window.mean())
    if mode == "max":
        return float(window.max())
    raise ValueError(f"unknown aggregation mode {mode!r}")


def _check_scores(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    if s.ndim != 1 or y.shape != s.shape:
        raise ValueError("scores and labels must be 1-D and equally long")
    if not np.all(np.isin(y, (0, 1))):
        raise ValueError("labels must be 0 or 1")
    return s, y.astype(int)


def auroc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Probability that a random positive outranks a random negative.

    Ties credit one half (midrank convention), so this equals the
    Mann-Whitney U statistic divided by n_pos * n_neg.
    """
    s, y = _check_scores(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUROC needs at least one positive and one negative")
    ranks = rankdata(s)
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def aupr(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Area under the precision-recall curve.

    Descending-score sweep with step-wise (non-interpolated) summation; tied
    scores are processed as a single group.
    """
    s, y = _check_scores(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise UndefinedMetricError("AUPR needs at least one positive")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    area = 0.0
    tp = 0
    seen = 0
    prev_recall = 0.0
    idx = 0
    n = s.size
    while idx < n:
        stop = idx
        while stop < n and s[stop] == s[idx]:
            stop += 1
        tp += int(y[idx:stop].sum())
        seen += stop - idx
        recall = tp / n_pos
        precision = tp / seen
        area += (recall - prev_recall) * precision
        prev_recall = recall
        idx = stop
    return float(area)


@dataclass
class DetectionResult:
    """Per-measure ranking quality for one detection subtask."""

    auroc: dict[str, float]
    aupr: dict[str, float]
    positive_count: int
    negative_count: int


@dataclass
class SentencePrediction:
    """One dumped sentence: tags and per-token uncertainty values."""

    tokens: list[str]
    gold_tags: list[str]
    pred_tags: list[str]
    measures: dict[str, list[float]]
    section: str  # "test_in" or "test_out"


def _collect_subtask(
    partitions: Sequence[EntityPartition],
    sentence_measures: Sequence[dict[str, Sequence[float]]],
    include_unique_pred: bool,
    out_labels: set[str],
    aggregation: str,
) -> tuple[dict[str, list[float]], list[int]]:
    measure_names = list(sentence_measures[0]) if sentence_measures else []
    scores: dict[str, list[float]] = {name: [] for name in measure_names}
    labels: list[int] = []

    def add(measures: dict[str, Sequence[float]], span: Entity, label: int) -> None:
        labels.append(label)
        for name in measure_names:
            scores[name].append(entity_uncertainty(measures[name], span, aggregation))

    for part, measures in zip(partitions, sentence_measures):
        for predicted, gt_label in part.shared:
            add(measures, predicted, int(gt_label in out_labels))
        for entity in part.unique_gt:
            add(measures, entity, int(entity.label in out_labels))
        if include_unique_pred:
            for entity in part.unique_pred:
                add(measures, entity, 1)
    return scores, labels


def _detection_result(scores: dict[str, list[float]], labels: list[int]) -> DetectionResult:
    n_pos = sum(labels)
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(
            f"detection needs both classes, got {n_pos} positives / {n_neg} negatives"
        )
    return DetectionResult(
        auroc={name: auroc(vals, labels) for name, vals in scores.items()},
        aupr={name: aupr(vals, labels) for name, vals in scores.items()},
        positive_count=n_pos,
        negative_count=n_neg,
    )


def ood_eval(
    partitions: Sequence[EntityPartition],
    sentence_measures: Sequence[dict[str, Sequence[float]]],
    out_labels: Iterable[str],
    aggregation: str = "mean",
) -> DetectionResult:
    """OOD detection over shared plus unique ground-truth entities.

    An entity counts as positive when its gold label is held out; unique
    ground-truth entities are scored at their gold span positions.
    """
    scores, labels = _collect_subtask(
        partitions, sentence_measures, False, set(out_labels), aggregation
    )
    return _detection_result(scores, labels)


def ws_eval(
    partitions: Sequence[EntityPartition],
    sentence_measures: Sequence[dict[str, Sequence[float]]],
    aggregation: str = "mean",
) -> DetectionResult:
    """Wrong-span detection over all entities: unique predictions are the positives."""
    scores, labels = _collect_subtask(partitions, sentence_measures, True, set(), aggregation)
    return _detection_result(scores, labels)


def partition_counts(partitions: Sequence[EntityPartition]) -> dict[str, int]:
    shared = sum(len(p.shared) for p in partitions)
    unique_gt = sum(len(p.unique_gt) for p in partitions)
    unique_pred = sum(len(p.unique_pred) for p in partitions)
    return {
        "shared": shared,
        "unique_gt": unique_gt,
        "unique_pred": unique_pred,
        "total": shared + unique_gt + unique_pred,
    }


def weighted_score(ms_ood: float, ms_ws: float, n_shared: int, n_ws: int) -> float:
    """Combine subtask scores, weighted by shared vs wrong-span entity counts."""
    if n_shared < 0 or n_ws < 0:
        raise ValueError("counts must be nonnegative")
    if n_shared + n_ws == 0:
        raise ValueError("at least one of the two counts must be positive")
    return (n_shared * ms_ood + n_ws * ms_ws) / (n_shared + n_ws)


def ner_f1(
    gold: Sequence[Sequence[Entity]], predicted: Sequence[Sequence[Entity]]
) -> float:
    """Micro entity-level F1 with exact span-and-label matching.

    With no gold and no predicted entities at all the score is defined as 1.
    """
    if len(gold) != len(predicted):
        raise ValueError("gold and predicted sentence counts differ")
    tp = fp = fn = 0
    for gold_entities, pred_entities in zip(gold, predicted):
        gold_set = set(gold_entities)
        pred_set = set(pred_entities)
        tp += len(gold_set & pred_set)
        fp += len(pred_set - gold_set)
        fn += len(gold_set - pred_set)
    if tp + fp + fn == 0:
        return 1.0
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def write_predictions(
    path,
    records: Sequence[SentencePrediction],
    fingerprint: str | None = None,
    variant: str | None = None,
) -> None:
    """JSON-lines dump: a header object, then one object per sentence."""
    measure_names = list(records[0].measures) if records else list(MEASURES)
    header = {
        "format": DUMP_FORMAT,
        "version": DUMP_VERSION,
        "measures": measure_names,
        "fingerprint": fingerprint,
        "variant": variant,
    }
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(json.dumps(header, sort_keys=True) + "\n")
        for record in records:
            handle.write(
                json.dumps(
                    {
                        "tokens": record.tokens,
                        "gold_tags": record.gold_tags,
                        "pred_tags": record.pred_tags,
                        "measures": record.measures,
                        "section": record.section,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def read_predictions(path) -> tuple[list[SentencePrediction], dict]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise SchemaVersionError(f"{path} is empty")
    header = json.loads(lines[0])
    if header.get("format") != DUMP_FORMAT:
        raise SchemaVersionError(f"unexpected dump format {header.get('format')!r}")
    if header.get("version") != DUMP_VERSION:
        raise SchemaVersionError(
            f"dump version {header.get('version')} unsupported (expected {DUMP_VERSION})"
        )
    records = []
    for line in lines[1:]:
        if not line.strip():
            continue
        raw = json.loads(line)
        records.append(
            SentencePrediction(
                tokens=raw["tokens"],
                gold_tags=raw["gold_tags"],
                pred_tags=raw["pred_tags"],
                measures=raw["measures"],
                section=raw["section"],
            )
        )
    return records, header


def _pct(x: float) -> float:
    return round(100.0 * x, 2)


def build_report(
    records: Sequence[SentencePrediction],
    out_labels: Iterable[str],
    aggregation: str = "mean",
    fingerprint: str | None = None,
    variant: str | None = None,
) -> dict:
    """Full evaluation over dumped predictions.

    OOD and wrong-span detection run over every record; F1 covers only the
    in-domain test section (held-out labels are untrainable, so sentences
    containing them are excluded from the NER score).  Metric values are
    percentages rounded to two decimals; the weighted block combines the two
    subtasks by shared vs wrong-span counts.  When no wrong-span entities
    exist the weighted block degenerates to the OOD scores.
    """
    partitions = []
    gold_entities = []
    pred_entities = []
    for record in records:
        gold = decode_bioes(record.gold_tags)
        pred = decode_bioes(record.pred_tags)
        partitions.append(partition_entities(gold, pred))
        gold_entities.append(gold)
        pred_entities.append(pred)

    counts = partition_counts(partitions)
    measures = list(records[0].measures)
    sentence_measures = [r.measures for r in records]
    ood = ood_eval(partitions, sentence_measures, out_labels, aggregation)

    ws: DetectionResult | None = None
    if counts["unique_pred"] > 0:
        ws = ws_eval(partitions, sentence_measures, aggregation)

    weighted_auroc = {}
    weighted_aupr = {}
    for name in measures:
        if ws is None:
            weighted_auroc[name] = _pct(ood.auroc[name])
            weighted_aupr[name] = _pct(ood.aupr[name])
        else:
            weighted_auroc[name] = _pct(
                weighted_score(
                    ood.auroc[name], ws.auroc[name], counts["shared"], counts["unique_pred"]
                )
            )
            weighted_aupr[name] = _pct(
                weighted_score(
                    ood.aupr[name], ws.aupr[name], counts["shared"], counts["unique_pred"]
                )
            )

    in_domain = [i for i, r in enumerate(records) if r.section == "test_in"]
    f1 = ner_f1(
        [gold_entities[i] for i in in_domain], [pred_entities[i] for i in in_domain]
    )

    report = {
        "format": REPORT_FORMAT,
        "version": REPORT_VERSION,
        "fingerprint": fingerprint,
        "variant": variant,
        "aggregation": aggregation,
        "measures": measures,
        "counts": counts,
        "ood": {
            "positives": ood.positive_count,
            "negatives": ood.negative_count,
            "auroc": {k: _pct(v) for k, v in ood.auroc.items()},
            "aupr": {k: _pct(v) for k, v in ood.aupr.items()},
        },
        "ws": None
        if ws is None
        else {
            "positives": ws.positive_count,
            "negatives": ws.negative_count,
            "auroc": {k: _pct(v) for k, v in ws.auroc.items()},
            "aupr": {k: _pct(v) for k, v in ws.aupr.items()},
        },
        "weighted": {"auroc": weighted_auroc, "aupr": weighted_aupr},
        "f1": _pct(f1),
    }
    return report


def render_report_text(report: dict) -> str:
    """Human-readable table for one report."""
    measures = report["measures"]
    lines = []
    lines.append(f"variant: {report.get('variant')}")
    lines.append(f"aggregation: {report['aggregation']}   F1: {report['f1']:.2f}")
    counts = report["counts"]
    lines.append(
        "entities: total={total} shared={shared} unique_pred={unique_pred} "
        "unique_gt={unique_gt}".format(**counts)
    )
    header = f"{'section':<14}" + "".join(f"{m:>12}" for m in measures)
    lines.append(header)
    for section, key in (("OOD", "ood"), ("WS", "ws"), ("weighted", "weighted")):
        block = report.get(key)
        if block is None:
            lines.append(f"{section + ' (n/a)':<14}")
            continue
        for metric in ("auroc", "aupr"):
            row = f"{section + ' ' + metric.upper():<14}"
            row += "".join(f"{block[metric][m]:>12.2f}" for m in measures)
            lines.append(row)
    return "\n".join(lines) + "\n"


def write_report(report: dict, json_path, text_path=None) -> None:
    Path(json_path).write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    if text_path is not None:
        Path(text_path).write_text(render_report_text(report), encoding="utf-8")


def read_report(path) -> dict:
    report = json.loads(Path(path).read_text(encoding="utf-8"))
    if report.get("format") != REPORT_FORMAT:
        raise SchemaVersionError(f"unexpected report format {report.get('format')!r}")
    if report.get("version") != REPORT_VERSION:
        raise SchemaVersionError(
            f"report version {report.get('version')} unsupported (expected {REPORT_VERSION})"
        )
    return report
