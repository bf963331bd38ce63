"""Evaluation metrics for candidate-pair relation predictions.

Micro precision/recall/F1 treat the no-relation label as the negative
class: precision counts correctly-labeled non-none predictions over all
non-none predictions, recall over all non-none golds. Accuracy covers
every pair, none included. Macro scores average per-label values over
the non-none labels only. Disambiguation scoring follows the triple
rule: a predicted triple is correct iff its (entity, object) pair holds
a gold fact and both predicted and gold labels are non-none — the
label itself need not match, it measures object identification.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .datagen import CELLS, RelationSchema, cell_name
from .errors import AgreementError, InputError, SchemaError


@dataclass
class PairRecord:
    """One scored candidate pair."""

    instance_id: str
    entity_id: str
    object_id: str
    gold: str
    pred: str
    n_entities: int
    n_objects: int


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


@dataclass
class PRF:
    precision: float = 0.0
    recall: float = 0.0
    f1: float = 0.0


@dataclass
class CellMetrics:
    pairs: int = 0
    none_ratio: float = 0.0
    accuracy: float = 0.0
    precision: float = 0.0
    recall: float = 0.0
    f1: float = 0.0


@dataclass
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    per_cell: dict[str, CellMetrics]
    confusion: list[list[int]]  # gold-major, schema.all_labels order
    labels: list[str]
    disambiguation: Optional[PRF] = None
    disambiguation_multi: Optional[PRF] = None
    per_label: dict[str, PRF] = field(default_factory=dict)

    def to_dict(self) -> dict:
        doc = {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "per_cell": {k: vars(v).copy() for k, v in self.per_cell.items()},
            "per_label": {k: vars(v).copy() for k, v in self.per_label.items()},
            "confusion": self.confusion,
            "labels": self.labels,
        }
        if self.disambiguation is not None:
            doc["disambiguation"] = vars(self.disambiguation).copy()
            doc["disambiguation_multi"] = vars(self.disambiguation_multi).copy()
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def table(self) -> str:
        rows = [
            ("accuracy", self.accuracy),
            ("precision", self.precision),
            ("recall", self.recall),
            ("f1", self.f1),
            ("macro_f1", self.macro_f1),
        ]
        lines = [f"{name:<22}{100 * val:>8.2f}" for name, val in rows]
        lines.append(f"{'':<22}{'acc':>8}{'P':>8}{'R':>8}{'F1':>8}{'none%':>8}")
        for cell in CELLS:
            c = self.per_cell[cell]
            lines.append(
                f"{cell:<22}{100 * c.accuracy:>8.2f}{100 * c.precision:>8.2f}"
                f"{100 * c.recall:>8.2f}{100 * c.f1:>8.2f}"
                f"{100 * c.none_ratio:>8.2f}"
            )
        if self.disambiguation is not None:
            d, dm = self.disambiguation, self.disambiguation_multi
            lines.append(
                f"{'disambiguation':<22}P {100 * d.precision:.2f}/{100 * dm.precision:.2f}"
                f"  R {100 * d.recall:.2f}/{100 * dm.recall:.2f}"
                f"  F1 {100 * d.f1:.2f}/{100 * dm.f1:.2f}  (full/obj>1)"
            )
        return "\n".join(lines)


def _check_labels(pairs: Sequence[PairRecord], schema: RelationSchema):
    known = set(schema.all_labels)
    for p in pairs:
        if p.gold not in known:
            raise SchemaError(f"unknown gold label {p.gold!r}")
        if p.pred not in known:
            raise SchemaError(f"unknown predicted label {p.pred!r}")


def evaluate(pairs: Sequence[PairRecord], schema: RelationSchema) -> MetricsReport:
    """Score one prediction per candidate pair against gold labels."""
    if not pairs:
        raise InputError("no pairs to evaluate")
    _check_labels(pairs, schema)
    none = schema.none_label

    correct = sum(1 for p in pairs if p.pred == p.gold)
    tp = sum(1 for p in pairs if p.pred == p.gold and p.gold != none)
    pred_pos = sum(1 for p in pairs if p.pred != none)
    gold_pos = sum(1 for p in pairs if p.gold != none)
    precision = _ratio(tp, pred_pos)
    recall = _ratio(tp, gold_pos)

    per_label: dict[str, PRF] = {}
    macro_p = macro_r = macro_f = 0.0
    for label in schema.labels:
        ltp = sum(1 for p in pairs if p.pred == label and p.gold == label)
        lp = _ratio(ltp, sum(1 for p in pairs if p.pred == label))
        lr = _ratio(ltp, sum(1 for p in pairs if p.gold == label))
        prf = PRF(lp, lr, _f1(lp, lr))
        per_label[label] = prf
        macro_p += lp
        macro_r += lr
        macro_f += prf.f1
    n_labels = len(schema.labels)

    per_cell: dict[str, CellMetrics] = {}
    for cell in CELLS:
        sub = [p for p in pairs if cell_name(p.n_entities, p.n_objects) == cell]
        if not sub:
            per_cell[cell] = CellMetrics()
            continue
        c_tp = sum(1 for p in sub if p.pred == p.gold and p.gold != none)
        c_pred = sum(1 for p in sub if p.pred != none)
        c_gold = sum(1 for p in sub if p.gold != none)
        cp, cr = _ratio(c_tp, c_pred), _ratio(c_tp, c_gold)
        per_cell[cell] = CellMetrics(
            pairs=len(sub),
            none_ratio=_ratio(sum(1 for p in sub if p.gold == none), len(sub)),
            accuracy=_ratio(sum(1 for p in sub if p.pred == p.gold), len(sub)),
            precision=cp,
            recall=cr,
            f1=_f1(cp, cr),
        )

    labels = schema.all_labels
    index = {label: i for i, label in enumerate(labels)}
    confusion = [[0] * len(labels) for _ in labels]
    for p in pairs:
        confusion[index[p.gold]][index[p.pred]] += 1

    return MetricsReport(
        accuracy=_ratio(correct, len(pairs)),
        precision=precision,
        recall=recall,
        f1=_f1(precision, recall),
        macro_precision=macro_p / n_labels,
        macro_recall=macro_r / n_labels,
        macro_f1=macro_f / n_labels,
        per_cell=per_cell,
        confusion=confusion,
        labels=labels,
        per_label=per_label,
    )


def disambiguation_eval(
    pairs: Sequence[PairRecord], schema: RelationSchema
) -> tuple[PRF, PRF]:
    """Triple-correctness scores on the full set and the obj>1 subset."""
    _check_labels(pairs, schema)
    none = schema.none_label

    def score(sub: Sequence[PairRecord]) -> PRF:
        tp = sum(1 for p in sub if p.pred != none and p.gold != none)
        pred_pos = sum(1 for p in sub if p.pred != none)
        gold_pos = sum(1 for p in sub if p.gold != none)
        pr, rc = _ratio(tp, pred_pos), _ratio(tp, gold_pos)
        return PRF(pr, rc, _f1(pr, rc))

    return score(list(pairs)), score([p for p in pairs if p.n_objects > 1])


def full_report(pairs: Sequence[PairRecord], schema: RelationSchema) -> MetricsReport:
    report = evaluate(pairs, schema)
    report.disambiguation, report.disambiguation_multi = disambiguation_eval(
        pairs, schema
    )
    return report


def cohen_kappa_weighted(
    a: Sequence,
    b: Sequence,
    labels: Optional[Sequence] = None,
    weights: str = "linear",
) -> float:
    """Weighted Cohen's kappa between two annotators.

    ``weights='linear'`` uses |i - j| over the ordinal label order,
    ``weights='nominal'`` scores plain disagreement. Raises when the
    expected disagreement is zero (a single label class on both sides).
    """
    a, b = list(a), list(b)
    if len(a) != len(b):
        raise AgreementError(f"sequences of length {len(a)} and {len(b)}")
    if len(a) < 2:
        raise AgreementError("need at least two annotated items")
    if weights not in ("linear", "nominal"):
        raise AgreementError(f"unknown weight scheme {weights!r}")
    if labels is None:
        labels = sorted(set(a) | set(b))
    labels = list(labels)
    index = {label: i for i, label in enumerate(labels)}
    for x in a + b:
        if x not in index:
            raise AgreementError(f"label {x!r} not in the label order")

    n = len(labels)
    observed = [[0.0] * n for _ in range(n)]
    for x, y in zip(a, b):
        observed[index[x]][index[y]] += 1.0
    total = float(len(a))
    row = [sum(observed[i]) for i in range(n)]
    col = [sum(observed[i][j] for i in range(n)) for j in range(n)]

    def weight(i: int, j: int) -> float:
        if weights == "linear":
            return float(abs(i - j))
        return 0.0 if i == j else 1.0

    wo = sum(
        weight(i, j) * observed[i][j] for i in range(n) for j in range(n)
    )
    we = sum(
        weight(i, j) * row[i] * col[j] / total
        for i in range(n)
        for j in range(n)
    )
    if we == 0.0:
        raise AgreementError("chance disagreement is zero; kappa undefined")
    return 1.0 - wo / we
