"""Splitting, scoring, and significance testing for table classifiers.

Binary labels throughout: "genuine" and "layout". Weighted averages are
support-weighted over the evaluated examples.
"""

from __future__ import annotations

import csv
import io
import math
import random
from dataclasses import dataclass

from .errors import DataError

LABELS = ("layout", "genuine")


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class EvalReport:
    per_class: dict[str, ClassMetrics]
    weighted: ClassMetrics
    support: dict[str, int]
    n: int


@dataclass(frozen=True)
class McNemarResult:
    b: int
    c: int
    statistic: float
    p_value: float


def _check_labels(labels) -> None:
    bad = {lab for lab in labels if lab not in LABELS}
    if bad:
        raise DataError(f"labels must be one of {LABELS}, got {sorted(bad)}")


def stratified_split(
    ids: list[str],
    labels: list[str],
    test_frac: float,
    val_frac_of_remainder: float,
    seed: int,
) -> tuple[list[str], list[str], list[str]]:
    """Class-proportional train/val/test split.

    The test set is carved from the full data, the validation set from
    the remainder. Each set's total size is the nearest integer to
    n * fraction; per-class counts follow largest-remainder rounding of
    the exact proportional quotas, so the per-class allocation is as
    close to proportional as integer counts allow. Leftovers stay in
    train. Shuffling is deterministic per seed.
    """
    if len(ids) != len(labels):
        raise DataError("ids and labels length mismatch")
    if not (0.0 < test_frac < 1.0) or not (0.0 <= val_frac_of_remainder < 1.0):
        raise DataError(
            "test fraction must lie in (0, 1) and val fraction in [0, 1)"
        )
    _check_labels(labels)
    by_class: dict[str, list[str]] = {lab: [] for lab in LABELS}
    for id_, lab in zip(ids, labels):
        by_class[lab].append(id_)
    for lab in LABELS:
        if len(by_class[lab]) < 3:
            raise DataError(
                f"class {lab!r} has {len(by_class[lab])} members; need at least 3"
            )
        rng = random.Random(f"{seed}|{lab}")
        rng.shuffle(by_class[lab])

    def take(pools: dict[str, list[str]], frac: float) -> dict[str, list[str]]:
        # Largest-remainder apportionment of round(total * frac) over classes.
        total = sum(len(p) for p in pools.values())
        target = round(total * frac)
        quotas = {lab: len(pool) * frac for lab, pool in pools.items()}
        counts = {lab: math.floor(q) for lab, q in quotas.items()}
        leftover = target - sum(counts.values())
        order = sorted(
            pools, key=lambda lab: (-(quotas[lab] - counts[lab]), lab)
        )
        for lab in order[:leftover]:
            counts[lab] += 1
        return {lab: pool[: counts[lab]] for lab, pool in pools.items()}

    test_sets = take(by_class, test_frac)
    remainder = {
        lab: by_class[lab][len(test_sets[lab]) :] for lab in LABELS
    }
    val_sets = take(remainder, val_frac_of_remainder)
    train_sets = {
        lab: remainder[lab][len(val_sets[lab]) :] for lab in LABELS
    }

    def flatten(sets: dict[str, list[str]]) -> list[str]:
        merged = [id_ for lab in LABELS for id_ in sets[lab]]
        rng = random.Random(f"{seed}|merge|{len(merged)}")
        rng.shuffle(merged)
        return merged

    return flatten(train_sets), flatten(val_sets), flatten(test_sets)


def _prf(tp: int, fp: int, fn: int) -> ClassMetrics:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return ClassMetrics(p, r, f1)


def score(predictions: list[str], gold: list[str]) -> EvalReport:
    """Per-class precision/recall/F1 plus support-weighted averages."""
    if not gold:
        raise DataError("cannot score an empty prediction set")
    if len(predictions) != len(gold):
        raise DataError("predictions and gold length mismatch")
    _check_labels(predictions)
    _check_labels(gold)
    n = len(gold)
    per_class: dict[str, ClassMetrics] = {}
    support = {lab: sum(1 for g in gold if g == lab) for lab in LABELS}
    for lab in LABELS:
        tp = sum(1 for p, g in zip(predictions, gold) if p == lab and g == lab)
        fp = sum(1 for p, g in zip(predictions, gold) if p == lab and g != lab)
        fn = sum(1 for p, g in zip(predictions, gold) if p != lab and g == lab)
        per_class[lab] = _prf(tp, fp, fn)
    weighted = ClassMetrics(
        *(
            sum(support[lab] * getattr(per_class[lab], field) for lab in LABELS) / n
            for field in ("precision", "recall", "f1")
        )
    )
    return EvalReport(per_class=per_class, weighted=weighted, support=support, n=n)


def confusion(predictions: list[str], gold: list[str]) -> dict[str, int]:
    """Counts keyed gold_pred, e.g. genuine_layout = genuine misread as layout."""
    out = {f"{g}_{p}": 0 for g in LABELS for p in LABELS}
    for p, g in zip(predictions, gold):
        out[f"{g}_{p}"] += 1
    return out


def mcnemar(pred_a: list[str], pred_b: list[str], gold: list[str]) -> McNemarResult:
    """Paired McNemar test with the continuity-corrected statistic.

    b counts examples A got right and B got wrong; c the reverse. The
    statistic max(0, |b-c|-1)^2/(b+c) is referred to chi-square with one
    degree of freedom; its survival function is erfc(sqrt(x/2)).
    """
    if not (len(pred_a) == len(pred_b) == len(gold)) or not gold:
        raise DataError("mcnemar needs three equal-length non-empty label lists")
    b = c = 0
    for pa, pb, g in zip(pred_a, pred_b, gold):
        a_ok, b_ok = pa == g, pb == g
        if a_ok and not b_ok:
            b += 1
        elif b_ok and not a_ok:
            c += 1
    if b + c == 0:
        return McNemarResult(0, 0, 0.0, 1.0)
    stat = max(0.0, abs(b - c) - 1.0) ** 2 / (b + c)
    p = math.erfc(math.sqrt(stat / 2.0))
    return McNemarResult(b, c, stat, p)


REPORT_COLUMNS = [
    "name",
    "layout_p",
    "layout_r",
    "layout_f1",
    "genuine_p",
    "genuine_r",
    "genuine_f1",
    "weighted_p",
    "weighted_r",
    "weighted_f1",
]


def _report_row(name: str, rep: EvalReport) -> list[str]:
    vals = [
        rep.per_class["layout"].precision,
        rep.per_class["layout"].recall,
        rep.per_class["layout"].f1,
        rep.per_class["genuine"].precision,
        rep.per_class["genuine"].recall,
        rep.per_class["genuine"].f1,
        rep.weighted.precision,
        rep.weighted.recall,
        rep.weighted.f1,
    ]
    return [name, *[f"{v:.3f}" for v in vals]]


def report_csv(reports: list[tuple[str, EvalReport]], header_comments=()) -> str:
    if not reports:
        raise DataError("need at least one report")
    buf = io.StringIO()
    for line in header_comments:
        buf.write(f"# {line}\n")
    writer = csv.writer(buf)
    writer.writerow(REPORT_COLUMNS)
    for name, rep in reports:
        writer.writerow(_report_row(name, rep))
    return buf.getvalue()


def report_text(reports: list[tuple[str, EvalReport]]) -> str:
    """Aligned text table mirroring the CSV: P/R/F1 per class + weighted."""
    if not reports:
        raise DataError("need at least one report")
    rows = [REPORT_COLUMNS] + [_report_row(name, rep) for name, rep in reports]
    widths = [max(len(row[i]) for row in rows) for i in range(len(REPORT_COLUMNS))]
    lines = []
    for i, row in enumerate(rows):
        lines.append(
            "  ".join(
                cell.ljust(widths[j]) if j == 0 else cell.rjust(widths[j])
                for j, cell in enumerate(row)
            )
        )
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def mcnemar_csv(
    results: list[tuple[str, str, McNemarResult]], header_comments=()
) -> str:
    buf = io.StringIO()
    for line in header_comments:
        buf.write(f"# {line}\n")
    writer = csv.writer(buf)
    writer.writerow(["classifier_a", "classifier_b", "b", "c", "statistic", "p_value"])
    for name_a, name_b, res in results:
        writer.writerow(
            [name_a, name_b, res.b, res.c, f"{res.statistic:.6g}", f"{res.p_value:.6g}"]
        )
    return buf.getvalue()
