import random

import pytest

from tablesieve.errors import DataError
from tablesieve.evaluation import (
    confusion,
    mcnemar,
    mcnemar_csv,
    report_csv,
    report_text,
    score,
    stratified_split,
)


def make_ids(n_layout, n_genuine):
    ids = [f"l{i}" for i in range(n_layout)] + [f"g{i}" for i in range(n_genuine)]
    labels = ["layout"] * n_layout + ["genuine"] * n_genuine
    return ids, labels


def split_class_counts(subset, labels_by_id):
    out = {"layout": 0, "genuine": 0}
    for id_ in subset:
        out[labels_by_id[id_]] += 1
    return out


def test_split_gold_standard_sizes():
    ids, labels = make_ids(6223, 6889)
    train, val, test = stratified_split(ids, labels, 0.20, 0.20, seed=13)
    assert (len(train), len(val), len(test)) == (8392, 2098, 2622)
    by_id = dict(zip(ids, labels))
    assert split_class_counts(test, by_id) == {"layout": 1244, "genuine": 1378}
    assert split_class_counts(val, by_id) == {"layout": 996, "genuine": 1102}
    assert split_class_counts(train, by_id) == {"layout": 3983, "genuine": 4409}


def test_split_zero_val_fraction():
    ids, labels = make_ids(10, 10)
    train, val, test = stratified_split(ids, labels, 0.2, 0.0, seed=1)
    assert val == []
    assert (len(train), len(test)) == (16, 4)


def test_split_ten_ids_balanced():
    ids, labels = make_ids(5, 5)
    train, val, test = stratified_split(ids, labels, 0.2, 0.2, seed=1)
    assert (len(train), len(val), len(test)) == (6, 2, 2)
    by_id = dict(zip(ids, labels))
    assert split_class_counts(test, by_id) == {"layout": 1, "genuine": 1}
    assert split_class_counts(val, by_id) == {"layout": 1, "genuine": 1}


def test_split_deterministic_and_exact_partition():
    ids, labels = make_ids(57, 43)
    a = stratified_split(ids, labels, 0.25, 0.3, seed=99)
    b = stratified_split(ids, labels, 0.25, 0.3, seed=99)
    assert a == b
    train, val, test = a
    combined = sorted(train + val + test)
    assert combined == sorted(ids)
    c = stratified_split(ids, labels, 0.25, 0.3, seed=100)
    assert c != a  # different seed shuffles differently


def test_split_validations():
    ids, labels = make_ids(2, 50)
    with pytest.raises(DataError, match="layout"):
        stratified_split(ids, labels, 0.2, 0.2, seed=1)
    ids, labels = make_ids(10, 10)
    with pytest.raises(DataError):
        stratified_split(ids, labels, 0.0, 0.2, seed=1)
    with pytest.raises(DataError):
        stratified_split(ids, labels, 0.2, 1.0, seed=1)


def predictions_from_confusion(tp, fn, fp, tn):
    # Layout is the positive class here.
    gold = ["layout"] * (tp + fn) + ["genuine"] * (fp + tn)
    pred = (
        ["layout"] * tp + ["genuine"] * fn + ["layout"] * fp + ["genuine"] * tn
    )
    return pred, gold


def test_score_reconstructed_confusion():
    pred, gold = predictions_from_confusion(1171, 96, 83, 1272)
    rep = score(pred, gold)
    assert rep.support == {"layout": 1267, "genuine": 1355}
    lay, gen = rep.per_class["layout"], rep.per_class["genuine"]
    assert lay.precision == pytest.approx(0.934, abs=1e-3)
    assert lay.recall == pytest.approx(0.924, abs=1e-3)
    assert lay.f1 == pytest.approx(0.929, abs=1e-3)
    assert gen.precision == pytest.approx(0.930, abs=1e-3)
    assert gen.recall == pytest.approx(0.939, abs=1e-3)
    assert gen.f1 == pytest.approx(0.934, abs=1e-3)
    assert rep.weighted.f1 == pytest.approx(0.932, abs=1e-3)


def test_score_perfect_and_degenerate():
    gold = ["layout"] * 3 + ["genuine"] * 5
    rep = score(list(gold), gold)
    for lab in ("layout", "genuine"):
        m = rep.per_class[lab]
        assert (m.precision, m.recall, m.f1) == (1.0, 1.0, 1.0)
    assert rep.weighted.f1 == 1.0

    pred, gold = predictions_from_confusion(1267, 0, 1355, 0)
    rep = score(pred, gold)  # everything called layout
    gen = rep.per_class["genuine"]
    assert gen.recall == 0.0 and gen.f1 == 0.0 and gen.precision == 0.0


def test_score_weighted_between_per_class():
    rng = random.Random(4)
    for _ in range(50):
        n = rng.randint(2, 60)
        gold = [rng.choice(["layout", "genuine"]) for _ in range(n)]
        if len(set(gold)) < 2:
            gold = ["layout", "genuine"] * (n // 2 + 1)
        pred = [rng.choice(["layout", "genuine"]) for _ in gold]
        rep = score(pred, gold)
        f1s = [rep.per_class[lab].f1 for lab in ("layout", "genuine")]
        assert min(f1s) - 1e-12 <= rep.weighted.f1 <= max(f1s) + 1e-12


def test_score_permutation_invariant():
    pred, gold = predictions_from_confusion(20, 5, 7, 30)
    rep1 = score(pred, gold)
    order = list(range(len(gold)))
    random.Random(8).shuffle(order)
    rep2 = score([pred[i] for i in order], [gold[i] for i in order])
    assert rep1 == rep2


def test_score_f1_consistency():
    pred, gold = predictions_from_confusion(113, 21, 34, 88)
    rep = score(pred, gold)
    for lab in ("layout", "genuine"):
        m = rep.per_class[lab]
        if m.precision + m.recall:
            expect = 2 * m.precision * m.recall / (m.precision + m.recall)
        else:
            expect = 0.0
        assert m.f1 == pytest.approx(expect, abs=1e-12)


def test_confusion_counts():
    pred, gold = predictions_from_confusion(3, 1, 2, 4)
    c = confusion(pred, gold)
    assert c == {
        "layout_layout": 3,
        "layout_genuine": 1,
        "genuine_layout": 2,
        "genuine_genuine": 4,
    }


def make_paired_predictions(b, c, n_extra=30):
    # A and B both right on the extras; A right/B wrong on b; reverse on c.
    gold = ["genuine"] * (b + c + n_extra)
    pred_a = ["genuine"] * b + ["layout"] * c + ["genuine"] * n_extra
    pred_b = ["layout"] * b + ["genuine"] * c + ["genuine"] * n_extra
    return pred_a, pred_b, gold


def test_mcnemar_symmetric_disagreement():
    pred_a, pred_b, gold = make_paired_predictions(10, 10)
    res = mcnemar(pred_a, pred_b, gold)
    assert (res.b, res.c) == (10, 10)
    assert res.statistic == 0.0
    assert res.p_value == 1.0


def test_mcnemar_5_15():
    pred_a, pred_b, gold = make_paired_predictions(5, 15)
    res = mcnemar(pred_a, pred_b, gold)
    assert (res.b, res.c) == (5, 15)
    assert res.statistic == pytest.approx(4.05)
    assert res.p_value == pytest.approx(0.044, abs=0.002)


def test_mcnemar_no_disagreement():
    pred_a, pred_b, gold = make_paired_predictions(0, 0)
    res = mcnemar(pred_a, pred_b, gold)
    assert (res.statistic, res.p_value) == (0.0, 1.0)


def test_mcnemar_antisymmetric():
    pred_a, pred_b, gold = make_paired_predictions(7, 2)
    r1 = mcnemar(pred_a, pred_b, gold)
    r2 = mcnemar(pred_b, pred_a, gold)
    assert (r1.b, r1.c) == (r2.c, r2.b)
    assert r1.statistic == r2.statistic
    assert r1.p_value == r2.p_value


def test_report_rendering():
    pred, gold = predictions_from_confusion(20, 5, 7, 30)
    rep = score(pred, gold)
    csv_text = report_csv([("demo", rep)], header_comments=["seed=1"])
    lines = csv_text.strip().splitlines()
    assert lines[0] == "# seed=1"
    assert lines[1].startswith("name,layout_p,")
    assert len(lines) == 3
    row = lines[2].split(",")
    assert row[0] == "demo" and len(row) == 10
    assert all(len(v.split(".")[1]) == 3 for v in row[1:])

    txt = report_text([("demo", rep)])
    assert "layout_f1" in txt and "demo" in txt

    with pytest.raises(DataError):
        report_csv([])


def test_report_round_half_even():
    # 0.8125 and 0.4375 are exact in binary; half-even gives .812 / .438.
    assert f"{0.8125:.3f}" == "0.812"
    assert f"{0.4375:.3f}" == "0.438"


def test_mcnemar_csv():
    pred_a, pred_b, gold = make_paired_predictions(5, 15)
    res = mcnemar(pred_a, pred_b, gold)
    text = mcnemar_csv([("a", "b", res)])
    lines = text.strip().splitlines()
    assert lines[0] == "classifier_a,classifier_b,b,c,statistic,p_value"
    assert lines[1].startswith("a,b,5,15,4.05,")
