import csv
import io
import itertools
import random

import pytest

from shego.data.schema import Schema, UnknownReferenceError
from shego.evaluator import (
    MetricsReport,
    TurnPrediction,
    UndefinedMetricError,
    average_goal_accuracy,
    joint_goal_accuracy,
    parse_decoded,
    report,
)
from shego.prompts import build_query

SCHEMA = Schema.from_json([{
    "service_name": "Flights_1", "description": "f",
    "slots": [{"name": "DepartureDate", "description": "date of departure"},
              {"name": "DestinationCity", "description": "destination city"}]}])
QUERY = build_query(SCHEMA, "Flights_1")


def pred(pred_state, gold_state, service="Flights_1", i=0):
    return TurnPrediction(f"d{i}", i, service, dict(pred_state), dict(gold_state))


# -- parsing ---------------------------------------------------------------------------------

def test_parse_basic():
    assert parse_decoded("<M1> next wednesday <M2> lax", QUERY) == {
        "DepartureDate": "next wednesday", "DestinationCity": "lax"}


def test_parse_empty_and_missing_sentinel():
    assert parse_decoded([], QUERY) == {"DepartureDate": "none", "DestinationCity": "none"}
    assert parse_decoded("<M2> lax", QUERY) == {"DepartureDate": "none", "DestinationCity": "lax"}


def test_parse_out_of_order_duplicates_eos_and_junk():
    toks = "junk <M2> lax <pad> <M1> today <M2> boston <M9> x <eos> <M1> later".split()
    assert parse_decoded(toks, QUERY) == {"DepartureDate": "today", "DestinationCity": "lax"}
    assert parse_decoded("<M1> <M2>", QUERY) == {"DepartureDate": "none", "DestinationCity": "none"}


# -- brute-force scorer ----------------------------------------------------------------------

def brute_force(pairs):
    """Independent scorer over raw (pred, gold) dicts."""
    def norm(v):
        v = " ".join(str(v).lower().split())
        return v or "none"

    jga_hits = 0
    active = correct = 0
    for p, g in pairs:
        keys = set(p) | set(g)
        ok = True
        for k in keys:
            pv, gv = norm(p.get(k, "none")), norm(g.get(k, "none"))
            if pv != gv:
                ok = False
            if gv != "none":
                active += 1
                correct += pv == gv
        jga_hits += ok
    return jga_hits / len(pairs), (correct / active if active else None)


def random_pairs(rng, n):
    slots = ["a", "b", "c", "d"]
    values = ["x", "y", "Z", "none", "two words"]
    pairs = []
    for _ in range(n):
        gold = {s: rng.choice(values) for s in slots if rng.random() < 0.8}
        p = {s: (gold.get(s, "none") if rng.random() < 0.7 else rng.choice(values)) for s in slots
             if rng.random() < 0.9}
        pairs.append((p, gold))
    return pairs


@pytest.mark.parametrize("seed", range(5))
def test_jga_and_aga_match_brute_force(seed):
    rng = random.Random(seed)
    for _ in range(100):
        pairs = random_pairs(rng, rng.randint(1, 12))
        preds = [pred(p, g, i=i) for i, (p, g) in enumerate(pairs)]
        jga, aga = brute_force(pairs)
        assert joint_goal_accuracy(preds) == jga
        if aga is None:
            with pytest.raises(UndefinedMetricError):
                average_goal_accuracy(preds)
        else:
            assert average_goal_accuracy(preds) == aga


def test_jga_definition_examples():
    right = pred({"DepartureDate": "today"}, {"DepartureDate": "today"})
    wrong = pred({"DepartureDate": "today", "DestinationCity": "lax"}, {"DepartureDate": "today"})
    assert joint_goal_accuracy([right, right]) == 1.0
    assert joint_goal_accuracy([right, wrong]) == 0.5
    with pytest.raises(ValueError):
        joint_goal_accuracy([])


def test_normalization_is_case_and_whitespace_only():
    assert pred({"a": "  Next   Wednesday"}, {"a": "next wednesday"}).joint_correct()
    assert not pred({"a": "wednesday"}, {"a": "next wednesday"}).joint_correct()


def test_aga_two_of_three_and_none_is_wrong():
    gold = {"a": "x", "b": "y", "c": "z", "d": "none"}
    assert average_goal_accuracy([pred({"a": "x", "b": "y", "c": "none", "d": "q"}, gold)]) == pytest.approx(2 / 3)
    with pytest.raises(UndefinedMetricError):
        average_goal_accuracy([pred({"a": "x"}, {})])


# -- report -------------------------------------------------------------------------------

def domain_preds(service, n_right, n_total, start=0):
    return [pred({"x": "1" if i < n_right else "2"}, {"x": "1"}, service, start + i) for i in range(n_total)]


def test_avg_jga_is_unweighted_domain_mean():
    preds = domain_preds("Flights_1", 4, 5) + domain_preds("Hotels_2", 6, 10, 5)
    rep = report(preds)
    assert rep.domains["Flights"].jga == pytest.approx(0.8) and rep.domains["Hotels"].jga == pytest.approx(0.6)
    assert rep.avg_jga == pytest.approx(0.7)
    weighted = sum(d.jga * d.count for d in rep.domains.values()) / len(preds)
    assert abs(rep.overall_jga - weighted) < 1e-9


def test_single_domain_avg_equals_overall():
    rep = report(domain_preds("Flights_1", 3, 7) + domain_preds("Flights_2", 1, 2, 7))
    assert list(rep.domains) == ["Flights"]
    assert rep.avg_jga == rep.domains["Flights"].jga == rep.overall_jga


def test_explicit_domain_map_and_unmapped_service():
    preds = domain_preds("Flights_1", 1, 2) + domain_preds("Hotels_1", 2, 2, 2)
    rep = report(preds, {"Flights_1": "travel", "Hotels_1": "travel"})
    assert list(rep.domains) == ["travel"]
    with pytest.raises(UnknownReferenceError):
        report(preds, {"Flights_1": "travel"})


def test_metrics_are_permutation_invariant():
    rng = random.Random(4)
    preds = [pred(p, g, svc, i) for i, ((p, g), svc) in
             enumerate(zip(random_pairs(rng, 30), itertools.cycle(["A_1", "B_1", "C_2"])))]
    base = report(preds)
    for _ in range(5):
        shuffled = preds[:]
        rng.shuffle(shuffled)
        other = report(shuffled)
        assert (other.overall_jga, other.overall_aga, other.avg_jga) == (base.overall_jga, base.overall_aga, base.avg_jga)
        assert other.to_csv() == base.to_csv()


def test_report_values_in_unit_interval_and_slot_table():
    rng = random.Random(2)
    rep = report([pred(p, g, "A_1", i) for i, (p, g) in enumerate(random_pairs(rng, 20))])
    values = [rep.overall_jga, rep.avg_jga] + list(rep.slot_accuracy.values())
    assert all(0.0 <= v <= 1.0 for v in values)
    assert set(rep.slot_accuracy) <= {f"A_1/{s}" for s in "abcd"}


def test_csv_schema():
    rep = report(domain_preds("Flights_1", 1, 2) + domain_preds("Hotels_1", 2, 2, 2))
    rows = list(csv.reader(io.StringIO(rep.to_csv())))
    assert tuple(rows[0]) == MetricsReport.CSV_COLUMNS == ("domain", "count", "jga", "aga")
    assert [r[0] for r in rows[1:]] == ["Flights", "Hotels", "__overall__", "__avg_jga__"]
    assert "Avg. JGA" in rep.table()


def test_empty_report_errors():
    with pytest.raises(ValueError):
        report([])
