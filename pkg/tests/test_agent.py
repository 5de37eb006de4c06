import math
import random

import pytest
from hypothesis import given, strategies as st

from hidsim.agent import (
    FEATURES,
    AnomalyProfile,
    BaselineLearner,
    Condition,
    FeatureBaseline,
    Finding,
    Observation,
    RuleError,
    Severity,
    SignatureRecord,
    SignatureRule,
    SourceStats,
    StimulusVector,
    Summary,
    WindowInput,
    detect_anomaly,
    match_signatures,
    postprocess,
    preprocess,
)
from hidsim.policy import default_rules
from hidsim.simcore import BROADCAST, Kind, Packet


def obs(src, at=0, kind=Kind.DATA, cell=(0, 0), transmitter=None, trace=None, rssi=-60.0, corrupted=False, seq=0):
    tx = src if transmitter is None else transmitter
    pkt = Packet(src, tx, BROADCAST, kind, trace or (tx,), at, seq)
    return Observation(at, pkt, tx, rssi, corrupted, cell)


# -- preprocess --------------------------------------------------------------


def test_empty_window_empty_vector():
    v = preprocess(WindowInput(0, 1000))
    assert v.entries == {} and v.window == (0, 1000)


def test_pdr_all_delivered():
    w = WindowInput(0, 1000, [obs(4, at=i) for i in range(10)], expected_tx={4: 10})
    assert preprocess(w).entries[4].pdr == 1.0


def test_pdr_partial_and_silent_source():
    w = WindowInput(0, 1000, [obs(4, at=i) for i in range(4)], expected_tx={4: 10, 5: 3})
    v = preprocess(w)
    assert v.entries[4].pdr == pytest.approx(0.4)
    assert v.entries[5].pdr == 0.0 and v.entries[5].pkt_count == 0


def test_two_cell_sighting():
    # one id heard in two cells within a window: counted by hand as two cells
    w = WindowInput(0, 1000, [obs(7, cell=(0, 0)), obs(7, cell=(1, 0), transmitter=30), obs(7, cell=(0, 0))])
    e = preprocess(w).entries[7]
    assert e.distinct_cells_seen == 2 and e.transmitters == {7, 30}


def test_counts_by_kind_and_rssi_mean():
    w = WindowInput(0, 1000, [obs(4, kind=Kind.HELLO, rssi=-50.0), obs(4, rssi=-70.0),
                              obs(4, kind=Kind.ROUTE_ADVERT, rssi=-60.0)])
    e = preprocess(w).entries[4]
    assert (e.hello_count, e.pkt_count, e.advert_count) == (1, 1, 1)
    assert e.mean_rssi == pytest.approx(-60.0)


def test_corrupted_counts_busy_only():
    w = WindowInput(0, 100, [obs(4, corrupted=True)])
    e = preprocess(w).entries[4]
    assert e.pkt_count == 0 and e.carrier_busy_frac == pytest.approx(0.01)


def test_relayed_observations_do_not_count():
    w = WindowInput(0, 1000, [obs(4, transmitter=6, trace=(4, 6))])
    assert preprocess(w).entries == {}


def test_forward_ratio_and_jammer_flag():
    w = WindowInput(0, 100, forwarding={6: (4, 1)}, busy_ms={9: 90.0})
    v = preprocess(w)
    assert v.entries[6].forward_ratio == 0.25
    assert v.jammers == (9,)
    assert v.attribute(6, "forward_ratio") == 9
    assert v.attribute(6, "slot_violations") == 6


@given(st.lists(st.tuples(st.integers(1, 6), st.integers(0, 999), st.sampled_from(list(Kind)[:3]),
                          st.booleans()), max_size=60),
       st.dictionaries(st.integers(1, 6), st.integers(0, 20), max_size=6))
def test_vector_invariants(raw, due):
    w = WindowInput(0, 1000, [obs(s, at=t, kind=k, corrupted=c) for s, t, k, c in raw], expected_tx=due)
    v = preprocess(w)
    for e in v.entries.values():
        assert 0 <= e.pdr <= 1 and 0 <= e.carrier_busy_frac <= 1 and 0 <= e.forward_ratio <= 1
        for f in FEATURES:
            x = e.value(f)
            assert x is None or (x >= 0 if f != "mean_rssi" else math.isfinite(x))
    assert preprocess(w) == v


def test_window_must_be_positive():
    with pytest.raises(ValueError):
        StimulusVector((5, 5))


# -- signatures ----------------------------------------------------------------


def test_empty_record_no_findings():
    v = StimulusVector((0, 1000), {4: SourceStats(hello_count=500)})
    assert match_signatures(SignatureRecord(), v) == []


def test_hello_flood_rule_fires():
    rule = SignatureRule("hf", "HelloFlood", (Condition("hello_count", ">", 50),))
    w = WindowInput(0, 1000, [obs(4, at=i * 10, kind=Kind.HELLO) for i in range(100)])
    (f,) = match_signatures(SignatureRecord((rule,)), preprocess(w))
    assert f.label == "HelloFlood" and f.subject == 4 and f.observed == 100


def test_blacklisted_sender_is_danger():
    rec = SignatureRecord(blacklist=frozenset({4}))
    v = preprocess(WindowInput(0, 1000, [obs(4)]))
    (f,) = match_signatures(rec, v)
    assert f.severity is Severity.DANGER and f.label == "Blacklisted"


def test_rules_run_in_id_order():
    rules = (SignatureRule("b", "B", (Condition("pkt_count", ">", 0),)),
             SignatureRule("a", "A", (Condition("pkt_count", ">", 0),)))
    v = StimulusVector((0, 1000), {5: SourceStats(pkt_count=2), 4: SourceStats(pkt_count=1)})
    out = match_signatures(SignatureRecord(rules), v)
    assert [(f.label, f.subject) for f in out] == [("A", 4), ("A", 5), ("B", 4), ("B", 5)]
    assert out == match_signatures(SignatureRecord(rules), v)


def test_rate_condition():
    c = Condition("rate:pkt_count", ">", 10)
    assert c.holds(SourceStats(pkt_count=6), 500)
    assert not c.holds(SourceStats(pkt_count=6), 1000)
    assert not Condition("mean_rssi", "<", 0).holds(SourceStats(), 1000)


@pytest.mark.parametrize("cond", [Condition("bogus", ">", 1), Condition("pkt_count", "!=", 1),
                                  Condition("pkt_count", ">", float("inf"))])
def test_bad_conditions(cond):
    with pytest.raises(RuleError):
        cond.validate()


def test_bad_rules():
    with pytest.raises(RuleError):
        SignatureRule("", "x", (Condition("pkt_count", ">", 1),)).validate()
    with pytest.raises(RuleError):
        SignatureRule("r", "x", ()).validate()
    dup = SignatureRule("r", "x", (Condition("pkt_count", ">", 1),))
    with pytest.raises(RuleError):
        SignatureRecord((dup, dup)).validate()


def test_default_rules_valid():
    SignatureRecord(default_rules()).validate()


# -- anomaly -------------------------------------------------------------------


def prof(k=3.0, **base):
    return AnomalyProfile(k=k, baselines={(4, f): FeatureBaseline(*mb) for f, mb in base.items()})


def test_at_mean_no_finding():
    v = StimulusVector((0, 1000), {4: SourceStats(pkt_count=5)})
    assert detect_anomaly(prof(pkt_count=(5.0, 1.0)), v) == []


def test_k_sigma_boundary():
    v = lambda x: StimulusVector((0, 1000), {4: SourceStats(pkt_count=x)})
    assert detect_anomaly(prof(pkt_count=(5.0, 1.0)), v(8)) == []
    (f,) = detect_anomaly(prof(pkt_count=(5.0, 1.0)), v(9))
    assert f.detector == "Anomaly" and f.feature == "pkt_count"


def test_zero_variance_any_deviation():
    v = StimulusVector((0, 1000), {4: SourceStats(pkt_count=6)})
    assert len(detect_anomaly(prof(pkt_count=(5.0, 0.0)), v)) == 1


def test_no_baseline_no_deviation_findings():
    v = StimulusVector((0, 1000), {4: SourceStats(pkt_count=600)})
    assert detect_anomaly(AnomalyProfile(), v) == []


def test_absolute_threshold():
    p = AnomalyProfile(thresholds=(Condition("carrier_busy_frac", ">", 0.5),))
    (f,) = detect_anomaly(p, StimulusVector((0, 1000), {4: SourceStats(carrier_busy_frac=0.8)}))
    assert f.label == "Threshold"


def test_profile_validate():
    with pytest.raises(ValueError):
        AnomalyProfile(k=0).validate()
    with pytest.raises(ValueError):
        AnomalyProfile(warmup_windows=0).validate()
    with pytest.raises(ValueError):
        FeatureBaseline(0.0, -1.0)


def test_learner_freezes_after_warmup():
    rng = random.Random(0)
    xs = [rng.randint(3, 9) for _ in range(10)]
    lr = BaselineLearner(10)
    for i, x in enumerate(xs):
        assert not lr.is_frozen(4)
        lr.observe(StimulusVector((i, i + 1), {4: SourceStats(pkt_count=x)}))
    assert lr.is_frozen(4)
    mean = sum(xs) / 10
    std = math.sqrt(sum((x - mean) ** 2 for x in xs) / 10)
    assert lr.frozen[(4, "pkt_count")].mean == pytest.approx(mean)
    assert lr.frozen[(4, "pkt_count")].std == pytest.approx(std)
    lr.observe(StimulusVector((20, 21), {4: SourceStats(pkt_count=1000)}))
    assert lr.frozen[(4, "pkt_count")].mean == pytest.approx(mean)
    lr.forget([4])
    assert not lr.is_frozen(4) and not any(k[0] == 4 for k in lr.frozen)


def test_learner_source_filter():
    lr = BaselineLearner(1)
    lr.observe(StimulusVector((0, 1), {4: SourceStats(), 5: SourceStats()}), sources=[5, 99])
    assert lr.is_frozen(5) and not lr.is_frozen(4)


# -- post processing -----------------------------------------------------------


def test_empty_report_still_built():
    report, urgent = postprocess(3, (0, 1000), [], Summary(0, 0))
    assert report.empty and urgent == [] and report.from_agent == 3


def test_danger_split_out():
    d = Finding(500, 4, "Response", Severity.DANGER, "Suspect")
    m = Finding(500, 5, "TDMA", Severity.MISBEHAVIOR, "SlotViolation")
    report, urgent = postprocess(3, (0, 1000), [m, d], Summary(10, 9))
    assert urgent == [d] and report.findings == (m, d)
    assert (report.packets_seen, report.forwarded) == (10, 9)


def test_accused_prefers_culprit():
    assert Finding(0, 4, "x", Severity.INFO, "y").accused == 4
    assert Finding(0, 4, "x", Severity.INFO, "y", culprit=9).accused == 9
