import math

import pytest

from app.apps.exceptions import EmptyPath, StaleSamples
from app.apps.microburst import microburst_program
from app.apps.rcp import (
    RATE, VERSION, LinkSample, RcpFlowState, alpha_aggregate, from_wire, rcp_compute_rate, rcp_update_phase,
    to_wire, update_outcome,
)
from app.endhost.records import ExecutedTppRecord
from app.experiments.config import load_experiment
from app.experiments.runner import run_experiment
from app.tpp.models import Encapsulation, Opcode

C = 100e6


def _record(slots, time_ns=0, birth_ns=0, forward_hops=None) -> ExecutedTppRecord:
    return ExecutedTppRecord("h0", "h0", time_ns, 1, len(slots), 0, Encapsulation.STANDALONE,
                             tuple(tuple(s) for s in slots), microburst_program(5), birth_ns=birth_ns,
                             forward_hops=forward_hops)


def test_rate_update_formula():
    # 0.5 * (75 - 100) Мбит/с при d = T: R * (1 - (-12.5e6) / 100e6)
    assert rcp_compute_rate(50e6, C, 75e6, 0, 0.01, 0.01) == pytest.approx(56.25e6)


def test_queue_term_slows_down():
    # очередь 125 000 байт = 1 Мбит за d = 10 мс
    new = rcp_compute_rate(50e6, C, C, 125_000, 0.01, 0.01)
    assert new == pytest.approx(50e6 * (1 - 0.25 * 100e6 / C))


def test_rate_is_clamped():
    assert rcp_compute_rate(90e6, C, 0, 0, 0.01, 0.01) == C
    assert rcp_compute_rate(1e6, C, 10 * C, 10**7, 0.01, 0.01) == pytest.approx(C * 1e-3)
    try:
        rcp_compute_rate(1e6, C, C, 0, 0.0, 0.01)
        assert False, "should have raised"
    except ValueError:
        pass


def test_alpha_aggregate():
    assert alpha_aggregate([100, 50], math.inf) == 50
    assert alpha_aggregate([100, 50], 1) == pytest.approx(100 / 3)
    assert alpha_aggregate([40], 2) == pytest.approx(40)
    try:
        alpha_aggregate([], 1)
        assert False, "should have raised"
    except EmptyPath:
        pass


def test_wire_conversion():
    assert to_wire(C, C) == 0xFFFF
    assert to_wire(0, C) == 1
    assert to_wire(C / 2, C) == 32768
    assert from_wire(0, C) == C
    assert from_wire(0xFFFF, C) == C


def _flow_with_samples(now_ns=0) -> RcpFlowState:
    flow = RcpFlowState([C, C / 2], 1e6)
    flow.samples = [LinkSample(1, 0, 32768, 3, 0, C), LinkSample(2, 0, 0, 7, 0x8000, C / 2)]
    flow.sample_time_ns = now_ns
    return flow


def test_update_phase_hop_memory():
    flow = _flow_with_samples()
    p = rcp_update_phase(flow, 1_000_000)
    assert [(i.opcode, i.address) for i in p.instructions] == [(Opcode.CSTORE, VERSION), (Opcode.STORE, RATE)]
    v0, v0_next, r0 = p.hop_words(0)
    assert (v0, v0_next) == (3, 4)
    assert r0 == to_wire(flow.pending[0], C)
    assert p.hop_words(1)[:2] == [7, 8]
    assert set(flow.pending) == {0, 1}


def test_update_phase_leaves_unselected_links():
    flow = _flow_with_samples()
    p = rcp_update_phase(flow, 0, links=[1])
    v, v_next, r = p.hop_words(0)
    assert v == v_next != 3
    assert r == 0
    assert set(flow.pending) == {1}


def test_update_phase_needs_fresh_samples():
    flow = _flow_with_samples(now_ns=0)
    try:
        rcp_update_phase(flow, 20_000_000)
        assert False, "should have raised"
    except StaleSamples:
        pass
    try:
        rcp_update_phase(RcpFlowState([C], 1e6), 0)
        assert False, "should have raised"
    except StaleSamples:
        pass


def test_update_outcome_reads_pre_slots():
    flow = _flow_with_samples()
    rcp_update_phase(flow, 0)
    # первое звено: CSTORE прошёл (V+1), второе: проиграл гонку (чужая версия)
    ok, failed = update_outcome(flow, _record([(4, 4, 0), (9, 8, 0)]))
    assert ok == [0] and failed == [1]
    assert set(flow.pending) == {0}


def test_ingest_uses_forward_hops_and_rtt():
    flow = RcpFlowState([C, C], 1e6)
    rec = _record([(1, 2, 100, 0, 0), (2, 0, 200, 5, 0x4000), (2, 0, 0, 5, 0), (1, 0, 0, 0, 0)],
                  time_ns=3_000_000, birth_ns=1_000_000, forward_hops=2)
    samples = flow.ingest(rec)
    assert [s.switch_id for s in samples] == [1, 2]
    assert samples[0].queue_bytes == 2 * 64
    assert samples[1].rate_bps == pytest.approx(C * 0x4000 / 0xFFFF)
    assert flow.d == pytest.approx(0.002)
    flow.observe_rtt(10_000_000)
    assert flow.d == pytest.approx(0.002 * 7 / 8 + 0.01 / 8)
    assert flow.control_d == pytest.approx(0.01)


def test_due_links_wait_a_period_after_version_change():
    flow = _flow_with_samples()
    assert flow.due_links(0) == [0, 1]
    assert flow.due_links(5_000_000) == []
    flow.samples[1] = LinkSample(2, 0, 0, 8, 0x8000, C / 2)
    assert flow.due_links(10_000_000) == [0]
    assert flow.due_links(20_000_000) == [0, 1]


def test_aggregate_stays_below_bottleneck():
    flow = _flow_with_samples()
    flow.pending = {1: 10e6}
    assert flow.aggregate() == pytest.approx(10e6)
    flow.pending = {}
    flow.samples = [LinkSample(1, 0, 0, 0, 0, C)]
    assert flow.aggregate() == C / 2


def test_maxmin_run_converges_to_fair_share():
    cfg, base = load_experiment("rcp_maxmin")
    cfg = cfg.model_copy(update={"duration_ms": 1500})
    result = run_experiment(cfg, base=base, write=False)
    assert result.ok
    rates = result.summary["final_third_mean_rate_mbps"]
    assert sorted(rates) == ["a", "b", "c"]
    for flow, mbps in rates.items():
        assert mbps == pytest.approx(50, rel=0.1), flow
    assert all(n > 0 for n in result.summary["updates"].values())
