"""Synchronous message-passing simulator and communication accounting."""

import numpy as np
import pytest

from cachesense.caching import assign_coverage
from cachesense.field import generate_deployment
from cachesense.netsim import CacheNetwork, ProtocolError, comm_report


def layout_for(n_sensors, n_caches):
    return assign_coverage(generate_deployment(n_sensors, seed=0), n_caches)


def full_outbox(layout, payload):
    out = {}
    for c in range(layout.n_caches):
        for cp in layout.neighbors[c]:
            out[(c, int(cp))] = np.full(payload, float(c * 10 + cp))
    return out


def test_two_caches_round_totals():
    layout = layout_for(100, 2)
    net = CacheNetwork(layout, full_payload=100 * 4)
    inbox = net.exchange_round(full_outbox(layout, 5 * 4))
    # one edge, two directed messages of Q*W = 20 scalars
    assert net.log.rounds == 1
    assert net.log.total_messages == 2
    assert net.log.total_scalars == 40
    assert set(inbox) == {(0, 1), (1, 0)}


def test_complete_graph_message_count():
    layout = layout_for(100, 4)
    net = CacheNetwork(layout, full_payload=400)
    net.exchange_round(full_outbox(layout, 25 * 4))
    assert net.log.total_messages == 12  # C*(C-1) directed messages
    assert net.log.total_scalars == 12 * 100


def test_delivery_is_lossless_and_addressed():
    layout = layout_for(16, 2)
    net = CacheNetwork(layout, full_payload=16)
    out = full_outbox(layout, 3)
    inbox = net.exchange_round(out)
    # receiver keys: (receiver, sender); content is the sender's array, bit-exact
    assert inbox[(1, 0)] is out[(0, 1)]
    assert inbox[(0, 1)] is out[(1, 0)]


def test_missing_message_is_protocol_violation():
    layout = layout_for(16, 4)
    net = CacheNetwork(layout, full_payload=16)
    out = full_outbox(layout, 2)
    del out[(2, 3)]
    with pytest.raises(ProtocolError):
        net.exchange_round(out)


def test_unexpected_edge_is_protocol_violation():
    layout = layout_for(16, 2)
    net = CacheNetwork(layout, full_payload=16)
    out = full_outbox(layout, 2)
    out[(0, 0)] = np.zeros(2)
    with pytest.raises(ProtocolError):
        net.exchange_round(out)


def test_cumulative_totals_match_closed_form():
    layout = layout_for(100, 2)
    q, w, rounds = 25, 4, 1500
    net = CacheNetwork(layout, full_payload=100 * w)
    for _ in range(rounds):
        net.exchange_round(full_outbox(layout, q * w))
    assert net.log.total_scalars == 2 * q * w * rounds  # 300000
    report = comm_report(net.log)
    assert report["scalars_total"] == 300000
    assert report["rounds"] == rounds


def test_reduction_ratio_is_ambient_over_anchor():
    layout = layout_for(100, 4)
    net = CacheNetwork(layout, full_payload=100 * 4)
    for _ in range(7):
        net.exchange_round(full_outbox(layout, 25 * 4))
    report = comm_report(net.log)
    assert report["full_consensus_scalars"] == 7 * 12 * 400
    assert report["reduction_ratio"] == 4.0  # N/Q, independent of W and rounds


def test_zero_payload_rounds():
    layout = layout_for(16, 2)
    net = CacheNetwork(layout, full_payload=64)
    net.exchange_round(full_outbox(layout, 0))
    report = comm_report(net.log)
    assert report["scalars_total"] == 0
    assert report["reduction_ratio"] is None


def test_log_rows_for_export():
    layout = layout_for(16, 2)
    net = CacheNetwork(layout, full_payload=64)
    net.exchange_round(full_outbox(layout, 4))
    net.exchange_round(full_outbox(layout, 4))
    rows = net.log.rows()
    assert rows[0] == (0, 0, 1, 4)
    assert len(rows) == 4
    assert {r[0] for r in rows} == {0, 1}
