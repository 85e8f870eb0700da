import json
import math

import pytest

from anmsim.controlplane import broker as br
from anmsim.errors import ConfigError


class TestTopicGrammar:
    def test_valid_topics(self):
        for t in ("unit/0/cmd", "unit/12/telemetry", "unit/a-b_c/ack",
                  "unit/3/event", "broker/hello", "broker/subscribe"):
            assert br.topic_valid(t), t

    def test_invalid_topics(self):
        for t in ("", "unit//cmd", "unit/0/cmds", "unit/0", "telemetry",
                  "unit/0/cmd/extra", "broker/quit", "Unit/0/cmd",
                  "unit/0 /cmd", "unit/#/cmd"):
            assert not br.topic_valid(t), t

    def test_valid_filters(self):
        for f in ("#", "unit/0/#", "unit/#", "unit/0/cmd", "broker/hello"):
            assert br.filter_valid(f), f

    def test_invalid_filters(self):
        for f in ("", "#/unit", "unit/0/#/x", "unit/**", "#unit", "/#"):
            assert not br.filter_valid(f), f

    def test_matching(self):
        assert br.topic_matches("#", "unit/0/cmd")
        assert br.topic_matches("unit/0/#", "unit/0/cmd")
        assert br.topic_matches("unit/#", "unit/0/cmd")
        assert br.topic_matches("unit/0/cmd", "unit/0/cmd")
        assert not br.topic_matches("unit/0/#", "unit/1/cmd")
        assert not br.topic_matches("unit/0/telemetry", "unit/0/cmd")
        assert not br.topic_matches("unit/#", "broker/hello")
        # prefix match must respect segment boundary
        assert not br.topic_matches("unit/1/#", "unit/10/cmd")


class TestEnvelopeCodec:
    def test_round_trip(self):
        env = br.make_envelope("unit/0/telemetry", 7, {"t": 1.5, "a": [1, 2]})
        raw = br.encode_envelope(env)
        assert br.decode_envelope(raw) == env

    def test_canonical_bytes(self):
        # object key order never reaches the wire
        a = br.encode_envelope({"topic": "unit/0/ack", "seq": 1,
                                "payload": {"b": 1, "a": 2}})
        b = br.encode_envelope({"payload": {"a": 2, "b": 1}, "seq": 1,
                                "topic": "unit/0/ack"})
        assert a == b
        assert b" " not in a

    def test_rejects_non_finite_payload(self):
        for bad in (math.nan, math.inf, {"x": [1.0, -math.inf]}):
            with pytest.raises(ValueError):
                br.encode_envelope(br.make_envelope("unit/0/ack", 0, bad))

    def test_decode_rejects_malformed(self):
        cases = [
            b"not json",
            b"[]",
            b'{"topic":"unit/0/cmd","seq":0}',
            b'{"topic":"unit/0/cmd","payload":{}}',
            b'{"seq":0,"payload":{}}',
            b'{"topic":"nope","seq":0,"payload":{}}',
            b'{"topic":"unit/0/cmd","seq":-1,"payload":{}}',
            b'{"topic":"unit/0/cmd","seq":true,"payload":{}}',
            b'{"topic":"unit/0/cmd","seq":0,"payload":{},"x":1}',
        ]
        for raw in cases:
            with pytest.raises(ConfigError):
                br.decode_envelope(raw)


class TestBroker:
    def test_fanout_respects_filters(self):
        b = br.Broker()
        all_sub = b.attach("all", filters=("#",))
        tel = b.attach("tel", filters=("unit/0/telemetry",))
        u1 = b.attach("u1", filters=("unit/1/#",))
        b.publish("unit/0/telemetry", {"t": 0})
        b.publish("unit/1/ack", {"ok": True})
        assert [e["topic"] for e in all_sub.drain()] == [
            "unit/0/telemetry", "unit/1/ack"]
        assert [e["topic"] for e in tel.drain()] == ["unit/0/telemetry"]
        assert [e["topic"] for e in u1.drain()] == ["unit/1/ack"]

    def test_seq_monotonic_across_topics(self):
        b = br.Broker()
        sub = b.attach("s", filters=("#",))
        for i in range(5):
            b.publish("unit/0/event", {"i": i})
        seqs = [e["seq"] for e in sub.drain()]
        assert seqs == sorted(seqs)
        assert len(set(seqs)) == 5

    def test_fifo_per_subscriber(self):
        b = br.Broker()
        sub = b.attach("s", filters=("#",))
        for i in range(20):
            b.publish("unit/0/telemetry", {"i": i})
        drained = [e["payload"]["i"] for e in sub.drain()]
        assert drained == list(range(20))

    def test_bounded_queue_drops_oldest(self):
        b = br.Broker()
        sub = b.attach("s", filters=("#",), queue_len=4)
        for i in range(10):
            b.publish("unit/0/telemetry", {"i": i})
        kept = [e["payload"]["i"] for e in sub.drain()]
        assert kept == [6, 7, 8, 9]
        assert sub.dropped == 6

    def test_slow_subscriber_does_not_block_others(self):
        b = br.Broker()
        slow = b.attach("slow", filters=("#",), queue_len=2)
        fast = b.attach("fast", filters=("#",), queue_len=100)
        for i in range(50):
            b.publish("unit/0/telemetry", {"i": i})
        assert len(fast.drain()) == 50
        assert slow.dropped == 48

    def test_publish_validates_before_fanout(self):
        b = br.Broker()
        sub = b.attach("s", filters=("#",))
        with pytest.raises((ConfigError, ValueError)):
            b.publish("unit/0/telemetry", {"x": math.nan})
        with pytest.raises(ConfigError):
            b.publish("bad topic", {})
        assert sub.drain() == []

    def test_detach_stops_delivery(self):
        b = br.Broker()
        sub = b.attach("s", filters=("#",))
        b.detach(sub)
        b.publish("unit/0/event", {})
        assert sub.drain() == []

    def test_set_filters_replaces(self):
        b = br.Broker()
        sub = b.attach("s", filters=("#",))
        sub.set_filters(["unit/1/#"])
        b.publish("unit/0/telemetry", {})
        b.publish("unit/1/telemetry", {})
        assert [e["topic"] for e in sub.drain()] == ["unit/1/telemetry"]
        with pytest.raises(ConfigError):
            sub.set_filters(["unit/**"])
