"""Topic-based message routing with bounded per-subscriber queues.

Envelopes are {topic, seq, payload} with canonical JSON encoding, so a
stream of them serializes identically everywhere (log file, TCP line
protocol, WebSocket frames). Delivery is at-most-once: a subscriber
whose queue is full loses the oldest queued envelope and the loss is
counted, never blocked on.

Topic grammar:
    unit/<id>/cmd        operator -> unit commands
    unit/<id>/ack        one reply per command
    unit/<id>/telemetry  periodic state frames
    unit/<id>/event      state changes, faults, calibration results
    broker/hello         server banner on connect
    broker/subscribe     filter registration

Filters are exact topics, a prefix ending in "/#", or "#" alone.
"""

import json
import re
from collections import deque

from ..errors import ConfigError

_TOPIC_RE = re.compile(
    r"^(unit/[A-Za-z0-9_-]+/(cmd|telemetry|ack|event)"
    r"|broker/(hello|subscribe))$"
)

DEFAULT_QUEUE_LEN = 512


def topic_valid(topic) -> bool:
    return isinstance(topic, str) and _TOPIC_RE.match(topic) is not None


def filter_valid(pattern) -> bool:
    if not isinstance(pattern, str) or not pattern:
        return False
    if pattern == "#":
        return True
    if pattern.endswith("/#"):
        return re.match(r"^[A-Za-z0-9_/-]+/#$", pattern) is not None
    return topic_valid(pattern)


def topic_matches(pattern, topic) -> bool:
    """Exact match, or trailing-# wildcard matching any remainder."""
    if pattern == "#":
        return True
    if pattern.endswith("/#"):
        return topic.startswith(pattern[:-1]) or topic == pattern[:-2]
    return pattern == topic


def encode_envelope(env) -> bytes:
    """Canonical one-line JSON; identical input gives identical bytes."""
    return json.dumps(
        env, sort_keys=True, separators=(",", ":"), allow_nan=False
    ).encode()


def decode_envelope(line):
    """Parse and validate one envelope line; ConfigError when malformed."""
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise ConfigError(f"envelope is not valid JSON: {e}") from e
    if not isinstance(obj, dict):
        raise ConfigError("envelope must be a JSON object")
    extra = set(obj) - {"topic", "seq", "payload"}
    if extra:
        raise ConfigError(f"unknown envelope fields {sorted(extra)}")
    topic = obj.get("topic")
    if not topic_valid(topic):
        raise ConfigError(f"bad topic {topic!r}")
    seq = obj.get("seq")
    if not isinstance(seq, int) or isinstance(seq, bool) or seq < 0:
        raise ConfigError("seq must be a non-negative integer")
    if "payload" not in obj:
        raise ConfigError("envelope needs a payload")
    return obj


def make_envelope(topic, seq, payload):
    if not topic_valid(topic):
        raise ConfigError(f"bad topic {topic!r}")
    return {"topic": topic, "seq": int(seq), "payload": payload}


class Subscriber:
    """One delivery queue plus its filters and loss accounting."""

    def __init__(self, name, filters=(), queue_len=DEFAULT_QUEUE_LEN):
        self.name = name
        self.filters = []
        self.queue = deque()
        self.queue_len = int(queue_len)
        self.delivered = 0
        self.dropped = 0
        self.set_filters(filters)

    def set_filters(self, filters):
        for f in filters:
            if not filter_valid(f):
                raise ConfigError(f"bad topic filter {f!r}")
        self.filters = list(filters)

    def wants(self, topic) -> bool:
        return any(topic_matches(f, topic) for f in self.filters)

    def offer(self, env):
        if len(self.queue) >= self.queue_len:
            self.queue.popleft()
            self.dropped += 1
        self.queue.append(env)
        self.delivered += 1

    def drain(self):
        """Take everything queued, in FIFO order."""
        out = list(self.queue)
        self.queue.clear()
        return out


class Broker:
    """Stamps sequence numbers and fans envelopes out to subscribers."""

    def __init__(self):
        self._seq = 0
        self._subs = []

    def attach(self, name, filters=(), queue_len=DEFAULT_QUEUE_LEN):
        sub = Subscriber(name, filters, queue_len)
        self._subs.append(sub)
        return sub

    def detach(self, sub):
        if sub in self._subs:
            self._subs.remove(sub)

    @property
    def subscribers(self):
        return list(self._subs)

    def publish(self, topic, payload):
        """Route one message; returns the stamped envelope."""
        env = make_envelope(topic, self._seq, payload)
        # canonical encoding also validates payload serializability and
        # rejects non-finite floats before anything is queued
        encode_envelope(env)
        self._seq += 1
        for sub in self._subs:
            if sub.wants(topic):
                sub.offer(env)
        return env
