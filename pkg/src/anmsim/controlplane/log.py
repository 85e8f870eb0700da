"""NDJSON telemetry log: append-only writer and tolerant replay."""

import os

from .broker import decode_envelope, encode_envelope

from ..errors import ConfigError


class NdjsonLogWriter:
    """Writes one canonical envelope per line, flushed eagerly.

    Telemetry rates are tens of lines per second, so per-line flushing
    is cheap and keeps the file usable while the run is live.
    """

    def __init__(self, path):
        self.path = str(path)
        self._f = open(self.path, "wb")
        self.lines = 0

    def write(self, env):
        self._f.write(encode_envelope(env) + b"\n")
        self._f.flush()
        self.lines += 1

    def close(self):
        if self._f is not None:
            self._f.close()
            self._f = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def replay_log(path):
    """Read a log back; corrupt lines are skipped, not fatal.

    Returns (envelopes, skipped). Re-encoding each envelope with
    encode_envelope reproduces the original line bytes exactly.
    """
    if not os.path.exists(str(path)):
        raise ConfigError(f"no log file {path}")
    envelopes = []
    skipped = 0
    with open(str(path), "rb") as f:
        for raw in f:
            line = raw.strip()
            if not line:
                continue
            try:
                envelopes.append(decode_envelope(line))
            except ConfigError:
                skipped += 1
    return envelopes, skipped
