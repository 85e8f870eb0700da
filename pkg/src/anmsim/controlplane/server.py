"""Network front end: one simulation thread, envelope streams in and out.

The simulation runs in its own thread, paced against the wall clock by
a speed factor, exchanging work with the async side through two bounded
queues: commands in, published envelopes out. Every transport speaks
the same NDJSON envelope protocol:

    TCP  <tcp_port>   one envelope per line
    WS   /ws          one envelope per text frame
    GET  /log         the NDJSON telemetry log so far
    GET  /healthz     liveness probe with basic counters

On connect a client receives a broker/hello envelope describing the
scenario, and is subscribed to everything until it sends
broker/subscribe with its own filter list. Commands are acknowledged
exactly once on unit/<id>/ack; the ack carries the command envelope's
seq as "re" so a client can tell its own acks from other operators'.
At speed 0 the simulation is frozen but command handling and telemetry
(with a frozen clock) continue.

Connection-scoped envelopes (hello, subscribe replies, protocol error
notices on broker/hello) carry a per-connection sequence; everything
routed through the broker carries the broker's global sequence.
"""

import asyncio
import errno
import json
import os
import queue
import signal
import socket
import threading
import time

from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.responses import FileResponse, JSONResponse
from fastapi.staticfiles import StaticFiles
import uvicorn

from ..errors import ConfigError
from ..runner import SimEngine
from .broker import Broker, decode_envelope, encode_envelope, make_envelope
from .log import NdjsonLogWriter

WALL_TICK_S = 0.1
CMD_QUEUE_LEN = 256
OUT_QUEUE_LEN = 4096

EXIT_PORT_BUSY = 4


def _port_free(host, port):
    s = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    try:
        s.bind((host, port))
    except OSError as e:
        if e.errno in (errno.EADDRINUSE, errno.EACCES):
            return False
        raise
    finally:
        s.close()
    return True


class _Conn:
    """Per-connection protocol state shared by TCP and WS handlers."""

    def __init__(self, server, name):
        self.server = server
        self.sub = server.broker.attach(name, filters=("#",))
        self.wake = asyncio.Event()
        self.direct_seq = 0
        self.last_in_seq = -1
        self.protocol_errors = 0

    def direct(self, topic, payload):
        env = make_envelope(topic, self.direct_seq, payload)
        self.direct_seq += 1
        return env

    def close(self):
        self.server.broker.detach(self.sub)

    def handle_line(self, raw):
        """Process one inbound envelope; returns direct replies."""
        try:
            env = decode_envelope(raw)
        except ConfigError as e:
            self.protocol_errors += 1
            return [self.direct("broker/hello", {"error": str(e)})]
        if env["seq"] <= self.last_in_seq:
            self.protocol_errors += 1
            return [self.direct("broker/hello", {
                "error": f"seq {env['seq']} not above {self.last_in_seq}"})]
        self.last_in_seq = env["seq"]
        topic = env["topic"]
        if topic == "broker/subscribe":
            filters = (env["payload"] or {}).get("filters")
            if not isinstance(filters, list):
                return [self.direct("broker/subscribe",
                                    {"ok": False,
                                     "error": "filters must be a list"})]
            try:
                self.sub.set_filters(filters)
            except ConfigError as e:
                return [self.direct("broker/subscribe",
                                    {"ok": False, "error": str(e)})]
            return [self.direct("broker/subscribe",
                                {"ok": True, "filters": filters})]
        parts = topic.split("/")
        if len(parts) == 3 and parts[0] == "unit" and parts[2] == "cmd":
            try:
                unit = int(parts[1])
            except ValueError:
                unit = -1
            if not self.server.submit_command(unit, env["payload"],
                                              env["seq"]):
                return [self.direct(f"unit/{max(unit, 0)}/ack",
                                    {"ok": False, "re": env["seq"],
                                     "reason": "command queue full"})]
            return []
        self.protocol_errors += 1
        return [self.direct("broker/hello",
                            {"error": f"cannot publish to {topic}"})]


class SimServer:
    """Owns the engine thread, the broker, and both network servers."""

    def __init__(self, config, host="127.0.0.1", tcp_port=7788,
                 http_port=8080, speed=1.0, out_dir=None, static_dir=None):
        self.config = config
        self.host = host
        self.tcp_port = int(tcp_port)
        self.http_port = int(http_port)
        self.speed = float(speed)
        if self.speed < 0:
            raise ConfigError("speed must be >= 0")
        self.static_dir = static_dir
        self.engine = SimEngine(config)
        self.broker = Broker()
        self._cmd_q = queue.Queue(maxsize=CMD_QUEUE_LEN)
        self._out_q = None
        self._out_dropped = 0
        self._stop = threading.Event()
        self._loop = None
        self._thread = None
        self._n_total = int(round(config.duration_s * config.sample_rate))
        out_dir = out_dir or "."
        os.makedirs(out_dir, exist_ok=True)
        self.log_path = os.path.join(out_dir, "telemetry.ndjson")
        self._log = NdjsonLogWriter(self.log_path)
        self._log_sub = self.broker.attach("log", filters=("#",),
                                           queue_len=1 << 20)
        self._conns = set()

    # -- sim thread ---------------------------------------------------

    def submit_command(self, unit, payload, re=None):
        """Queue a command; re is the sender's envelope seq, echoed in
        the ack so clients can match broadcast acks to their commands."""
        try:
            self._cmd_q.put_nowait((unit, payload, re))
            return True
        except queue.Full:
            return False

    def _post(self, item):
        loop = self._loop
        if loop is None or self._stop.is_set():
            return

        def put():
            try:
                self._out_q.put_nowait(item)
            except asyncio.QueueFull:
                self._out_dropped += 1

        try:
            loop.call_soon_threadsafe(put)
        except RuntimeError:
            pass

    def _sim_loop(self):
        eng = self.engine
        carry = 0.0
        next_tick = time.monotonic()
        while not self._stop.is_set():
            now = time.monotonic()
            if now < next_tick:
                time.sleep(min(next_tick - now, 0.02))
                continue
            next_tick += WALL_TICK_S
            while True:
                try:
                    unit, payload, re = self._cmd_q.get_nowait()
                except queue.Empty:
                    break
                reply = eng.apply_command(unit, payload)
                if re is not None:
                    reply["re"] = re
                topic = f"unit/{unit}/ack" if (
                    isinstance(unit, int) and 0 <= unit < eng.n_units
                ) else "unit/0/ack"
                self._post((topic, reply))
                for t, p in eng.advance(0):
                    self._post((t, p))
            done = eng.sample_index >= self._n_total
            if self.speed > 0 and not done:
                carry += WALL_TICK_S * self.speed * eng.fs
                hops = int(carry // eng.hop)
                carry -= hops * eng.hop
                for _ in range(hops):
                    for t, p in eng.advance():
                        self._post((t, p))
                    if eng.sample_index >= self._n_total:
                        break
            else:
                for t, p in eng.telemetry_snapshot():
                    self._post((t, p))

    # -- async side ---------------------------------------------------

    async def _pump(self):
        while True:
            topic, payload = await self._out_q.get()
            try:
                self.broker.publish(topic, payload)
            except (ConfigError, ValueError):
                # a payload the canonical encoding rejects is a bug in
                # the producer; drop it rather than kill the stream
                self._out_dropped += 1
                continue
            for env in self._log_sub.drain():
                self._log.write(env)
            for conn in self._conns:
                if conn.sub.queue:
                    conn.wake.set()

    def _hello(self, conn):
        t = self.config.telemetry
        return conn.direct("broker/hello", {
            "scenario": self.config.name,
            "sample_rate": self.config.sample_rate,
            "units": [m.snapshot() for m in self.engine.machines],
            "monitors": self.engine.n_mics - self.engine.n_units,
            "cadence_hz": t.cadence_hz,
            "speed": self.speed,
        })

    async def _tcp_conn(self, reader, writer):
        conn = _Conn(self, f"tcp:{writer.get_extra_info('peername')}")
        self._conns.add(conn)

        async def send(env):
            writer.write(encode_envelope(env) + b"\n")
            await writer.drain()

        sender = None
        try:
            await send(self._hello(conn))

            async def sender_task():
                while True:
                    await conn.wake.wait()
                    conn.wake.clear()
                    for env in conn.sub.drain():
                        await send(env)

            sender = asyncio.ensure_future(sender_task())
            while True:
                line = await reader.readline()
                if not line:
                    break
                line = line.strip()
                if not line:
                    continue
                for env in conn.handle_line(line):
                    await send(env)
        except (ConnectionError, asyncio.IncompleteReadError):
            pass
        finally:
            if sender is not None:
                sender.cancel()
            self._conns.discard(conn)
            conn.close()
            writer.close()

    def _build_app(self):
        app = FastAPI()
        server = self

        @app.get("/healthz")
        def healthz():
            return {
                "scenario": server.config.name,
                "sim_time_s": round(server.engine.sim_time, 3),
                "speed": server.speed,
                "telemetry_frames": server.engine.telemetry_frames,
                "dropped": server._out_dropped,
                "log_lines": server._log.lines,
            }

        @app.get("/log")
        def get_log():
            return FileResponse(server.log_path,
                                media_type="application/x-ndjson",
                                filename="telemetry.ndjson")

        @app.websocket("/ws")
        async def ws(sock: WebSocket):
            await sock.accept()
            conn = _Conn(server, "ws")
            server._conns.add(conn)

            async def sender_task():
                while True:
                    await conn.wake.wait()
                    conn.wake.clear()
                    for env in conn.sub.drain():
                        await sock.send_text(
                            encode_envelope(env).decode())

            sender = asyncio.ensure_future(sender_task())
            try:
                await sock.send_text(
                    encode_envelope(self._hello(conn)).decode())
                while True:
                    raw = await sock.receive_text()
                    for env in conn.handle_line(raw.encode()):
                        await sock.send_text(encode_envelope(env).decode())
            except WebSocketDisconnect:
                pass
            finally:
                sender.cancel()
                server._conns.discard(conn)
                conn.close()

        if self.static_dir:
            app.mount("/", StaticFiles(directory=self.static_dir,
                                       html=True), name="static")
        else:
            @app.get("/")
            def index():
                return JSONResponse({
                    "service": "anmsim",
                    "scenario": server.config.name,
                    "endpoints": ["/ws", "/log", "/healthz"],
                })
        return app

    async def _main(self, ready=None):
        self._loop = asyncio.get_running_loop()
        self._out_q = asyncio.Queue(maxsize=OUT_QUEUE_LEN)
        pump = asyncio.ensure_future(self._pump())
        tcp = await asyncio.start_server(self._tcp_conn, self.host,
                                         self.tcp_port)
        uv_config = uvicorn.Config(self._build_app(), host=self.host,
                                   port=self.http_port, log_level="warning",
                                   lifespan="off")
        uv = uvicorn.Server(uv_config)
        uv_task = asyncio.ensure_future(uv.serve())

        stop_evt = asyncio.Event()

        def request_stop(*_a):
            stop_evt.set()

        for sig in (signal.SIGTERM, signal.SIGINT):
            try:
                self._loop.add_signal_handler(sig, request_stop)
            except NotImplementedError:
                pass

        self._thread = threading.Thread(target=self._sim_loop,
                                        name="sim", daemon=True)
        self._thread.start()
        if ready is not None:
            ready.set()
        try:
            await stop_evt.wait()
        finally:
            self._stop.set()
            self._thread.join(timeout=5.0)
            uv.should_exit = True
            await uv_task
            tcp.close()
            await tcp.wait_closed()
            pump.cancel()
            self._log.close()

    def busy_port(self):
        """First requested port that is already taken, or None."""
        for port in (self.tcp_port, self.http_port):
            if not _port_free(self.host, port):
                return port
        return None

    def run(self):
        """Serve until SIGTERM/SIGINT; exit code 4 when a port is taken."""
        port = self.busy_port()
        if port is not None:
            print(f"port {port} is already in use")
            return EXIT_PORT_BUSY
        asyncio.run(self._main())
        return 0
