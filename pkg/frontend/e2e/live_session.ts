/**
 * Scripted operator session against a real simulation server.
 *
 * Drives the same store and transport the browser page uses, over a
 * real WebSocket, and checks the headline workflow end to end:
 * calibrate both units, run feedback, then lower rho and watch the
 * penalty factor rise while output power settles under the new rho^2.
 * Along the way it asserts the UI discipline the store promises: badge
 * state moves only when an ack or broadcast says so, never on send.
 *
 * Run with: npm run e2e
 */

import assert from "node:assert/strict";
import { spawn } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import net from "node:net";
import os from "node:os";
import path from "node:path";
import { fileURLToPath } from "node:url";
import WebSocket from "ws";

import { SessionStore, PendingCommand, UnitView } from "../src/store.js";
import { WsTransport } from "../src/transport.js";
import { controlEnabled } from "../src/states.js";

const SPEED = 25;
const STEP_TIMEOUT_MS = 60_000;
// compiled location is frontend/dist/e2e/, so two levels up is frontend/
const FRONTEND_DIR = path.resolve(path.dirname(fileURLToPath(import.meta.url)), "..", "..");

function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const srv = net.createServer();
    srv.listen(0, "127.0.0.1", () => {
      const addr = srv.address();
      if (addr && typeof addr === "object") {
        const port = addr.port;
        srv.close(() => resolve(port));
      } else {
        srv.close(() => reject(new Error("no port")));
      }
    });
  });
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

async function waitFor(cond: () => boolean, what: string, timeoutMs = STEP_TIMEOUT_MS) {
  const t0 = Date.now();
  while (Date.now() - t0 < timeoutMs) {
    if (cond()) return;
    await sleep(25);
  }
  throw new Error(`timeout waiting for ${what}`);
}

function pass(line: string): void {
  console.log(`[e2e] PASS ${line}`);
}

interface Session {
  store: SessionStore;
  transport: WsTransport;
}

function openSession(httpPort: number, backfill: boolean): Session {
  const base = `http://127.0.0.1:${httpPort}`;
  const store = new SessionStore({
    // The default deadline of two telemetry periods assumes real-time
    // playback; this session replays at SPEED x, where one server tick
    // carries SPEED/10 seconds of simulated audio, so acks can lag the
    // wall clock without anything being wrong.
    ackTimeoutMs: 2000,
    fetchLog: backfill
      ? async () => {
          const resp = await fetch(`${base}/log`);
          if (!resp.ok) throw new Error(`GET /log: ${resp.status}`);
          return resp.text();
        }
      : undefined,
  });
  const transport = new WsTransport(`ws://127.0.0.1:${httpPort}/ws`, {
    onOpen: () => store.handleOpen(),
    onMessage: (text) => store.handleMessage(text),
    onDown: (retry) => store.handleDown(retry),
  }, { socketCtor: WebSocket as unknown as new (url: string) => never });
  store.attach(transport);
  return { store, transport };
}

function unit(store: SessionStore, u: number): UnitView {
  const view = store.units.get(u);
  assert.ok(view, `unit ${u} known`);
  return view;
}

/** Send a command and prove the badge waits for the ack to move. */
async function ackGated(
  store: SessionStore,
  u: number,
  fire: () => PendingCommand,
  expectState?: string,
): Promise<PendingCommand> {
  const before = unit(store, u).state;
  const pending = fire();
  assert.equal(
    unit(store, u).state,
    before,
    `state must not move on send (${pending.label})`,
  );
  await waitFor(() => pending.status !== "sent", `ack for ${pending.label}`);
  assert.equal(pending.status, "ok", `${pending.label}: ${pending.reason ?? ""}`);
  if (expectState) {
    assert.equal(unit(store, u).state, expectState, `state after ${pending.label}`);
  }
  return pending;
}

function tail<T>(xs: T[], n: number): T[] {
  return xs.slice(Math.max(0, xs.length - n));
}

function mean(xs: number[]): number {
  return xs.reduce((a, b) => a + b, 0) / Math.max(xs.length, 1);
}

async function main(): Promise<void> {
  const tcpPort = await freePort();
  const httpPort = await freePort();
  const outDir = mkdtempSync(path.join(os.tmpdir(), "anmsim-e2e-"));
  const server = spawn(
    "python3",
    [
      "-m", "anmsim", "serve", "genset_serve",
      "--tcp", String(tcpPort),
      "--http", String(httpPort),
      "--speed", String(SPEED),
      "--out", outDir,
      "--static", FRONTEND_DIR,
    ],
    { stdio: ["ignore", "pipe", "pipe"] },
  );
  let serverLog = "";
  server.stdout?.on("data", (d) => (serverLog += d));
  server.stderr?.on("data", (d) => (serverLog += d));
  const serverExit = new Promise<number | null>((resolve) => {
    server.on("exit", (code) => resolve(code));
  });

  const tickers: ReturnType<typeof setInterval>[] = [];
  try {
    // the page itself must be served by serve mode
    const bootDeadline = Date.now() + 30_000;
    for (;;) {
      if (server.exitCode !== null) {
        throw new Error(`server died early (${server.exitCode})\n${serverLog}`);
      }
      try {
        const hz = await fetch(`http://127.0.0.1:${httpPort}/healthz`);
        if (hz.ok) break;
      } catch {
        // not accepting yet
      }
      if (Date.now() > bootDeadline) throw new Error(`server never came up\n${serverLog}`);
      await sleep(100);
    }
    const page = await fetch(`http://127.0.0.1:${httpPort}/`);
    assert.equal(page.status, 200);
    assert.match(await page.text(), /anmsim console/);
    const bundle = await fetch(`http://127.0.0.1:${httpPort}/dist/src/main.js`);
    assert.equal(bundle.status, 200);
    assert.match(await bundle.text(), /WsTransport/);
    pass("static bundle served at / and /dist/");

    const a = openSession(httpPort, false);
    tickers.push(setInterval(() => a.store.tick(), 50));
    await waitFor(
      () => a.store.status === "live" && a.store.hello !== null && a.store.units.size === 2,
      "hello with two units",
    );
    assert.equal(a.store.hello!.scenario, "genset_serve");
    for (const u of [0, 1]) {
      assert.equal(unit(a.store, u).state, "idle");
      assert.equal(unit(a.store, u).calibrated, false);
    }
    pass("connected live, both units idle and uncalibrated");

    // guard mirrors the server: running feedback before calibration is
    // refused, and the inline reason lands on the pending command
    assert.equal(controlEnabled("run_fb", "idle", false), false);
    const early = a.store.setMode(0, "feedback");
    await waitFor(() => early.status !== "sent", "early set_mode ack");
    assert.equal(early.status, "rejected");
    assert.match(early.reason ?? "", /not calibrated/);
    assert.equal(unit(a.store, 0).state, "idle");
    pass(`uncalibrated run refused inline (${early.reason})`);

    for (const u of [0, 1]) {
      await ackGated(a.store, u, () => a.store.calibrate(u), "calibrating");
    }
    await waitFor(
      () => [0, 1].every((u) => unit(a.store, u).calibrated && unit(a.store, u).state === "idle"),
      "calibration to finish on both units",
    );
    pass("calibrate -> calibrating badge on ack -> calibrated event lands");

    for (const u of [0, 1]) {
      await ackGated(a.store, u, () => a.store.setMode(u, "feedback"), "running_fb");
    }
    pass("feedback running on both units, badges moved on acks only");

    await waitFor(() => {
      const v = unit(a.store, 0);
      const last = v.series[v.series.length - 1];
      return v.series.length > 30 && last !== undefined && last.reductionDb > 8.0;
    }, "feedback convergence past 8 dB");
    const settled = tail(unit(a.store, 0).series, 10);
    const p0 = mean(settled.map((f) => f.outputPower));
    const alpha0 = mean(settled.map((f) => f.alpha));
    assert.ok(p0 > 0, "controller is actually driving");
    pass(
      `converged: ${settled[settled.length - 1].reductionDb.toFixed(1)} dB, ` +
        `E[y^2]=${p0.toFixed(3)}, alpha=${alpha0.toFixed(4)}`,
    );

    // drop rho below the current drive level; the constraint must bite
    const rhoNew = Math.sqrt(p0 / 2);
    const tCut = unit(a.store, 0).lastT;
    await ackGated(a.store, 0, () => a.store.setParams(0, { rho: rhoNew }));
    assert.equal(unit(a.store, 0).params.rho, rhoNew, "params come from the ack");
    await waitFor(() => {
      const recent = tail(unit(a.store, 0).series, 20);
      const last = recent[recent.length - 1];
      if (!last || last.t < tCut + 8) return false;
      return mean(recent.map((f) => f.alpha)) > 0 &&
        mean(recent.map((f) => f.outputPower)) <= rhoNew * rhoNew * 1.15;
    }, "alpha to rise and output power to settle under the new rho^2");
    const after = tail(unit(a.store, 0).series, 20);
    const alpha1 = mean(after.map((f) => f.alpha));
    const p1 = mean(after.map((f) => f.outputPower));
    assert.ok(alpha1 > alpha0, "penalty factor rose from its unconstrained level");
    pass(
      `rho ${rhoNew.toFixed(3)}: alpha ${alpha0.toFixed(4)} -> ${alpha1.toFixed(4)}, ` +
        `E[y^2] ${p0.toFixed(3)} -> ${p1.toFixed(3)} (rho^2=${(rhoNew * rhoNew).toFixed(3)})`,
    );

    // the calibrate button would be disabled now; the server agrees
    assert.equal(controlEnabled("calibrate", unit(a.store, 0).state, true), false);
    const blocked = a.store.calibrate(0);
    await waitFor(() => blocked.status !== "sent", "blocked calibrate ack");
    assert.equal(blocked.status, "rejected");
    assert.equal(unit(a.store, 0).state, "running_fb");
    pass(`mid-run calibrate refused (${blocked.reason}), badge untouched`);

    // a second console joining mid-run backfills history from /log and
    // must agree with what the first console saw live
    const b = openSession(httpPort, true);
    tickers.push(setInterval(() => b.store.tick(), 50));
    await waitFor(
      () => b.store.status === "live" && unit(b.store, 0).series.length > 50,
      "second console live after backfill",
    );
    assert.match(b.store.backfillNote, /backfilled \d+ envelopes/);
    assert.equal(unit(b.store, 0).state, "running_fb", "replayed state agrees");
    const byT = new Map(unit(a.store, 0).series.map((f) => [f.t, f]));
    let common = 0;
    for (const f of unit(b.store, 0).series) {
      const live = byT.get(f.t);
      if (!live) continue;
      assert.equal(f.alpha, live.alpha, `alpha at t=${f.t}`);
      assert.equal(f.outputPower, live.outputPower, `output power at t=${f.t}`);
      assert.equal(f.splErrorDbc, live.splErrorDbc, `spl at t=${f.t}`);
      common++;
    }
    assert.ok(common >= 50, `only ${common} overlapping frames`);
    pass(`mid-run backfill matches the live record on ${common} frames`);
    b.transport.close();

    server.kill("SIGTERM");
    const code = await serverExit;
    assert.equal(code, 0, `server exit ${code}\n${serverLog}`);
    await waitFor(() => a.store.status === "down", "banner after server death", 5_000);
    pass("server shutdown: clean exit and the console shows disconnected");

    a.transport.close();
  } finally {
    for (const t of tickers) clearInterval(t);
    if (server.exitCode === null) server.kill("SIGKILL");
    rmSync(outDir, { recursive: true, force: true });
  }
  console.log("[e2e] all checks passed");
}

main().catch((err) => {
  console.error("[e2e] FAIL", err);
  process.exit(1);
});
