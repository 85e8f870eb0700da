/**
 * Session state behind the dashboard.
 *
 * Everything rendered is derived from envelopes the server actually
 * sent: snapshots arrive in the hello, then broadcast acks, events and
 * telemetry keep them current. Sending a command never changes a badge;
 * the ack does. Telemetry history is kept per unit over a sliding
 * window so charts can redraw from the store alone.
 *
 * Broadcast envelopes carry the broker's global seq, which makes the
 * backfill handoff simple: buffer live broadcasts while the replay log
 * is applied, then drain the buffer and let the duplicate-seq filter
 * drop the overlap.
 */

import {
  AckPayload,
  BandReport,
  Envelope,
  EventPayload,
  HelloPayload,
  ProtocolError,
  TelemetryPayload,
  UnitParams,
  UnitState,
  encodeEnvelope,
  parseEnvelope,
  parseUnitTopic,
} from "./envelope.js";
import { isUnitState } from "./states.js";
import type { Transport } from "./transport.js";

export type LinkStatus = "connecting" | "backfilling" | "live" | "stale" | "down";

export interface TelemetryFrame {
  t: number;
  alpha: number;
  outputPower: number;
  splErrorDbc: number;
  splMonitorDbc: number[];
  reductionDb: number;
}

export interface UnitView {
  unit: number;
  state: UnitState;
  calibrated: boolean;
  faultReason: string;
  params: UnitParams;
  converged: boolean;
  series: TelemetryFrame[];
  bands: BandReport | null;
  lastT: number;
}

export type PendingStatus = "sent" | "ok" | "rejected" | "timeout" | "lost";

export interface PendingCommand {
  seq: number;
  unit: number;
  label: string;
  payload: Record<string, unknown>;
  sentAtMs: number;
  status: PendingStatus;
  reason?: string;
  roundtripMs?: number;
}

export interface LogEntry {
  atMs: number;
  text: string;
  cls: "info" | "ok" | "err";
}

export interface StoreOptions {
  now?: () => number;
  windowS?: number;
  staleAfterMs?: number;
  /**
   * Ack deadline override in wall ms. The default is two telemetry
   * periods, which assumes the stream runs at its nominal real-time
   * rate; accelerated replay sessions pass something looser because
   * each server tick then carries many periods of work.
   */
  ackTimeoutMs?: number;
  /** Returns the raw NDJSON replay log; omit to skip backfill. */
  fetchLog?: () => Promise<string>;
  onChange?: () => void;
}

const EVENT_LOG_CAP = 200;
const COMMAND_LOG_CAP = 50;
const DEFAULT_ACK_TIMEOUT_MS = 200;

export class SessionStore {
  status: LinkStatus = "connecting";
  retryInMs = -1;
  hello: HelloPayload | null = null;
  units = new Map<number, UnitView>();
  events: LogEntry[] = [];
  commands: PendingCommand[] = [];
  backfillNote = "";

  private transport: Transport | null = null;
  private readonly now: () => number;
  private readonly windowS: number;
  private readonly staleAfterMs: number;
  private readonly ackTimeoutOverrideMs?: number;
  private readonly fetchLog?: () => Promise<string>;
  private readonly onChange?: () => void;

  // distinct seq range per page load so broadcast acks raised for some
  // other client's commands cannot match one of ours by accident
  private nextSeq = (1 + Math.floor(Math.random() * 0xffff)) * 100_000;
  private active = new Map<number, PendingCommand>();
  private lastBroadcastSeq = -1;
  private lastRxMs = 0;
  private buffering = false;
  private buffer: Envelope[] = [];
  private backfillRun = 0;

  constructor(opts: StoreOptions = {}) {
    this.now = opts.now ?? (() => Date.now());
    this.windowS = opts.windowS ?? 60;
    this.staleAfterMs = opts.staleAfterMs ?? 3000;
    this.ackTimeoutOverrideMs = opts.ackTimeoutMs;
    this.fetchLog = opts.fetchLog;
    this.onChange = opts.onChange;
  }

  attach(transport: Transport): void {
    this.transport = transport;
  }

  get ackTimeoutMs(): number {
    if (this.ackTimeoutOverrideMs !== undefined) return this.ackTimeoutOverrideMs;
    const cadence = this.hello?.cadence_hz;
    if (!cadence || cadence <= 0) return DEFAULT_ACK_TIMEOUT_MS;
    return Math.max(DEFAULT_ACK_TIMEOUT_MS, 2000 / cadence);
  }

  // -- transport callbacks -------------------------------------------

  handleOpen(): void {
    this.lastRxMs = this.now();
    this.retryInMs = -1;
    this.status = this.fetchLog ? "backfilling" : "live";
    if (this.fetchLog) this.startBackfill();
    this.changed();
  }

  handleDown(retryInMs: number): void {
    this.status = "down";
    this.retryInMs = retryInMs;
    this.buffering = false;
    this.buffer = [];
    for (const p of this.active.values()) {
      p.status = "lost";
      p.reason = "connection lost before the ack arrived";
    }
    this.active.clear();
    this.changed();
  }

  handleMessage(text: string): void {
    this.lastRxMs = this.now();
    if (this.status === "stale") this.status = "live";
    let env: Envelope;
    try {
      env = parseEnvelope(text);
    } catch (err) {
      const reason = err instanceof ProtocolError ? err.message : String(err);
      this.log(`unreadable server envelope: ${reason}`, "err");
      this.changed();
      return;
    }
    if (parseUnitTopic(env.topic)) {
      if (this.buffering) this.buffer.push(env);
      else this.applyBroadcast(env);
    } else {
      this.applyDirect(env);
    }
    this.changed();
  }

  /** Sweep timeouts and staleness; called on a short interval. */
  tick(): void {
    const now = this.now();
    let dirty = false;
    for (const [seq, p] of this.active) {
      if (now - p.sentAtMs > this.ackTimeoutMs) {
        p.status = "timeout";
        p.reason = `no ack within ${Math.round(this.ackTimeoutMs)} ms`;
        this.active.delete(seq);
        this.log(`${p.label}: timed out, resend available`, "err");
        dirty = true;
      }
    }
    if (
      (this.status === "live" || this.status === "backfilling") &&
      now - this.lastRxMs > this.staleAfterMs
    ) {
      this.status = "stale";
      dirty = true;
    }
    if (dirty) this.changed();
  }

  // -- commands ------------------------------------------------------

  command(unit: number, payload: Record<string, unknown>, label: string): PendingCommand {
    const seq = this.nextSeq++;
    const pending: PendingCommand = {
      seq,
      unit,
      label,
      payload,
      sentAtMs: this.now(),
      status: "sent",
    };
    const env: Envelope = { topic: `unit/${unit}/cmd`, seq, payload };
    const sent = this.transport?.send(encodeEnvelope(env)) ?? false;
    if (!sent) {
      pending.status = "lost";
      pending.reason = "not connected";
    } else {
      this.active.set(seq, pending);
    }
    this.commands.push(pending);
    if (this.commands.length > COMMAND_LOG_CAP) {
      this.commands.splice(0, this.commands.length - COMMAND_LOG_CAP);
    }
    this.changed();
    return pending;
  }

  calibrate(unit: number): PendingCommand {
    return this.command(unit, { cmd: "calibrate" }, `unit ${unit}: calibrate`);
  }

  setMode(unit: number, mode: "feedforward" | "feedback" | "idle"): PendingCommand {
    return this.command(unit, { cmd: "set_mode", mode }, `unit ${unit}: mode ${mode}`);
  }

  setParams(unit: number, params: Record<string, unknown>): PendingCommand {
    const shown = Object.entries(params)
      .map(([k, v]) => `${k}=${v === null ? "off" : v}`)
      .join(", ");
    return this.command(unit, { cmd: "set_param", params }, `unit ${unit}: ${shown}`);
  }

  reset(unit: number): PendingCommand {
    return this.command(unit, { cmd: "reset" }, `unit ${unit}: reset`);
  }

  resend(p: PendingCommand): PendingCommand {
    return this.command(p.unit, p.payload, p.label);
  }

  // -- envelope application ------------------------------------------

  private applyDirect(env: Envelope): void {
    if (env.topic === "broker/hello") {
      const err = env.payload["error"];
      if (typeof err === "string") {
        this.log(`server rejected input: ${err}`, "err");
        return;
      }
      this.applyHello(env.payload as unknown as HelloPayload);
      return;
    }
    if (env.topic === "broker/subscribe") return;
    this.log(`unexpected direct topic ${env.topic}`, "err");
  }

  private applyHello(hello: HelloPayload): void {
    this.hello = hello;
    // a fresh connection restarts broker numbering as far as we care;
    // the backfill replay re-establishes the high-water mark
    this.lastBroadcastSeq = -1;
    for (const snap of hello.units ?? []) {
      const view = this.unitView(snap.unit);
      this.applySnapshot(view, snap as unknown as Record<string, unknown>);
    }
    this.log(
      `connected to ${hello.scenario} (${hello.sample_rate} Hz, ` +
        `${hello.units?.length ?? 0} units, speed ${hello.speed}x)`,
      "info",
    );
  }

  private applyBroadcast(env: Envelope): void {
    if (env.seq <= this.lastBroadcastSeq) return;
    this.lastBroadcastSeq = env.seq;
    const at = parseUnitTopic(env.topic);
    if (!at) return;
    if (at.kind === "telemetry") {
      this.applyTelemetry(at.unit, env.payload as unknown as TelemetryPayload);
    } else if (at.kind === "ack") {
      this.applyAck(at.unit, env.payload as unknown as AckPayload);
    } else if (at.kind === "event") {
      this.applyEvent(at.unit, env.payload as unknown as EventPayload);
    }
  }

  private unitView(unit: number): UnitView {
    let view = this.units.get(unit);
    if (!view) {
      view = {
        unit,
        state: "idle",
        calibrated: false,
        faultReason: "",
        params: {},
        converged: false,
        series: [],
        bands: null,
        lastT: -1,
      };
      this.units.set(unit, view);
    }
    return view;
  }

  private applySnapshot(view: UnitView, p: Record<string, unknown>): void {
    if (isUnitState(p["state"])) view.state = p["state"];
    if (typeof p["calibrated"] === "boolean") view.calibrated = p["calibrated"];
    if (typeof p["fault_reason"] === "string") view.faultReason = p["fault_reason"];
    if (typeof p["params"] === "object" && p["params"] !== null) {
      view.params = { ...(p["params"] as UnitParams) };
    }
  }

  private applyTelemetry(unit: number, p: TelemetryPayload): void {
    const view = this.unitView(unit);
    this.applySnapshot(view, p as unknown as Record<string, unknown>);
    view.converged = p.converged === true;
    if (p.bands) view.bands = p.bands;
    if (typeof p.t === "number" && p.t > view.lastT) {
      view.lastT = p.t;
      view.series.push({
        t: p.t,
        alpha: p.alpha,
        outputPower: p.output_power,
        splErrorDbc: p.spl_error_dbc,
        splMonitorDbc: p.spl_monitor_dbc ?? [],
        reductionDb: p.reduction_db,
      });
      const cutoff = view.lastT - this.windowS - 2;
      if (view.series.length > 4 && view.series[0].t < cutoff) {
        let drop = 0;
        while (drop < view.series.length && view.series[drop].t < cutoff) drop++;
        view.series.splice(0, drop);
      }
    }
  }

  private applyAck(unit: number, p: AckPayload): void {
    const view = this.unitView(typeof p.unit === "number" ? p.unit : unit);
    this.applySnapshot(view, p as unknown as Record<string, unknown>);
    const re = p.re;
    if (typeof re !== "number") return;
    const pending = this.active.get(re);
    if (!pending) return;
    this.active.delete(re);
    pending.roundtripMs = this.now() - pending.sentAtMs;
    if (p.ok) {
      pending.status = "ok";
      this.log(`${pending.label}: ok`, "ok");
    } else {
      pending.status = "rejected";
      pending.reason = typeof p.reason === "string" ? p.reason : "rejected";
      this.log(`${pending.label}: ${pending.reason}`, "err");
    }
  }

  private applyEvent(unit: number, p: EventPayload): void {
    const view = this.unitView(unit);
    if (p.event === "state") {
      const to = p["to"];
      if (isUnitState(to)) view.state = to;
      this.log(`unit ${unit}: ${p["from"]} -> ${p["to"]}`, "info");
    } else if (p.event === "calibrated") {
      view.calibrated = true;
      const mis = p["misalignment_db"];
      this.log(
        `unit ${unit}: calibrated, path misalignment ${mis} dB`,
        "ok",
      );
    } else if (p.event === "fault") {
      this.log(`unit ${unit}: FAULT ${p["reason"]}`, "err");
    }
  }

  // -- backfill ------------------------------------------------------

  private startBackfill(): void {
    if (!this.fetchLog) return;
    const run = ++this.backfillRun;
    this.buffering = true;
    this.buffer = [];
    this.fetchLog().then(
      (text) => {
        if (run !== this.backfillRun) return;
        this.finishBackfill(text);
      },
      (err) => {
        if (run !== this.backfillRun) return;
        this.backfillNote = `no history backfill: ${err instanceof Error ? err.message : err}`;
        this.drainBuffer();
        this.changed();
      },
    );
  }

  private finishBackfill(text: string): void {
    let applied = 0;
    let skipped = 0;
    for (const line of text.split("\n")) {
      if (!line.trim()) continue;
      let env: Envelope;
      try {
        env = parseEnvelope(line);
      } catch {
        skipped++;
        continue;
      }
      if (parseUnitTopic(env.topic)) {
        this.applyBroadcast(env);
        applied++;
      }
    }
    this.backfillNote = skipped
      ? `backfilled ${applied} envelopes (${skipped} corrupt lines skipped)`
      : `backfilled ${applied} envelopes`;
    this.drainBuffer();
    this.changed();
  }

  private drainBuffer(): void {
    this.buffering = false;
    const queued = this.buffer;
    this.buffer = [];
    for (const env of queued) this.applyBroadcast(env);
    if (this.status === "backfilling") this.status = "live";
  }

  // -- misc ----------------------------------------------------------

  private log(text: string, cls: LogEntry["cls"]): void {
    this.events.push({ atMs: this.now(), text, cls });
    if (this.events.length > EVENT_LOG_CAP) {
      this.events.splice(0, this.events.length - EVENT_LOG_CAP);
    }
  }

  private changed(): void {
    this.onChange?.();
  }
}
