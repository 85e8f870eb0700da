/**
 * Wire format shared with the simulation server.
 *
 * Every message in either direction is one JSON object per line (TCP)
 * or per WebSocket text frame:
 *
 *     {"topic": "unit/0/cmd", "seq": 12, "payload": {...}}
 *
 * seq is strictly increasing within its stream: per connection for
 * what we send and for direct replies, global broker order for
 * broadcast topics (unit/#). Acks echo the sender's seq as "re".
 */

export interface Envelope {
  topic: string;
  seq: number;
  payload: Record<string, unknown>;
}

export type UnitState =
  | "idle"
  | "calibrating"
  | "running_ff"
  | "running_fb"
  | "fault";

export interface UnitParams {
  mu?: number;
  rho?: number | null;
  filter_len?: number;
  frame_len?: number;
  [key: string]: unknown;
}

export interface UnitSnapshot {
  unit: number;
  state: UnitState;
  calibrated: boolean;
  fault_reason: string;
  params: UnitParams;
}

export interface HelloPayload {
  scenario: string;
  sample_rate: number;
  units: UnitSnapshot[];
  monitors: number;
  cadence_hz: number;
  speed: number;
}

export interface AckPayload extends Partial<UnitSnapshot> {
  ok: boolean;
  re?: number;
  reason?: string;
}

export interface BandReport {
  centers_hz: number[];
  reduction_db: (number | null)[];
}

export interface TelemetryPayload {
  t: number;
  unit: number;
  state: UnitState;
  calibrated: boolean;
  alpha: number;
  output_power: number;
  spl_error_dbc: number;
  spl_monitor_dbc: number[];
  reduction_db: number;
  converged: boolean;
  bands?: BandReport;
}

export interface EventPayload {
  event: "state" | "calibrated" | "fault";
  [key: string]: unknown;
}

export class ProtocolError extends Error {}

export function parseEnvelope(text: string): Envelope {
  let doc: unknown;
  try {
    doc = JSON.parse(text);
  } catch {
    throw new ProtocolError("envelope is not valid JSON");
  }
  if (typeof doc !== "object" || doc === null || Array.isArray(doc)) {
    throw new ProtocolError("envelope must be a JSON object");
  }
  const env = doc as Record<string, unknown>;
  const { topic, seq, payload } = env;
  if (typeof topic !== "string" || topic.length === 0) {
    throw new ProtocolError("envelope topic must be a non-empty string");
  }
  if (typeof seq !== "number" || !Number.isInteger(seq) || seq < 0) {
    throw new ProtocolError("envelope seq must be a non-negative integer");
  }
  if (typeof payload !== "object" || payload === null || Array.isArray(payload)) {
    throw new ProtocolError("envelope payload must be an object");
  }
  return { topic, seq, payload: payload as Record<string, unknown> };
}

export function encodeEnvelope(env: Envelope): string {
  return JSON.stringify({ topic: env.topic, seq: env.seq, payload: env.payload });
}

/** Split "unit/3/telemetry" into its unit number and kind, else null. */
export function parseUnitTopic(
  topic: string,
): { unit: number; kind: "telemetry" | "ack" | "event" | "cmd" } | null {
  const parts = topic.split("/");
  if (parts.length !== 3 || parts[0] !== "unit") return null;
  const unit = Number(parts[1]);
  if (!Number.isInteger(unit) || unit < 0) return null;
  const kind = parts[2];
  if (kind !== "telemetry" && kind !== "ack" && kind !== "event" && kind !== "cmd") {
    return null;
  }
  return { unit, kind };
}
