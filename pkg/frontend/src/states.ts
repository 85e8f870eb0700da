/**
 * Client-side mirror of the unit lifecycle rules, used only to decide
 * which controls are enabled. The server remains the authority; a
 * rejected command still renders its reason inline, this table just
 * keeps the obvious refusals out of the operator's way.
 *
 *     idle        -> calibrating            (calibrate)
 *     idle        -> running_ff/running_fb  (set_mode, needs calibration)
 *     running_*   -> idle                   (set_mode idle)
 *     fault       -> idle                   (reset only)
 *     mu/rho may change in any state; filter_len/frame_len only in idle
 */

import type { UnitState } from "./envelope.js";

export type ControlId =
  | "calibrate"
  | "run_ff"
  | "run_fb"
  | "stop"
  | "reset"
  | "live_params"
  | "locked_params";

export function controlEnabled(
  control: ControlId,
  state: UnitState,
  calibrated: boolean,
): boolean {
  switch (control) {
    case "calibrate":
      return state === "idle";
    case "run_ff":
    case "run_fb":
      return state === "idle" && calibrated;
    case "stop":
      return state === "running_ff" || state === "running_fb";
    case "reset":
      return true;
    case "live_params":
      return true;
    case "locked_params":
      return state === "idle";
  }
}

export const BADGES: Record<UnitState, { label: string; css: string }> = {
  idle: { label: "Idle", css: "badge-idle" },
  calibrating: { label: "Calibrating", css: "badge-busy" },
  running_ff: { label: "Running FF", css: "badge-run" },
  running_fb: { label: "Running FB", css: "badge-run" },
  fault: { label: "Fault", css: "badge-fault" },
};

export function isUnitState(v: unknown): v is UnitState {
  return (
    v === "idle" ||
    v === "calibrating" ||
    v === "running_ff" ||
    v === "running_fb" ||
    v === "fault"
  );
}
