/**
 * DOM wiring: one card per unit, a connection banner, and shared
 * command/event logs. All rendering reads the store; nothing in here
 * invents state, and every control routes through store.command so the
 * badge only moves when the server answers.
 */

import { BandChart, TimelineChart, TimelineSeries } from "./charts.js";
import { BADGES, controlEnabled } from "./states.js";
import type { PendingCommand, SessionStore, UnitView } from "./store.js";

const MONITOR_COLORS = ["#6aa9ff", "#b18bf2", "#56c2d6", "#d6a156"];

interface UnitCard {
  root: HTMLElement;
  badge: HTMLElement;
  detail: HTMLElement;
  buttons: Map<string, HTMLButtonElement>;
  muInput: HTMLInputElement;
  rhoInput: HTMLInputElement;
  applyBtn: HTMLButtonElement;
  paramNote: HTMLElement;
  spl: TimelineChart;
  alpha: TimelineChart;
  power: TimelineChart;
  bands: BandChart;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  cls?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (cls) node.className = cls;
  if (text !== undefined) node.textContent = text;
  return node;
}

function chartCanvas(parent: HTMLElement, w: number, h: number): CanvasRenderingContext2D {
  const canvas = el("canvas", "chart");
  canvas.width = w;
  canvas.height = h;
  parent.appendChild(canvas);
  const ctx = canvas.getContext("2d");
  if (!ctx) throw new Error("canvas 2d context unavailable");
  return ctx;
}

export class App {
  private cards = new Map<number, UnitCard>();
  private dirty = true;
  private readonly banner: HTMLElement;
  private readonly headline: HTMLElement;
  private readonly unitsBox: HTMLElement;
  private readonly commandList: HTMLElement;
  private readonly eventList: HTMLElement;

  constructor(
    private readonly store: SessionStore,
    root: HTMLElement,
  ) {
    this.banner = el("div", "banner banner-down", "connecting...");
    this.headline = el("div", "headline", "anmsim operator console");
    const top = el("div", "top");
    top.appendChild(this.headline);
    top.appendChild(this.banner);
    root.appendChild(top);
    this.unitsBox = el("div", "units");
    root.appendChild(this.unitsBox);

    const logs = el("div", "logs");
    const cmdPanel = el("div", "panel");
    cmdPanel.appendChild(el("h3", undefined, "Commands"));
    this.commandList = el("div", "list");
    cmdPanel.appendChild(this.commandList);
    const evPanel = el("div", "panel");
    evPanel.appendChild(el("h3", undefined, "Events"));
    this.eventList = el("div", "list");
    evPanel.appendChild(this.eventList);
    logs.appendChild(cmdPanel);
    logs.appendChild(evPanel);
    root.appendChild(logs);
  }

  markDirty(): void {
    this.dirty = true;
  }

  start(intervalMs = 100): void {
    setInterval(() => {
      this.store.tick();
      if (this.dirty) {
        this.dirty = false;
        this.render();
      }
      this.drawCharts();
    }, intervalMs);
  }

  private card(view: UnitView): UnitCard {
    let card = this.cards.get(view.unit);
    if (card) return card;

    const root = el("section", "card");
    const head = el("div", "card-head");
    head.appendChild(el("h2", undefined, `Unit ${view.unit}`));
    const badge = el("span", "badge", "...");
    head.appendChild(badge);
    root.appendChild(head);
    const detail = el("div", "detail", "");
    root.appendChild(detail);

    const controls = el("div", "controls");
    const buttons = new Map<string, HTMLButtonElement>();
    const mk = (id: string, label: string, fire: () => void) => {
      const b = el("button", undefined, label);
      b.addEventListener("click", fire);
      controls.appendChild(b);
      buttons.set(id, b);
    };
    mk("calibrate", "Calibrate", () => this.store.calibrate(view.unit));
    mk("run_ff", "Run FF", () => this.store.setMode(view.unit, "feedforward"));
    mk("run_fb", "Run FB", () => this.store.setMode(view.unit, "feedback"));
    mk("stop", "Stop", () => this.store.setMode(view.unit, "idle"));
    mk("reset", "Reset", () => this.store.reset(view.unit));
    root.appendChild(controls);

    const params = el("div", "params");
    params.appendChild(el("label", undefined, "mu"));
    const muInput = el("input") as HTMLInputElement;
    muInput.type = "number";
    muInput.step = "0.005";
    muInput.min = "0";
    params.appendChild(muInput);
    params.appendChild(el("label", undefined, "rho (blank = off)"));
    const rhoInput = el("input") as HTMLInputElement;
    rhoInput.type = "number";
    rhoInput.step = "0.1";
    rhoInput.min = "0";
    params.appendChild(rhoInput);
    const applyBtn = el("button", undefined, "Apply");
    applyBtn.addEventListener("click", () => this.applyParams(view.unit));
    params.appendChild(applyBtn);
    const paramNote = el("span", "param-note", "");
    params.appendChild(paramNote);
    root.appendChild(params);

    const chartBox = el("div", "charts");
    const spl = new TimelineChart(chartCanvas(chartBox, 620, 150), 620, 150, "SPL (dBC)");
    const alpha = new TimelineChart(chartCanvas(chartBox, 620, 120), 620, 120, "penalty alpha");
    const power = new TimelineChart(
      chartCanvas(chartBox, 620, 120),
      620,
      120,
      "output power E[y^2]",
    );
    const bands = new BandChart(
      chartCanvas(chartBox, 620, 140),
      620,
      140,
      "band reduction (dB, 1/3 octave)",
    );
    root.appendChild(chartBox);
    this.unitsBox.appendChild(root);

    card = {
      root,
      badge,
      detail,
      buttons,
      muInput,
      rhoInput,
      applyBtn,
      paramNote,
      spl,
      alpha,
      power,
      bands,
    };
    this.cards.set(view.unit, card);
    return card;
  }

  private applyParams(unit: number): void {
    const card = this.cards.get(unit);
    if (!card) return;
    const params: Record<string, unknown> = {};
    if (card.muInput.value !== "") params["mu"] = Number(card.muInput.value);
    params["rho"] = card.rhoInput.value === "" ? null : Number(card.rhoInput.value);
    this.store.setParams(unit, params);
  }

  private render(): void {
    const s = this.store;
    if (s.hello) {
      this.headline.textContent =
        `${s.hello.scenario}  |  ${s.hello.sample_rate} Hz  |  ` +
        `speed ${s.hello.speed}x  |  telemetry ${s.hello.cadence_hz} Hz`;
    }
    const statusText: Record<string, string> = {
      connecting: "connecting...",
      backfilling: "replaying history...",
      live: "live",
      stale: "no data for 3s, link may be dead",
      down:
        s.retryInMs >= 0
          ? `disconnected, retrying in ${Math.round(s.retryInMs / 100) / 10}s`
          : "disconnected",
    };
    this.banner.textContent = statusText[s.status] + (s.backfillNote ? `  (${s.backfillNote})` : "");
    this.banner.className = `banner banner-${s.status === "live" ? "live" : s.status === "backfilling" ? "busy" : "down"}`;

    const live = s.status === "live" || s.status === "backfilling";
    for (const view of s.units.values()) {
      const card = this.card(view);
      const badge = BADGES[view.state];
      card.badge.textContent = badge.label + (view.converged ? " (converged)" : "");
      card.badge.className = `badge ${badge.css}`;
      const bits: string[] = [];
      if (view.faultReason) bits.push(`fault: ${view.faultReason}`);
      bits.push(view.calibrated ? "calibrated" : "not calibrated");
      const p = view.params;
      if (p.mu !== undefined) bits.push(`mu=${p.mu}`);
      if (p.rho !== undefined) bits.push(`rho=${p.rho === null ? "off" : p.rho}`);
      if (p.filter_len !== undefined) bits.push(`L=${p.filter_len}`);
      if (p.frame_len !== undefined) bits.push(`M=${p.frame_len}`);
      card.detail.textContent = bits.join("  |  ");
      for (const [id, btn] of card.buttons) {
        btn.disabled =
          !live ||
          !controlEnabled(
            id as Parameters<typeof controlEnabled>[0],
            view.state,
            view.calibrated,
          );
      }
      card.applyBtn.disabled = !live;
      if (document.activeElement !== card.muInput && p.mu !== undefined) {
        card.muInput.value = String(p.mu);
      }
      if (document.activeElement !== card.rhoInput) {
        card.rhoInput.value = p.rho === null || p.rho === undefined ? "" : String(p.rho);
      }
    }

    this.renderCommandLog();
    this.renderEventLog();
  }

  private renderCommandLog(): void {
    this.commandList.textContent = "";
    const recent = this.store.commands.slice(-12).reverse();
    for (const c of recent) {
      const row = el("div", `row row-${c.status}`);
      const label = c.roundtripMs !== undefined ? `${c.label} (${Math.round(c.roundtripMs)} ms)` : c.label;
      row.appendChild(el("span", "row-label", `${label}: ${c.status}${c.reason ? `, ${c.reason}` : ""}`));
      if (c.status === "timeout" || c.status === "lost" || c.status === "rejected") {
        const again = el("button", "mini", "resend");
        again.addEventListener("click", () => this.store.resend(c));
        row.appendChild(again);
      }
      this.commandList.appendChild(row);
    }
  }

  private renderEventLog(): void {
    this.eventList.textContent = "";
    for (const e of this.store.events.slice(-14).reverse()) {
      this.eventList.appendChild(el("div", `row row-${e.cls}`, e.text));
    }
  }

  private drawCharts(): void {
    for (const view of this.store.units.values()) {
      const card = this.cards.get(view.unit);
      if (!card) continue;
      const splSeries: TimelineSeries[] = [
        {
          label: "error",
          color: "#e8eef4",
          points: view.series.map((f) => ({ t: f.t, v: f.splErrorDbc })),
        },
      ];
      const monitors = view.series.length
        ? view.series[view.series.length - 1].splMonitorDbc.length
        : 0;
      for (let m = 0; m < monitors; m++) {
        splSeries.push({
          label: `mon${m}`,
          color: MONITOR_COLORS[m % MONITOR_COLORS.length],
          points: view.series
            .filter((f) => m < f.splMonitorDbc.length)
            .map((f) => ({ t: f.t, v: f.splMonitorDbc[m] })),
        });
      }
      card.spl.draw(splSeries);
      card.alpha.draw([
        {
          label: "alpha",
          color: "#e4b363",
          points: view.series.map((f) => ({ t: f.t, v: f.alpha })),
        },
      ]);
      const rho = view.params.rho;
      card.power.draw(
        [
          {
            label: "E[y^2]",
            color: "#4cc38a",
            points: view.series.map((f) => ({ t: f.t, v: f.outputPower })),
          },
        ],
        typeof rho === "number" ? { value: rho * rho, label: "rho^2" } : null,
      );
      if (view.bands) {
        card.bands.draw(view.bands.centers_hz, view.bands.reduction_db);
      } else {
        card.bands.draw([], []);
      }
    }
  }
}
