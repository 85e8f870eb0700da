/**
 * Small canvas charts, no dependencies.
 *
 * Both charts are stateless draw calls over injected 2D contexts so
 * they can run against a recording stub. The timeline renders a
 * sliding window anchored at the newest sample; the band chart renders
 * whatever band table the server last published, nulls shown as gaps.
 */

export interface Ctx2D {
  fillStyle: string | CanvasGradient | CanvasPattern;
  strokeStyle: string | CanvasGradient | CanvasPattern;
  lineWidth: number;
  font: string;
  textAlign: CanvasTextAlign;
  textBaseline: CanvasTextBaseline;
  clearRect(x: number, y: number, w: number, h: number): void;
  fillRect(x: number, y: number, w: number, h: number): void;
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  stroke(): void;
  fillText(text: string, x: number, y: number): void;
  setLineDash(segments: number[]): void;
}

export interface TimelineSeries {
  label: string;
  color: string;
  points: { t: number; v: number }[];
}

export interface TimelineRef {
  value: number;
  label: string;
}

const MARGIN = { left: 46, right: 10, top: 18, bottom: 16 };
const BG = "#10161d";
const GRID = "#263241";
const TEXT = "#8fa3b8";
const REF = "#e4b363";

export interface AxisBounds {
  lo: number;
  hi: number;
}

/** Padded y range covering every visible point plus the ref line. */
export function axisBounds(
  series: TimelineSeries[],
  ref: TimelineRef | null,
  tMin: number,
): AxisBounds {
  let lo = Infinity;
  let hi = -Infinity;
  for (const s of series) {
    for (const p of s.points) {
      if (p.t < tMin || !Number.isFinite(p.v)) continue;
      if (p.v < lo) lo = p.v;
      if (p.v > hi) hi = p.v;
    }
  }
  if (ref && Number.isFinite(ref.value)) {
    lo = Math.min(lo, ref.value);
    hi = Math.max(hi, ref.value);
  }
  if (!Number.isFinite(lo)) return { lo: 0, hi: 1 };
  if (hi - lo < 1e-9) {
    const pad = Math.max(Math.abs(hi) * 0.1, 0.5);
    return { lo: lo - pad, hi: hi + pad };
  }
  const pad = (hi - lo) * 0.08;
  return { lo: lo - pad, hi: hi + pad };
}

function fmt(v: number): string {
  const a = Math.abs(v);
  if (a >= 1000) return v.toFixed(0);
  if (a >= 10) return v.toFixed(1);
  if (a >= 0.01 || a === 0) return v.toFixed(2);
  return v.toExponential(1);
}

export class TimelineChart {
  constructor(
    private readonly ctx: Ctx2D,
    private readonly width: number,
    private readonly height: number,
    private readonly title: string,
    private readonly windowS = 60,
  ) {}

  draw(series: TimelineSeries[], ref: TimelineRef | null = null): void {
    const { ctx, width: w, height: h } = this;
    ctx.fillStyle = BG;
    ctx.clearRect(0, 0, w, h);
    ctx.fillRect(0, 0, w, h);

    let tNow = -Infinity;
    for (const s of series) {
      const last = s.points[s.points.length - 1];
      if (last && last.t > tNow) tNow = last.t;
    }
    const plotW = w - MARGIN.left - MARGIN.right;
    const plotH = h - MARGIN.top - MARGIN.bottom;
    ctx.font = "10px system-ui, sans-serif";
    ctx.textAlign = "left";
    ctx.textBaseline = "top";
    ctx.fillStyle = TEXT;
    ctx.fillText(this.title, MARGIN.left, 3);

    if (!Number.isFinite(tNow)) {
      ctx.fillText("no data yet", MARGIN.left, MARGIN.top + plotH / 2);
      return;
    }
    const tMin = tNow - this.windowS;
    const { lo, hi } = axisBounds(series, ref, tMin);
    const x = (t: number) => MARGIN.left + ((t - tMin) / this.windowS) * plotW;
    const y = (v: number) => MARGIN.top + (1 - (v - lo) / (hi - lo)) * plotH;

    ctx.strokeStyle = GRID;
    ctx.lineWidth = 1;
    for (let i = 0; i <= 4; i++) {
      const gy = MARGIN.top + (plotH * i) / 4;
      ctx.beginPath();
      ctx.moveTo(MARGIN.left, gy);
      ctx.lineTo(w - MARGIN.right, gy);
      ctx.stroke();
      ctx.fillStyle = TEXT;
      ctx.textAlign = "right";
      ctx.textBaseline = "middle";
      ctx.fillText(fmt(hi - ((hi - lo) * i) / 4), MARGIN.left - 4, gy);
    }
    ctx.textAlign = "center";
    ctx.textBaseline = "top";
    ctx.fillText(`${this.windowS}s window`, MARGIN.left + plotW / 2, h - 13);

    if (ref && Number.isFinite(ref.value)) {
      ctx.strokeStyle = REF;
      ctx.setLineDash([4, 3]);
      ctx.beginPath();
      ctx.moveTo(MARGIN.left, y(ref.value));
      ctx.lineTo(w - MARGIN.right, y(ref.value));
      ctx.stroke();
      ctx.setLineDash([]);
      ctx.fillStyle = REF;
      ctx.textAlign = "right";
      ctx.textBaseline = "bottom";
      ctx.fillText(ref.label, w - MARGIN.right, y(ref.value) - 1);
    }

    for (const s of series) {
      ctx.strokeStyle = s.color;
      ctx.lineWidth = 1.4;
      ctx.beginPath();
      let started = false;
      for (const p of s.points) {
        if (p.t < tMin || !Number.isFinite(p.v)) continue;
        if (!started) {
          ctx.moveTo(x(p.t), y(p.v));
          started = true;
        } else {
          ctx.lineTo(x(p.t), y(p.v));
        }
      }
      if (started) ctx.stroke();
    }

    // legend with the latest value of each series
    let lx = MARGIN.left + 60;
    ctx.textBaseline = "top";
    for (const s of series) {
      const last = s.points[s.points.length - 1];
      if (!last) continue;
      ctx.fillStyle = s.color;
      ctx.textAlign = "left";
      ctx.fillText(`${s.label} ${fmt(last.v)}`, lx, 3);
      lx += 8 * (s.label.length + 8);
    }
  }
}

export class BandChart {
  constructor(
    private readonly ctx: Ctx2D,
    private readonly width: number,
    private readonly height: number,
    private readonly title: string,
  ) {}

  draw(centersHz: number[], reductionDb: (number | null)[]): void {
    const { ctx, width: w, height: h } = this;
    ctx.fillStyle = BG;
    ctx.clearRect(0, 0, w, h);
    ctx.fillRect(0, 0, w, h);
    ctx.font = "10px system-ui, sans-serif";
    ctx.fillStyle = TEXT;
    ctx.textAlign = "left";
    ctx.textBaseline = "top";
    ctx.fillText(this.title, MARGIN.left, 3);

    const n = Math.min(centersHz.length, reductionDb.length);
    if (n === 0) {
      ctx.fillText("no band data yet", MARGIN.left, h / 2);
      return;
    }
    const finite = reductionDb.filter(
      (v): v is number => v !== null && Number.isFinite(v),
    );
    let lo = Math.min(0, ...finite);
    let hi = Math.max(0, ...finite);
    if (hi - lo < 1e-9) {
      lo -= 1;
      hi += 1;
    }
    const plotW = w - MARGIN.left - MARGIN.right;
    const plotH = h - MARGIN.top - MARGIN.bottom;
    const y = (v: number) => MARGIN.top + (1 - (v - lo) / (hi - lo)) * plotH;
    const bw = plotW / n;

    ctx.strokeStyle = GRID;
    ctx.lineWidth = 1;
    ctx.beginPath();
    ctx.moveTo(MARGIN.left, y(0));
    ctx.lineTo(w - MARGIN.right, y(0));
    ctx.stroke();
    ctx.textAlign = "right";
    ctx.textBaseline = "middle";
    ctx.fillText(fmt(hi), MARGIN.left - 4, y(hi));
    ctx.fillText(fmt(lo), MARGIN.left - 4, y(lo));
    ctx.fillText("0", MARGIN.left - 4, y(0));

    for (let i = 0; i < n; i++) {
      const v = reductionDb[i];
      const bx = MARGIN.left + i * bw;
      if (v === null || !Number.isFinite(v)) continue;
      ctx.fillStyle = v >= 0 ? "#4cc38a" : "#e5484d";
      const top = Math.min(y(v), y(0));
      const hgt = Math.max(Math.abs(y(v) - y(0)), 1);
      ctx.fillRect(bx + 1, top, Math.max(bw - 2, 1), hgt);
    }

    ctx.fillStyle = TEXT;
    ctx.textAlign = "center";
    ctx.textBaseline = "top";
    // label roughly every fourth band to keep the axis readable
    const step = Math.max(1, Math.round(n / 8));
    for (let i = 0; i < n; i += step) {
      const c = centersHz[i];
      const label = c >= 1000 ? `${(c / 1000).toFixed(1)}k` : `${Math.round(c)}`;
      ctx.fillText(label, MARGIN.left + (i + 0.5) * bw, h - 13);
    }
  }
}
