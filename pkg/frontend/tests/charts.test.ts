import assert from "node:assert/strict";
import { test } from "node:test";

import {
  BandChart,
  Ctx2D,
  TimelineChart,
  axisBounds,
} from "../src/charts.js";

class RecordingCtx implements Ctx2D {
  fillStyle: string = "";
  strokeStyle: string = "";
  lineWidth = 1;
  font = "";
  textAlign: CanvasTextAlign = "left";
  textBaseline: CanvasTextBaseline = "top";
  calls: string[] = [];
  texts: string[] = [];
  rects: { x: number; y: number; w: number; h: number }[] = [];
  clearRect(): void {
    this.calls.push("clearRect");
  }
  fillRect(x: number, y: number, w: number, h: number): void {
    this.calls.push("fillRect");
    this.rects.push({ x, y, w, h });
  }
  beginPath(): void {
    this.calls.push("beginPath");
  }
  moveTo(): void {
    this.calls.push("moveTo");
  }
  lineTo(): void {
    this.calls.push("lineTo");
  }
  stroke(): void {
    this.calls.push("stroke");
  }
  fillText(text: string): void {
    this.calls.push("fillText");
    this.texts.push(text);
  }
  setLineDash(): void {
    this.calls.push("setLineDash");
  }
}

test("axisBounds pads the envelope of every visible point", () => {
  const b = axisBounds(
    [{ label: "a", color: "#fff", points: [{ t: 0, v: 10 }, { t: 1, v: 20 }] }],
    null,
    -1,
  );
  assert.ok(b.lo < 10 && b.lo > 9, `lo ${b.lo}`);
  assert.ok(b.hi > 20 && b.hi < 21, `hi ${b.hi}`);
});

test("axisBounds includes the reference line and survives edge cases", () => {
  const series = [{ label: "a", color: "#fff", points: [{ t: 0, v: 1.0 }] }];
  const withRef = axisBounds(series, { value: 9.0, label: "ref" }, -1);
  assert.ok(withRef.hi >= 9.0);

  const empty = axisBounds([], null, 0);
  assert.deepEqual(empty, { lo: 0, hi: 1 });

  const flat = axisBounds(
    [{ label: "a", color: "#fff", points: [{ t: 0, v: 5 }, { t: 1, v: 5 }] }],
    null,
    -1,
  );
  assert.ok(flat.hi > flat.lo, "constant series still has a range");

  const windowed = axisBounds(
    [{ label: "a", color: "#fff", points: [{ t: 0, v: 1000 }, { t: 50, v: 2 }] }],
    null,
    10,
  );
  assert.ok(windowed.hi < 1000, "points left of the window are ignored");
});

test("timeline chart draws series lines and the dashed reference", () => {
  const ctx = new RecordingCtx();
  const chart = new TimelineChart(ctx, 600, 150, "output power", 60);
  chart.draw(
    [
      {
        label: "E[y^2]",
        color: "#4cc38a",
        points: Array.from({ length: 50 }, (_, i) => ({ t: i * 0.1, v: 1 + i * 0.01 })),
      },
    ],
    { value: 1.2, label: "rho^2" },
  );
  assert.ok(ctx.calls.includes("stroke"));
  assert.ok(ctx.calls.filter((c) => c === "lineTo").length > 40, "polyline drawn");
  assert.ok(ctx.calls.includes("setLineDash"), "reference line dashed");
  assert.ok(ctx.texts.some((t) => t.includes("rho^2")));
  assert.ok(ctx.texts.some((t) => t.includes("output power")));
});

test("timeline chart says so when there is nothing to draw", () => {
  const ctx = new RecordingCtx();
  new TimelineChart(ctx, 600, 150, "SPL").draw([]);
  assert.ok(ctx.texts.includes("no data yet"));
  assert.ok(!ctx.calls.includes("stroke"));
});

test("band chart skips null bands and keeps the zero line", () => {
  const ctx = new RecordingCtx();
  const chart = new BandChart(ctx, 600, 140, "bands");
  chart.draw([31.5, 40, 50, 63, 80], [10.0, null, 5.0, -2.0, null]);
  // background + one bar per finite value
  const bars = ctx.rects.length - 1;
  assert.equal(bars, 3);
  assert.ok(ctx.calls.includes("stroke"), "zero line drawn");
  assert.ok(ctx.texts.some((t) => t === "31" || t === "32"), "band labels present");
});

test("band chart with no data renders a placeholder", () => {
  const ctx = new RecordingCtx();
  new BandChart(ctx, 600, 140, "bands").draw([], []);
  assert.ok(ctx.texts.includes("no band data yet"));
});
