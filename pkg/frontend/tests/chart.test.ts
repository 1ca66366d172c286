import { describe, expect, it } from "vitest";

import {
  DEFAULT_SPEC,
  extent,
  legendEntries,
  PALETTE,
  polylinePoints,
  renderChart,
  scaleLinear,
  ticks,
} from "../src/chart.js";

describe("scales", () => {
  it("extent finds min and max", () => {
    expect(extent([3, -1, 7, 2])).toEqual([-1, 7]);
  });

  it("flat data gets padded so the scale never divides by zero", () => {
    expect(extent([5, 5, 5])).toEqual([4.5, 5.5]);
    expect(extent([])).toEqual([0, 1]);
  });

  it("linear scale maps domain ends onto range ends", () => {
    const scale = scaleLinear([0, 100], [56, 628]);
    expect(scale(0)).toBe(56);
    expect(scale(100)).toBe(628);
    expect(scale(50)).toBeCloseTo(342, 6);
  });

  it("ticks span the domain inclusively", () => {
    expect(ticks(0, 100, 5)).toEqual([0, 25, 50, 75, 100]);
  });
});

describe("polylines", () => {
  it("a 1000-point series renders 1000 polyline vertices", () => {
    const steps = Array.from({ length: 1000 }, (_, i) => i / 10);
    const values = steps.map((s) => 17 + Math.sin(s));
    const x = scaleLinear(extent(steps), [56, 628]);
    const y = scaleLinear(extent(values), [232, 10]);
    const points = polylinePoints(steps, values, x, y);
    expect(points.split(" ")).toHaveLength(1000);

    const svg = renderChart([{ label: "Average_fluorescence", steps, values }]);
    const match = /points="([^"]+)"/.exec(svg);
    expect(match?.[1].split(" ")).toHaveLength(1000);
  });

  it("every vertex is used verbatim, no smoothing or decimation", () => {
    const steps = [0, 1, 2, 3];
    const values = [0, 10, -10, 5];
    const x = (n: number) => n;
    const y = (n: number) => n;
    expect(polylinePoints(steps, values, x, y)).toBe("0,0 1,10 2,-10 3,5");
  });
});

describe("renderChart", () => {
  it("draws one polyline per series, palette in order", () => {
    const series = [
      { label: "run 1", steps: [0, 1], values: [1, 2] },
      { label: "run 2", steps: [0, 1], values: [2, 1] },
    ];
    const svg = renderChart(series);
    expect(svg.match(/<polyline/g)).toHaveLength(2);
    expect(svg).toContain(`stroke="${PALETTE[0]}"`);
    expect(svg).toContain(`stroke="${PALETTE[1]}"`);
    expect(svg).toContain("run 1");
  });

  it("empty input renders the empty state, not NaN coordinates", () => {
    const svg = renderChart([]);
    expect(svg).toContain("no data");
    expect(svg).not.toContain("NaN");
    const flat = renderChart([{ label: "flat", steps: [1], values: [3] }]);
    expect(flat).not.toContain("NaN");
  });

  it("viewBox matches the spec", () => {
    const svg = renderChart([{ label: "s", steps: [0, 1], values: [0, 1] }]);
    expect(svg).toContain(`viewBox="0 0 ${DEFAULT_SPEC.width} ${DEFAULT_SPEC.height}"`);
  });

  it("legend pairs labels with palette colors", () => {
    const entries = legendEntries([
      { label: "run 3", steps: [], values: [] },
      { label: "run 8", steps: [], values: [] },
    ]);
    expect(entries).toEqual([
      { label: "run 3", color: PALETTE[0] },
      { label: "run 8", color: PALETTE[1] },
    ]);
  });

  it("escapes XML-hostile series labels", () => {
    const svg = renderChart([{ label: 'a<b>&"c', steps: [0, 1], values: [0, 1] }]);
    expect(svg).toContain("a&lt;b&gt;&amp;&quot;c");
  });
});
