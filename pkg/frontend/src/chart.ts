// SVG line charts for metric series. Every recorded point becomes one
// polyline vertex: raw data, no smoothing or decimation.

export interface Series {
  label: string;
  steps: number[];
  values: number[];
}

export interface ChartSpec {
  width: number;
  height: number;
  marginLeft: number;
  marginRight: number;
  marginTop: number;
  marginBottom: number;
}

export const DEFAULT_SPEC: ChartSpec = {
  width: 640,
  height: 260,
  marginLeft: 56,
  marginRight: 12,
  marginTop: 10,
  marginBottom: 28,
};

export const PALETTE = [
  "#2563eb",
  "#dc2626",
  "#059669",
  "#d97706",
  "#7c3aed",
  "#0891b2",
  "#be185d",
  "#4d7c0f",
];

export function extent(numbers: number[]): [number, number] {
  let lo = Infinity;
  let hi = -Infinity;
  for (const n of numbers) {
    if (n < lo) lo = n;
    if (n > hi) hi = n;
  }
  if (lo === Infinity) return [0, 1];
  if (lo === hi) return [lo - 0.5, hi + 0.5]; // flat series still needs height
  return [lo, hi];
}

export function scaleLinear(
  domain: [number, number],
  range: [number, number],
): (x: number) => number {
  const [d0, d1] = domain;
  const [r0, r1] = range;
  const span = d1 - d0;
  return (x) => r0 + ((x - d0) / span) * (r1 - r0);
}

export function ticks(lo: number, hi: number, count: number): number[] {
  const out: number[] = [];
  for (let i = 0; i < count; i++) {
    out.push(lo + ((hi - lo) * i) / (count - 1));
  }
  return out;
}

export function formatTick(value: number): string {
  if (value === 0) return "0";
  const magnitude = Math.abs(value);
  if (magnitude >= 1e6 || magnitude < 1e-3) return value.toExponential(1);
  return String(Number(value.toPrecision(4)));
}

export function polylinePoints(
  steps: number[],
  values: number[],
  x: (n: number) => number,
  y: (n: number) => number,
): string {
  const points: string[] = [];
  for (let i = 0; i < steps.length; i++) {
    points.push(`${round2(x(steps[i]))},${round2(y(values[i]))}`);
  }
  return points.join(" ");
}

function round2(n: number): number {
  return Math.round(n * 100) / 100;
}

function escapeXml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function renderChart(series: Series[], spec: ChartSpec = DEFAULT_SPEC): string {
  const plotted = series.filter((s) => s.steps.length > 0);
  if (plotted.length === 0) {
    return `<svg class="chart" viewBox="0 0 ${spec.width} ${spec.height}" role="img"><text x="${spec.width / 2}" y="${spec.height / 2}" text-anchor="middle" class="chart-empty">no data</text></svg>`;
  }

  const [x0, x1] = extent(plotted.flatMap((s) => s.steps));
  const [y0, y1] = extent(plotted.flatMap((s) => s.values));
  const left = spec.marginLeft;
  const right = spec.width - spec.marginRight;
  const top = spec.marginTop;
  const bottom = spec.height - spec.marginBottom;
  const x = scaleLinear(x1 === x0 ? [x0 - 0.5, x1 + 0.5] : [x0, x1], [left, right]);
  const y = scaleLinear([y0, y1], [bottom, top]); // SVG y grows downward

  const parts: string[] = [];
  parts.push(
    `<svg class="chart" viewBox="0 0 ${spec.width} ${spec.height}" role="img">`,
  );
  for (const tick of ticks(y0, y1, 5)) {
    const ty = round2(y(tick));
    parts.push(
      `<line class="grid" x1="${left}" y1="${ty}" x2="${right}" y2="${ty}"/>`,
      `<text class="tick" x="${left - 6}" y="${ty + 4}" text-anchor="end">${formatTick(tick)}</text>`,
    );
  }
  for (const tick of ticks(x0, x1, 5)) {
    const tx = round2(x(tick));
    parts.push(
      `<text class="tick" x="${tx}" y="${bottom + 18}" text-anchor="middle">${formatTick(tick)}</text>`,
    );
  }
  parts.push(
    `<line class="axis" x1="${left}" y1="${top}" x2="${left}" y2="${bottom}"/>`,
    `<line class="axis" x1="${left}" y1="${bottom}" x2="${right}" y2="${bottom}"/>`,
  );
  plotted.forEach((s, i) => {
    const color = PALETTE[i % PALETTE.length];
    parts.push(
      `<polyline fill="none" stroke="${color}" stroke-width="1.5" points="${polylinePoints(s.steps, s.values, x, y)}"><title>${escapeXml(s.label)}</title></polyline>`,
    );
  });
  parts.push("</svg>");
  return parts.join("");
}

export function legendEntries(series: Series[]): { label: string; color: string }[] {
  return series.map((s, i) => ({ label: s.label, color: PALETTE[i % PALETTE.length] }));
}
