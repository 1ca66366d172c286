import type { RunRecord } from "./types.js";

const UNITS = ["B", "KiB", "MiB", "GiB", "TiB"];

export function formatSize(bytes: number): string {
  let value = bytes;
  let unit = 0;
  while (value >= 1024 && unit < UNITS.length - 1) {
    value /= 1024;
    unit += 1;
  }
  return unit === 0 ? `${bytes} B` : `${value.toFixed(1)} ${UNITS[unit]}`;
}

// "2025-01-23T12:00:00.000Z" -> "2025-01-23 12:00:00"
export function formatTimestamp(ts: string): string {
  const match = /^(\d{4}-\d{2}-\d{2})T(\d{2}:\d{2}:\d{2})/.exec(ts);
  return match ? `${match[1]} ${match[2]}` : ts;
}

export function formatResult(result: unknown): string {
  if (result === undefined || result === null) return "";
  if (typeof result === "string") return result;
  return JSON.stringify(result);
}

export interface StatusBadge {
  label: string;
  className: string;
  stale: boolean;
}

export function statusBadge(run: Pick<RunRecord, "status" | "stale">): StatusBadge {
  return {
    label: run.status,
    className: `status status-${run.status.toLowerCase()}`,
    stale: run.stale,
  };
}

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;")
    .replace(/'/g, "&#39;");
}
