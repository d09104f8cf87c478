// Chart rendering: the server's ChartSpec names an x and a y column; this
// module extracts the series and draws a minimal SVG bar or line chart.
// Pure string output, no canvas, no dependencies.

import type { Cell, ChartSpec, TableData } from "./types";
import { escapeHtml } from "./render";

export interface ChartSeries {
  labels: string[];
  values: number[];
}

export function extractSeries(table: TableData, spec: ChartSpec, maxPoints = 30): ChartSeries | null {
  const xIdx = table.columns.findIndex((c) => c.name === spec.x_column);
  const yIdx = table.columns.findIndex((c) => c.name === spec.y_column);
  if (xIdx < 0 || yIdx < 0) {
    return null;
  }
  const labels: string[] = [];
  const values: number[] = [];
  for (const row of table.rows.slice(0, maxPoints)) {
    const y = toNumber(row[yIdx]);
    if (y === null) {
      continue; // non-numeric cells cannot be plotted
    }
    labels.push(cellLabel(row[xIdx]));
    values.push(y);
  }
  return values.length ? { labels, values } : null;
}

function toNumber(cell: Cell): number | null {
  if (typeof cell === "number") return cell;
  if (typeof cell === "boolean") return cell ? 1 : 0;
  if (typeof cell === "string" && cell !== "" && Number.isFinite(Number(cell))) {
    return Number(cell);
  }
  return null;
}

function cellLabel(cell: Cell): string {
  return cell === null ? "NULL" : String(cell);
}

const W = 420;
const H = 180;
const PAD = 26;

export function renderChartSvg(series: ChartSeries, kind: "bar" | "line"): string {
  const max = Math.max(...series.values, 0);
  const min = Math.min(...series.values, 0);
  const span = max - min || 1;
  const innerW = W - PAD * 2;
  const innerH = H - PAD * 2;
  const n = series.values.length;
  const scaleY = (v: number) => PAD + innerH - ((v - min) / span) * innerH;

  let body = "";
  if (kind === "bar") {
    const slot = innerW / n;
    const barW = Math.max(4, slot * 0.7);
    series.values.forEach((v, i) => {
      const x = PAD + i * slot + (slot - barW) / 2;
      const y0 = scaleY(Math.max(0, min));
      const y1 = scaleY(v);
      const top = Math.min(y0, y1);
      const height = Math.max(1, Math.abs(y0 - y1));
      body += `<rect class="bar" x="${x.toFixed(1)}" y="${top.toFixed(1)}" width="${barW.toFixed(1)}" height="${height.toFixed(1)}"><title>${escapeHtml(series.labels[i])}: ${v}</title></rect>`;
    });
  } else {
    const step = n > 1 ? innerW / (n - 1) : 0;
    const points = series.values
      .map((v, i) => `${(PAD + i * step).toFixed(1)},${scaleY(v).toFixed(1)}`)
      .join(" ");
    body += `<polyline class="line" fill="none" points="${points}"/>`;
    series.values.forEach((v, i) => {
      body += `<circle class="dot" cx="${(PAD + i * step).toFixed(1)}" cy="${scaleY(v).toFixed(1)}" r="2.5"><title>${escapeHtml(series.labels[i])}: ${v}</title></circle>`;
    });
  }

  let labels = "";
  const every = Math.max(1, Math.ceil(n / 8));
  series.labels.forEach((label, i) => {
    if (i % every !== 0) return;
    const slot = kind === "bar" ? innerW / n : n > 1 ? innerW / (n - 1) : 0;
    const x = kind === "bar" ? PAD + i * slot + slot / 2 : PAD + i * slot;
    labels += `<text class="xlabel" x="${x.toFixed(1)}" y="${H - 6}" text-anchor="middle">${escapeHtml(truncate(label, 10))}</text>`;
  });

  return (
    `<svg class="chart" viewBox="0 0 ${W} ${H}" role="img" aria-label="${kind} chart">` +
    `<line class="axis" x1="${PAD}" y1="${H - PAD}" x2="${W - PAD}" y2="${H - PAD}"/>` +
    `<text class="ylabel" x="4" y="${PAD}" >${Math.max(...series.values)}</text>` +
    body +
    labels +
    `</svg>`
  );
}

function truncate(text: string, length: number): string {
  return text.length > length ? text.slice(0, length - 1) + "…" : text;
}
