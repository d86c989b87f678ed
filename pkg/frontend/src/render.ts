/**
 * Canvas renderers for the posterior panel and the step timeline.
 *
 * Everything drawn here comes straight from fetched payloads; no statistic
 * is recomputed client-side beyond pixel placement.
 */

import { decodePacked, Packed, PosteriorResponse } from "./api.js";
import { downsample, TimelineEntry } from "./state.js";

const MAX_SCATTER_POINTS = 2000;

/** 2-D scatter of posterior samples with optional true-source crosses. */
export function renderScatter(canvas: HTMLCanvasElement, posterior: PosteriorResponse,
                              truth: number[] | null): void {
  const ctx = canvas.getContext("2d")!;
  const { data } = decodePacked(posterior.samples);
  const n = posterior.n;
  const dim = data.length / n;
  const points: [number, number][] = [];
  for (let i = 0; i < n; i++) points.push([data[i * dim], data[i * dim + 1]]);
  const shown = downsample(points, MAX_SCATTER_POINTS);

  const xs = shown.map((p) => p[0]);
  const ys = shown.map((p) => p[1]);
  const crosses: [number, number][] = [];
  if (truth) {
    for (let k = 0; k + 1 < truth.length; k += 2) {
      crosses.push([truth[k], truth[k + 1]]);
      xs.push(truth[k]);
      ys.push(truth[k + 1]);
    }
  }
  const pad = 0.5;
  const xLo = Math.min(...xs) - pad, xHi = Math.max(...xs) + pad;
  const yLo = Math.min(...ys) - pad, yHi = Math.max(...ys) + pad;
  const sx = (v: number) => ((v - xLo) / (xHi - xLo)) * canvas.width;
  const sy = (v: number) => canvas.height - ((v - yLo) / (yHi - yLo)) * canvas.height;

  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.fillStyle = "rgba(46, 110, 180, 0.35)";
  for (const [x, y] of shown) {
    ctx.beginPath();
    ctx.arc(sx(x), sy(y), 2, 0, 2 * Math.PI);
    ctx.fill();
  }
  ctx.strokeStyle = "#c0392b";
  ctx.lineWidth = 2;
  for (const [x, y] of crosses) {
    const cx = sx(x), cy = sy(y);
    ctx.beginPath();
    ctx.moveTo(cx - 6, cy); ctx.lineTo(cx + 6, cy);
    ctx.moveTo(cx, cy - 6); ctx.lineTo(cx, cy + 6);
    ctx.stroke();
  }
}

/** One histogram per parameter component (preference experiments). */
export function renderHistograms(container: HTMLElement, posterior: PosteriorResponse,
                                 labels: string[]): void {
  const { data } = decodePacked(posterior.samples);
  const n = posterior.n;
  const dim = data.length / n;
  container.innerHTML = "";
  for (let d = 0; d < dim; d++) {
    const canvas = document.createElement("canvas");
    canvas.width = 170;
    canvas.height = 90;
    canvas.title = labels[d] ?? `component ${d}`;
    const values: number[] = [];
    for (let i = 0; i < n; i++) values.push(data[i * dim + d]);
    drawHistogram(canvas, values, labels[d] ?? `c${d}`);
    container.appendChild(canvas);
  }
}

function drawHistogram(canvas: HTMLCanvasElement, values: number[], label: string): void {
  const ctx = canvas.getContext("2d")!;
  const lo = Math.min(...values), hi = Math.max(...values);
  const bins = new Array(24).fill(0);
  const width = hi - lo || 1;
  for (const v of values) {
    const b = Math.min(bins.length - 1, Math.floor(((v - lo) / width) * bins.length));
    bins[b] += 1;
  }
  const peak = Math.max(...bins);
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.fillStyle = "#2e6eb4";
  const bw = canvas.width / bins.length;
  bins.forEach((count, i) => {
    const h = (count / peak) * (canvas.height - 16);
    ctx.fillRect(i * bw, canvas.height - 12 - h, bw - 1, h);
  });
  ctx.fillStyle = "#333";
  ctx.font = "10px sans-serif";
  ctx.fillText(`${label}  [${lo.toFixed(2)}, ${hi.toFixed(2)}]`, 4, canvas.height - 2);
}

/** Grayscale image helper for the image-discovery views. */
function drawImage(ctx: CanvasRenderingContext2D, pixels: Float32Array, size: number,
                   x0: number, y0: number, cell: number): void {
  for (let r = 0; r < size; r++) {
    for (let c = 0; c < size; c++) {
      const v = Math.max(0, Math.min(1, pixels[r * size + c]));
      const g = Math.round(v * 255);
      ctx.fillStyle = `rgb(${g},${g},${g})`;
      ctx.fillRect(x0 + c * cell, y0 + r * cell, cell, cell);
    }
  }
}

/** Posterior sample grid plus the sample mean (image experiments). */
export function renderImageGrid(canvas: HTMLCanvasElement, posterior: PosteriorResponse,
                                maxSamples = 7): void {
  const ctx = canvas.getContext("2d")!;
  const { data } = decodePacked(posterior.samples);
  const n = posterior.n;
  const dim = data.length / n;
  const size = Math.round(Math.sqrt(dim));
  const cell = Math.max(2, Math.floor(canvas.width / ((maxSamples + 1) * (size + 2))));
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const shown = Math.min(maxSamples, n);
  for (let i = 0; i < shown; i++) {
    drawImage(ctx, data.subarray(i * dim, (i + 1) * dim) as Float32Array, size,
              i * (size + 2) * cell, 12, cell);
  }
  const mean = Float32Array.from(posterior.mean);
  drawImage(ctx, mean, size, shown * (size + 2) * cell, 12, cell);
  ctx.fillStyle = "#333";
  ctx.font = "10px sans-serif";
  ctx.fillText("posterior samples", 2, 9);
  ctx.fillText("mean", shown * (size + 2) * cell + 2, 9);
}

/**
 * Cumulative measurements for image experiments: pixelwise max over the
 * observed images, with the newest design center highlighted.
 */
export function renderMeasurements(canvas: HTMLCanvasElement,
                                   observations: Packed[],
                                   designs: number[][]): void {
  const ctx = canvas.getContext("2d")!;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  if (observations.length === 0) return;
  const first = decodePacked(observations[0]);
  const size = first.shape[first.shape.length - 1];
  const acc = new Float32Array(size * size);
  for (const obs of observations) {
    const { data } = decodePacked(obs);
    for (let i = 0; i < acc.length; i++) acc[i] = Math.max(acc[i], data[i]);
  }
  const cell = Math.max(2, Math.floor(Math.min(canvas.width, canvas.height) / size));
  drawImage(ctx, acc, size, 0, 0, cell);
  const latest = designs[designs.length - 1];
  ctx.strokeStyle = "#2e86de";
  ctx.lineWidth = 2;
  ctx.strokeRect(latest[1] * size * cell - 4, latest[0] * size * cell - 4, 8, 8);
}

/** Step timeline with design-source badges; mirrors the server trace. */
export function renderTimeline(list: HTMLElement, entries: TimelineEntry[]): void {
  list.innerHTML = "";
  for (const entry of entries) {
    const item = document.createElement("li");
    const badge = document.createElement("span");
    badge.className = `badge badge-${entry.source.replace("human-override", "human")}`;
    badge.textContent = entry.source;
    const obs = decodePacked(entry.observation);
    const obsText = obs.data.length === 1
      ? ` -> ${obs.data[0].toFixed(4)}`
      : ` -> image ${obs.shape.join("x")}`;
    item.textContent = `step ${entry.t}: design [${entry.design
      .map((v) => v.toFixed(3)).join(", ")}]${obsText} `;
    item.appendChild(badge);
    list.appendChild(item);
  }
}
