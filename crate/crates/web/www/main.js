// Build: see README ("Browser demo"). Expects the wasm-bindgen output in ./pkg.
import init, { free_energy_curve, threshold, dephasing_curve } from "./pkg/cwsim_web.js";

const $ = (id) => document.getElementById(id);
const num = (id) => parseFloat($(id).value);

function plot(canvas, series, { ymin, ymax } = {}) {
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  const pad = 36;
  ctx.clearRect(0, 0, w, h);
  const xs = series.flatMap((s) => s.x);
  const ys = series.flatMap((s) => s.y);
  const [x0, x1] = [Math.min(...xs), Math.max(...xs)];
  const y0 = ymin ?? Math.min(...ys);
  const y1 = ymax ?? Math.max(...ys);
  const sx = (x) => pad + ((x - x0) / (x1 - x0 || 1)) * (w - 2 * pad);
  const sy = (y) => h - pad - ((y - y0) / (y1 - y0 || 1)) * (h - 2 * pad);

  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad, w - 2 * pad, h - 2 * pad);
  ctx.fillStyle = "#555";
  ctx.fillText(x0.toPrecision(3), pad, h - pad + 14);
  ctx.fillText(x1.toPrecision(3), w - pad - 24, h - pad + 14);
  ctx.fillText(y1.toPrecision(3), 2, pad + 4);
  ctx.fillText(y0.toPrecision(3), 2, h - pad);

  for (const s of series) {
    ctx.strokeStyle = s.color;
    ctx.setLineDash(s.dash ?? []);
    ctx.beginPath();
    s.x.forEach((x, i) => (i ? ctx.lineTo(sx(x), sy(s.y[i])) : ctx.moveTo(sx(x), sy(s.y[i]))));
    ctx.stroke();
  }
  ctx.setLineDash([]);
}

function columns(flat, width) {
  const cols = Array.from({ length: width }, () => []);
  flat.forEach((v, i) => cols[i % width].push(v));
  return cols;
}

function updateMagnet() {
  const [n, t, g] = [num("n"), num("temp"), num("g")];
  const hc = threshold(n, 1.0, t);
  $("hc").textContent = hc.toFixed(5) + (g > hc ? "  (g above: registers)" : "  (g below: metastable)");
  const [m0, f0] = columns(free_energy_curve(n, 1.0, 1.0, 0.0, t), 2);
  const [m1, f1] = columns(free_energy_curve(n, 1.0, 1.0, g, t), 2);
  plot($("fe"), [
    { x: m0, y: f0, color: "#888", dash: [4, 4] },
    { x: m1, y: f1, color: "#1f5fbf" },
  ]);
}

function updateCoherence() {
  const [n, t, g, gamma, tf] = [num("n"), num("temp"), Math.max(num("g"), 1e-3), num("gamma"), num("tf")];
  const [ts, analytic, sim] = columns(dephasing_curve(n, g, gamma, t, tf, 400), 3);
  plot(
    $("coh"),
    [
      { x: ts, y: analytic, color: "#888", dash: [4, 4] },
      { x: ts, y: sim, color: "#c0392b" },
    ],
    { ymin: 0, ymax: 1 },
  );
}

function refresh() {
  for (const id of ["n", "temp", "g", "gamma", "tf"]) $(id + "-v").textContent = $(id).value;
  try {
    $("err").textContent = "";
    updateMagnet();
    updateCoherence();
  } catch (e) {
    $("err").textContent = String(e);
  }
}

await init();
for (const el of document.querySelectorAll("input")) el.addEventListener("input", refresh);
refresh();
