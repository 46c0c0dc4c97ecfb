// Expects the wasm-bindgen output (`--target web`) in ./pkg.
import init, { scenario_text, run_config, compare_protocols, collision_demo } from "./pkg/quorumlab_web.js";

const COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
const $ = (id) => document.getElementById(id);

function axes(ctx, w, h, pad, maxX, maxY, unit) {
  ctx.strokeStyle = "#999";
  ctx.beginPath();
  ctx.moveTo(pad, 10);
  ctx.lineTo(pad, h - pad);
  ctx.lineTo(w - 10, h - pad);
  ctx.stroke();
  ctx.fillStyle = "#555";
  ctx.font = "11px sans-serif";
  ctx.fillText(`${maxY.toFixed(1)} ${unit}`, 4, 16);
  ctx.fillText(`${(maxX / 1000).toFixed(1)} s`, w - 50, h - pad + 14);
}

function plot(canvas, series, markers) {
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  const pad = 30;
  ctx.clearRect(0, 0, w, h);
  const points = series.flatMap((s) => s.points);
  if (points.length === 0) return;
  const maxX = Math.max(...points.map((p) => p[0])) || 1;
  const maxY = Math.max(...points.map((p) => p[1])) || 1;
  const x = (t) => pad + (t / maxX) * (w - pad - 10);
  const y = (v) => h - pad - (v / maxY) * (h - pad - 14);
  axes(ctx, w, h, pad, maxX, maxY, "ms");
  for (const m of markers) {
    ctx.strokeStyle = m.label === "crash" ? "#d62728" : m.label === "restart" ? "#2ca02c" : "#ccc";
    ctx.beginPath();
    ctx.moveTo(x(m.time_ms), 10);
    ctx.lineTo(x(m.time_ms), h - pad);
    ctx.stroke();
  }
  series.forEach((s, i) => {
    ctx.strokeStyle = COLORS[i % COLORS.length];
    ctx.beginPath();
    s.points.forEach(([t, v], k) => (k ? ctx.lineTo(x(t), y(v)) : ctx.moveTo(x(t), y(v))));
    ctx.stroke();
  });
}

function legend(el, names) {
  el.innerHTML = names.map((n, i) => `<span style="color:${COLORS[i % COLORS.length]}">&#9632; ${n}</span>`).join("");
}

function showError(msg) {
  $("report").innerHTML = `<span class="error">${msg}</span>`;
}

function loadConfig() {
  $("config").value = scenario_text($("scenario").value, $("protocol").value, Number($("seed").value) >>> 0);
}

function run() {
  const view = JSON.parse(run_config($("config").value));
  if (view.error) return showError(view.error);
  const b = view.buckets;
  plot($("series"), [
    { points: b.map((x) => [x.start_ms, x.write_mean_ms]) },
    { points: b.map((x) => [x.start_ms, x.write_max_ms]) },
  ], view.markers);
  legend($("legend"), ["mean write latency", "max write latency", "crash / restart / leader change as vertical lines"]);
  $("report").textContent = view.report;
}

function compare() {
  const runs = JSON.parse(compare_protocols($("config").value, $("protocols").value));
  if (runs.error) return showError(runs.error);
  plot($("compared"), runs.map((r) => ({ points: r.buckets.map((x) => [x.start_ms, x.write_mean_ms]) })), runs[0]?.markers.filter((m) => m.label === "crash" || m.label === "restart") ?? []);
  legend($("compared-legend"), runs.map((r) => r.protocol));
}

function collisions() {
  const delay = Number($("delay").value);
  $("delay-label").textContent = `${delay} ms`;
  const view = JSON.parse(collision_demo(delay, 7));
  $("dups").textContent = `${view.duplicate_pops} jobs handed to both workers`;
  const canvas = $("pops");
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  ctx.clearRect(0, 0, w, h);
  const maxT = Math.max(...view.pops.map((p) => p.time_ms)) || 1;
  ctx.font = "11px sans-serif";
  for (const worker of [0, 1]) {
    const lane = 30 + worker * 60;
    ctx.fillStyle = "#555";
    ctx.fillText(`worker ${worker}`, 4, lane + 4);
    for (const p of view.pops.filter((p) => p.worker === worker)) {
      const px = 70 + (p.time_ms / maxT) * (w - 80);
      ctx.fillStyle = p.duplicate ? "#d62728" : p.job === null ? "#bbb" : "#1f77b4";
      ctx.fillRect(px - 1, lane - 12, 3, 24);
    }
  }
}

await init();
$("load").onclick = loadConfig;
$("run").onclick = run;
$("compare").onclick = compare;
$("delay").oninput = collisions;
loadConfig();
collisions();
