import init, { explain, alpha_sweep, rejection_curves } from "./pkg/rauq_wasm_demo.js";

const COLORS = { rauq: "#1f77b4", msp: "#d62728", perplexity: "#7f7f7f", oracle: "#2ca02c", random: "#bbbbbb" };
const PAD = { left: 48, right: 110, top: 14, bottom: 30 };

const $ = (id) => document.getElementById(id);
const controls = ["n", "seed", "signal", "alpha", "index"].map($);

function params() {
  return {
    n: Number($("n").value),
    seed: Number($("seed").value) >>> 0,
    signal: Number($("signal").value),
    alpha: Number($("alpha").value),
    index: Number($("index").value),
  };
}

function frame(canvas, xMax, yMin, yMax, xLabel) {
  const ctx = canvas.getContext("2d");
  const w = canvas.width - PAD.left - PAD.right;
  const h = canvas.height - PAD.top - PAD.bottom;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.font = "12px system-ui, sans-serif";
  ctx.strokeStyle = "#999";
  ctx.fillStyle = "#444";
  ctx.strokeRect(PAD.left, PAD.top, w, h);
  for (let i = 0; i <= 4; i++) {
    const v = yMin + ((yMax - yMin) * i) / 4;
    const y = PAD.top + h - (h * i) / 4;
    ctx.fillText(v.toFixed(2), 6, y + 4);
  }
  ctx.fillText(xLabel, PAD.left + w / 2 - 20, canvas.height - 8);
  const x = (v) => PAD.left + (w * v) / xMax;
  const y = (v) => PAD.top + h - (h * (v - yMin)) / (yMax - yMin);
  return { ctx, x, y, right: PAD.left + w };
}

function line(plot, xs, ys, color, label, dashed = false) {
  const { ctx, x, y, right } = plot;
  ctx.beginPath();
  ctx.setLineDash(dashed ? [5, 4] : []);
  ctx.strokeStyle = color;
  ctx.lineWidth = 2;
  xs.forEach((v, i) => (i === 0 ? ctx.moveTo(x(v), y(ys[i])) : ctx.lineTo(x(v), y(ys[i]))));
  ctx.stroke();
  ctx.setLineDash([]);
  ctx.fillStyle = color;
  ctx.fillText(label, right + 8, y(ys[ys.length - 1]) + 4);
}

function drawTrace(view) {
  const layer = view.layers[0];
  const tokens = layer.tokens;
  const plot = frame($("trace"), tokens.length - 1 || 1, 0, 1, "token position");
  const idx = tokens.map((_, i) => i);
  line(plot, idx, tokens.map((t) => t.prob), COLORS.msp, "probability");
  const attIdx = idx.slice(1);
  if (attIdx.length) line(plot, attIdx, tokens.slice(1).map((t) => t.attention), COLORS.oracle, "attention", true);
  line(plot, idx, tokens.map((t) => t.confidence), COLORS.rauq, "confidence");

  $("trace-summary").textContent =
    `${view.id}: quality ${view.quality.toFixed(3)}, uncertainty ${view.uncertainty.toFixed(4)} ` +
    `(perplexity ${view.perplexity.toFixed(4)}) at α = ${view.alpha}`;
  const rows = view.layers.map(
    (l) =>
      `<tr><td>layer ${l.layer}</td><td>selected head ${l.head}</td><td>designated ${l.designated_head}</td>` +
      `<td>head means ${l.head_means.map((m) => m.toFixed(3)).join(" / ")}</td>` +
      `<td>layer uncertainty ${l.uncertainty.toFixed(4)}</td></tr>`
  );
  $("heads").innerHTML = rows.join("");
}

function drawSweep(sweep) {
  const all = [...sweep.rauq, sweep.msp, sweep.perplexity];
  const yMin = Math.min(0, ...all);
  const plot = frame($("sweep"), 1, yMin, 1, "α");
  line(plot, sweep.alphas, sweep.rauq, COLORS.rauq, "rauq");
  line(plot, [0, 1], [sweep.msp, sweep.msp], COLORS.msp, `msp ${sweep.msp.toFixed(3)}`, true);
  line(plot, [0, 1], [sweep.perplexity, sweep.perplexity], COLORS.perplexity, `perplexity ${sweep.perplexity.toFixed(3)}`, true);
  const { ctx, x, y } = plot;
  const a = params().alpha;
  const i = sweep.alphas.findIndex((v) => Math.abs(v - a) < 1e-9);
  if (i >= 0) {
    ctx.fillStyle = COLORS.rauq;
    ctx.beginPath();
    ctx.arc(x(a), y(sweep.rauq[i]), 4, 0, 2 * Math.PI);
    ctx.fill();
  }
}

function drawCurves(curves) {
  const all = curves.flatMap((c) => c.mean_quality);
  const xMax = curves[0].fractions[curves[0].fractions.length - 1] || 1;
  const plot = frame($("curves"), xMax, Math.min(...all), Math.max(...all), "rejected fraction");
  const base = curves[0].mean_quality[0];
  line(plot, [0, xMax], [base, base], COLORS.random, "random", true);
  for (const c of curves) {
    const label = c.prr === null ? c.method : `${c.method} PRR ${c.prr.toFixed(3)}`;
    line(plot, c.fractions, c.mean_quality, COLORS[c.method], label);
  }
}

let sweepKey = "";
let lastSweep = null;

function update() {
  const p = params();
  $("index").max = String(p.n - 1);
  if (p.index > p.n - 1) $("index").value = String(p.n - 1);
  for (const c of controls) {
    const out = document.querySelector(`output[for="${c.id}"]`);
    if (out) out.textContent = c.value;
  }
  try {
    $("error").textContent = "";
    const q = params();
    drawTrace(JSON.parse(explain(q.n, q.seed, q.signal, q.index, q.alpha)));
    // The sweep does not depend on α or the trace index; only redo it when the set changes.
    const key = `${q.n}/${q.seed}/${q.signal}`;
    if (key !== sweepKey) {
      lastSweep = JSON.parse(alpha_sweep(q.n, q.seed, q.signal));
      sweepKey = key;
    }
    drawSweep(lastSweep);
    drawCurves(JSON.parse(rejection_curves(q.n, q.seed, q.signal, q.alpha)));
  } catch (e) {
    $("error").textContent = String(e);
  }
}

await init();
controls.forEach((c) => c.addEventListener("input", update));
update();
