import init, { staircase, tongues, kam } from "./pkg/circlekam_web.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function report(id, text, isError = false) {
  const el = $(id);
  el.textContent = text;
  el.className = isError ? "out err" : "out";
}

function axes(ctx, w, h) {
  ctx.clearRect(0, 0, w, h);
  ctx.strokeStyle = "#ddd";
  ctx.strokeRect(0.5, 0.5, w - 1, h - 1);
}

function polyline(ctx, xs, ys, color) {
  ctx.strokeStyle = color;
  ctx.beginPath();
  xs.forEach((x, i) => (i ? ctx.lineTo(x, ys[i]) : ctx.moveTo(x, ys[i])));
  ctx.stroke();
}

function drawStaircase() {
  const count = num("st-count");
  const t0 = performance.now();
  let values;
  try {
    values = staircase(num("st-eps"), count, num("st-n"));
  } catch (e) {
    return report("st-out", e.message, true);
  }
  const c = $("st-canvas");
  const ctx = c.getContext("2d");
  axes(ctx, c.width, c.height);
  const xs = Array.from(values, (_, i) => (i / (count - 1)) * c.width);
  const ys = Array.from(values, (v) => c.height * (1 - v));
  polyline(ctx, xs, ys, "#1f5fa8");
  report("st-out", `${count} points in ${(performance.now() - t0).toFixed(0)} ms`);
}

function drawTongues() {
  const nw = num("tg-omega");
  const ne = num("tg-eps");
  let grid;
  try {
    grid = tongues(nw, ne, 0.95, num("tg-n"));
  } catch (e) {
    return report("tg-out", e.message, true);
  }
  const c = $("tg-canvas");
  const ctx = c.getContext("2d");
  axes(ctx, c.width, c.height);
  const cw = c.width / nw;
  const ch = c.height / ne;
  // cells whose rotation number sits on a small-denominator rational are locked
  const locked = (v) => {
    for (let q = 1; q <= 6; q++) {
      if (Math.abs(v * q - Math.round(v * q)) < 1e-3 * q) return q;
    }
    return 0;
  };
  for (let j = 0; j < ne; j++) {
    for (let i = 0; i < nw; i++) {
      const q = locked(grid[j * nw + i]);
      if (!q) continue;
      ctx.fillStyle = `hsl(${q * 55}, 60%, ${35 + q * 7}%)`;
      ctx.fillRect(i * cw, c.height - (j + 1) * ch, Math.ceil(cw), Math.ceil(ch));
    }
  }
  report("tg-out", "rows: ε from 0 (bottom) to 0.95 (top); colour = denominator of the locked ratio");
}

function runKam() {
  let result;
  try {
    result = JSON.parse(kam(num("km-mu"), num("km-eps"), num("km-mode"), 360));
  } catch (e) {
    return report("km-out", e.message, true);
  }
  const c = $("km-canvas");
  const ctx = c.getContext("2d");
  axes(ctx, c.width, c.height);
  const peak = Math.max(...result.h.map(Math.abs)) || 1;
  const xs = result.h.map((_, i) => (i / result.h.length) * c.width);
  const ys = result.h.map((v) => c.height / 2 - (v / peak) * (c.height / 2 - 10));
  polyline(ctx, xs, ys, "#a8321f");
  const lines = result.stages.map(
    (s, i) => `stage ${i}  K=${s.order}  residual ${s.residual_in.toExponential(2)} -> ${s.residual_out.toExponential(2)}`,
  );
  lines.push(`status ${result.status}, defect ${result.defect.toExponential(2)}, max |h| ${peak.toExponential(2)}`);
  report("km-out", lines.join("\n"));
}

await init();
$("st-run").onclick = drawStaircase;
$("tg-run").onclick = drawTongues;
$("km-run").onclick = runKam;
drawStaircase();
