// Built with: wasm-pack build crates/wasm-demo --target web --out-dir www/pkg
import init, { kernel_trace, synthetic_features, split_search } from "./pkg/calfrocket_wasm.js";

const $ = (id) => document.getElementById(id);

function plot(canvas, series, { colors = ["#1565c0"], zero = false } = {}) {
  const ctx = canvas.getContext("2d");
  canvas.width = canvas.clientWidth * devicePixelRatio;
  canvas.height = canvas.clientHeight * devicePixelRatio;
  const all = series.flat();
  const lo = Math.min(...all, zero ? 0 : Infinity);
  const hi = Math.max(...all, zero ? 0 : -Infinity);
  const span = hi - lo || 1;
  const y = (v) => canvas.height - ((v - lo) / span) * (canvas.height - 8) - 4;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  if (zero) {
    ctx.setLineDash([6, 4]);
    ctx.strokeStyle = "#999";
    ctx.beginPath();
    ctx.moveTo(0, y(0));
    ctx.lineTo(canvas.width, y(0));
    ctx.stroke();
    ctx.setLineDash([]);
  }
  series.forEach((s, i) => {
    ctx.strokeStyle = colors[i % colors.length];
    ctx.beginPath();
    s.forEach((v, t) => {
      const x = (t / Math.max(s.length - 1, 1)) * canvas.width;
      t ? ctx.lineTo(x, y(v)) : ctx.moveTo(x, y(v));
    });
    ctx.stroke();
  });
}

function heat(canvas, rows) {
  const ctx = canvas.getContext("2d");
  canvas.width = canvas.clientWidth * devicePixelRatio;
  canvas.height = canvas.clientHeight * devicePixelRatio;
  const h = canvas.height / rows.length;
  rows.forEach((row, r) => {
    const w = canvas.width / row.length;
    row.forEach((v, c) => {
      const g = Math.round(255 * (1 - v));
      ctx.fillStyle = `rgb(${g},${g},255)`;
      ctx.fillRect(c * w, r * h, Math.ceil(w), Math.ceil(h));
    });
  });
}

function guard(out, f) {
  try {
    out.classList.remove("err");
    f();
  } catch (e) {
    out.classList.add("err");
    out.textContent = String(e);
  }
}

// ---- kernel
const series = Array.from({ length: 150 }, (_, t) => Math.sin(t / 6) + 0.3 * Math.sin(t * 1.7) + 0.1 * Math.cos(t * 0.37));
const weights = [-1, -1, 2, -1, 2, -1, -1, 2, -1];

function updateKernel() {
  const dilation = Number($("k-dilation").value);
  const bias = Number($("k-bias").value);
  $("k-dilation-v").textContent = dilation;
  $("k-bias-v").textContent = bias.toFixed(2);
  guard($("k-result"), () => {
    const r = JSON.parse(kernel_trace(Float64Array.from(series), Float64Array.from(weights), bias, dilation, $("k-padding").checked));
    plot($("k-series"), [series]);
    plot($("k-output"), [r.output], { colors: ["#c62828"], zero: true });
    $("k-result").textContent = r.degenerate
      ? `receptive field ${r.receptive_field} does not fit: features (0, 0)`
      : `receptive field ${r.receptive_field}, padding ${r.padding}, ${r.output.length} outputs\nmax ${r.max.toFixed(4)}   PPV ${r.ppv.toFixed(4)}`;
  });
}

// ---- features
function updateFeatures() {
  guard($("f-result"), () => {
    const r = JSON.parse(synthetic_features($("f-behaviour").value, BigInt($("f-seed").value), Number($("f-count").value)));
    plot($("f-window"), r.window.slice(0, 3), { colors: ["#1565c0", "#2e7d32", "#ef6c00"] });
    heat($("f-features"), r.features);
    const means = r.features.map((f, i) => `${r.channels[i].padEnd(10)} mean PPV ${(f.reduce((a, b) => a + b, 0) / f.length).toFixed(3)}`);
    $("f-result").textContent = `${r.label}: accX/accY/accZ after standardisation, then ${r.features[0].length} PPV features per channel (one row each)\n` + means.join("\n");
  });
}

// ---- split
const demoCounts = {};
["c01", "c02", "c03", "c04", "c05", "c06", "c07", "c08", "c09", "c10"].forEach((c, i) => {
  demoCounts[c] = { lying: 20 + ((i * 7) % 13), walking: 3 + ((i * 5) % 7), running: (i * 3) % 4, drinking_milk: 2 + (i % 3) };
});

function updateSplit() {
  guard($("s-result"), () => {
    const r = JSON.parse(split_search($("s-counts").value, Number($("s-fraction").value), Number($("s-target").value)));
    const ratios = Object.entries(r.ratios).map(([k, v]) => `  ${k.padEnd(14)} ${v.toFixed(4)}`).join("\n");
    $("s-result").textContent = `test calves: ${r.test_calves.join(", ")}\nmean deviation ${r.deviation.toFixed(6)}\nper-class test/train ratio:\n${ratios}`;
  });
}

await init();
$("s-counts").value = JSON.stringify(demoCounts, null, 1);
["k-dilation", "k-bias", "k-padding"].forEach((id) => $(id).addEventListener("input", updateKernel));
$("f-run").addEventListener("click", updateFeatures);
$("s-run").addEventListener("click", updateSplit);
updateKernel();
updateFeatures();
updateSplit();
