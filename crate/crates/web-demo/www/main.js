import init, { toy_curve, dataset_preview, gradnorm_histogram } from "./pkg/pgd_web_demo.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function drawPreview() {
  const p = dataset_preview(num("pv-rho"), BigInt(num("pv-seed")), 12, 3);
  const canvas = $("pv-canvas");
  canvas.width = p.width;
  canvas.height = p.height;
  const img = new ImageData(new Uint8ClampedArray(p.rgba()), p.width, p.height);
  canvas.getContext("2d").putImageData(img, 0, 0);
  p.free();
}

function drawHistogram() {
  $("h-out").textContent = "training...";
  // Let the status text paint before the synchronous wasm call.
  setTimeout(() => {
    let s;
    try {
      s = JSON.parse(gradnorm_histogram(num("h-rho"), 0n, num("h-n"), num("h-epochs"), num("h-alpha")));
    } catch (e) {
      $("h-out").textContent = String(e);
      return;
    }
    const c = $("h-canvas");
    const g = c.getContext("2d");
    g.clearRect(0, 0, c.width, c.height);
    const bins = s.aligned.length;
    const top = Math.log10(1 + Math.max(...s.aligned, ...s.conflicting));
    const slot = (c.width - 40) / bins;
    const base = c.height - 24;
    g.font = "12px sans-serif";
    for (let i = 0; i < bins; i++) {
      const x = 30 + i * slot;
      const bar = (v, dx, colour) => {
        const h = top > 0 ? (Math.log10(1 + v) / top) * (base - 10) : 0;
        g.fillStyle = colour;
        g.fillRect(x + dx, base - h, slot / 2 - 4, h);
        g.fillStyle = "#222";
        if (v > 0) g.fillText(String(v), x + dx, base - h - 3);
      };
      bar(s.aligned[i], 2, "#4a7bd0");
      bar(s.conflicting[i], slot / 2, "#e0443a");
      g.fillStyle = "#222";
      g.fillText(s.edges[i].toFixed(1), x, c.height - 6);
    }
    $("h-out").textContent =
      `AUROC (conflicting vs aligned): ${s.auroc.toFixed(4)}\n` +
      `mean normalized norm: aligned ${s.mean_aligned.toFixed(4)}, conflicting ${s.mean_conflicting.toFixed(4)}\n` +
      `biased model accuracy on the unbiased test split: ${(100 * s.biased_test_accuracy).toFixed(2)}%`;
  }, 20);
}

function drawToy() {
  let s;
  try {
    s = JSON.parse(toy_curve(num("t-m"), num("t-s"), num("t-a"), 399));
  } catch (e) {
    $("t-out").textContent = String(e);
    return;
  }
  const c = $("t-canvas");
  const g = c.getContext("2d");
  g.clearRect(0, 0, c.width, c.height);
  const ys = s.trace_inverse.map(Math.log10);
  const lo = Math.min(...ys), hi = Math.max(...ys);
  const px = (t) => 30 + t * (c.width - 50);
  const py = (v) => c.height - 20 - ((v - lo) / (hi - lo || 1)) * (c.height - 40);
  g.strokeStyle = "#333";
  g.beginPath();
  s.mass.forEach((t, i) => (i ? g.lineTo(px(t), py(ys[i])) : g.moveTo(px(t), py(ys[i]))));
  g.stroke();
  const uniform = num("t-m") / (num("t-m") + num("t-s"));
  const marker = (t, colour, label) => {
    g.strokeStyle = colour;
    g.beginPath();
    g.moveTo(px(t), 10);
    g.lineTo(px(t), c.height - 20);
    g.stroke();
    g.fillStyle = colour;
    g.fillText(label, px(t) + 4, 22);
  };
  g.font = "12px sans-serif";
  marker(num("t-m") * s.h_major, "#e0443a", "gradient-norm h*");
  marker(uniform, "#4a7bd0", "uniform");
  g.fillStyle = "#222";
  g.fillText("0", px(0), c.height - 4);
  g.fillText("1", px(1), c.height - 4);
  $("t-out").textContent =
    `theta_U = ${s.theta_uniform.toPrecision(6)}\n` +
    `h*_M = ${s.h_major}  h*_m = ${s.h_minor}  |M| h*_M = ${(num("t-m") * s.h_major).toPrecision(12)}`;
}

await init();
$("pv-run").onclick = drawPreview;
$("h-run").onclick = drawHistogram;
$("t-run").onclick = drawToy;
drawPreview();
drawToy();
