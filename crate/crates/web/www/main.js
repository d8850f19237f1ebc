import init, { activation_curve, feature_maps, param_counts, test_pattern } from "./pkg/reborn_web.js";

const SIZE = 32;
const CURVES = [
  ["relu", "#222"], ["leaky:0.1", "#1f77b4"], ["prelu", "#17becf"], ["rrelu", "#9467bd"],
  ["elu", "#2ca02c"], ["selu", "#d62728"], ["celu:0.5", "#ff7f0e"], ["crelu", "#8c564b"],
];
const COUNTED = ["relu", "crelu", "reborn", "reborn-nc"];

const $ = (id) => document.getElementById(id);

function drawCurves() {
  const canvas = $("curves");
  const g = canvas.getContext("2d");
  const [lo, hi, ylo, yhi, n] = [-3, 3, -2, 3, 241];
  const sx = (x) => ((x - lo) / (hi - lo)) * canvas.width;
  const sy = (y) => canvas.height - ((y - ylo) / (yhi - ylo)) * canvas.height;
  g.clearRect(0, 0, canvas.width, canvas.height);
  g.strokeStyle = "#ccc";
  g.beginPath();
  g.moveTo(sx(lo), sy(0)); g.lineTo(sx(hi), sy(0));
  g.moveTo(sx(0), sy(ylo)); g.lineTo(sx(0), sy(yhi));
  g.stroke();
  for (const [spec, colour] of CURVES) {
    if (!$(`pick-${spec}`).checked) continue;
    const ys = activation_curve(spec, lo, hi, n);
    g.strokeStyle = colour;
    g.lineWidth = 2;
    // crelu returns its two output channels back to back
    for (let off = 0; off < ys.length; off += n) {
      g.setLineDash(off ? [5, 4] : []);
      g.beginPath();
      for (let i = 0; i < n; i++) {
        const x = lo + ((hi - lo) * i) / (n - 1);
        i ? g.lineTo(sx(x), sy(ys[off + i])) : g.moveTo(sx(x), sy(ys[off + i]));
      }
      g.stroke();
    }
    g.setLineDash([]);
  }
}

function setupCurves() {
  const box = $("curve-picks");
  for (const [spec, colour] of CURVES) {
    const label = document.createElement("label");
    label.style.color = colour;
    label.innerHTML = `<input type="checkbox" id="pick-${spec}" checked> ${spec}`;
    box.appendChild(label);
  }
  box.addEventListener("change", drawCurves);
  drawCurves();
}

let inputRgb = null;

function showInput() {
  const g = $("map-input").getContext("2d");
  const img = g.createImageData(SIZE, SIZE);
  for (let i = 0; i < SIZE * SIZE; i++) {
    img.data.set([inputRgb[3 * i], inputRgb[3 * i + 1], inputRgb[3 * i + 2], 255], 4 * i);
  }
  g.putImageData(img, 0, 0);
}

function drawMaps() {
  const act = $("map-act").value;
  const seed = Math.max(0, parseInt($("map-seed").value, 10) || 0);
  const t0 = performance.now();
  const gray = feature_maps(act, inputRgb, SIZE, seed);
  const plane = SIZE * SIZE;
  const grid = $("maps");
  grid.replaceChildren();
  for (let c = 0; c < gray.length / plane; c++) {
    const canvas = document.createElement("canvas");
    canvas.width = canvas.height = SIZE;
    const g = canvas.getContext("2d");
    const img = g.createImageData(SIZE, SIZE);
    for (let i = 0; i < plane; i++) {
      const v = gray[c * plane + i];
      img.data.set([v, v, v, 255], 4 * i);
    }
    g.putImageData(img, 0, 0);
    canvas.title = `channel ${c}`;
    grid.appendChild(canvas);
  }
  $("map-note").textContent = `${gray.length / plane} maps in ${(performance.now() - t0).toFixed(0)} ms`;
}

function loadFile(file) {
  const url = URL.createObjectURL(file);
  const img = new Image();
  img.onload = () => {
    const g = $("map-input").getContext("2d");
    g.drawImage(img, 0, 0, SIZE, SIZE);
    const rgba = g.getImageData(0, 0, SIZE, SIZE).data;
    inputRgb = new Uint8Array(3 * SIZE * SIZE);
    for (let i = 0; i < SIZE * SIZE; i++) inputRgb.set(rgba.subarray(4 * i, 4 * i + 3), 3 * i);
    URL.revokeObjectURL(url);
    drawMaps();
  };
  img.src = url;
}

function setupMaps() {
  inputRgb = test_pattern(SIZE);
  showInput();
  $("map-act").addEventListener("change", drawMaps);
  $("map-seed").addEventListener("change", drawMaps);
  $("map-file").addEventListener("change", (e) => e.target.files[0] && loadFile(e.target.files[0]));
  $("map-pattern").addEventListener("click", () => { inputRgb = test_pattern(SIZE); showInput(); drawMaps(); });
  drawMaps();
}

function drawCounts() {
  const width = parseFloat($("width").value);
  $("width-val").textContent = width;
  const body = $("counts").tBodies[0];
  body.replaceChildren();
  for (const act of COUNTED) {
    const [all, conv] = param_counts(act, width);
    const row = body.insertRow();
    row.insertCell().textContent = act;
    row.insertCell().textContent = all.toLocaleString();
    row.insertCell().textContent = conv.toLocaleString();
  }
}

async function main() {
  try {
    await init();
    setupCurves();
    setupMaps();
    $("width").addEventListener("input", drawCounts);
    drawCounts();
    $("status").textContent = "";
  } catch (e) {
    $("status").textContent = `failed: ${e}`;
    $("status").className = "err";
  }
}

main();
