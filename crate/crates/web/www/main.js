import init, { Scene, kernelProfile, shapeNames } from "./pkg/meshnet_web.js";

const $ = (id) => document.getElementById(id);
const view = $("view");
const ctx = view.getContext("2d");

let scene = null;
let tris = null;
let colors = null;
let yaw = 0.6;
let pitch = -0.4;

function rotate([x, y, z]) {
  const cy = Math.cos(yaw), sy = Math.sin(yaw);
  const cp = Math.cos(pitch), sp = Math.sin(pitch);
  const x1 = cy * x + sy * z, z1 = -sy * x + cy * z;
  return [x1, cp * y - sp * z1, sp * y + cp * z1];
}

function draw() {
  ctx.clearRect(0, 0, view.width, view.height);
  if (!tris) return;
  const n = tris.length / 9;
  const s = view.width * 0.42, ox = view.width / 2, oy = view.height / 2;
  const faces = [];
  for (let i = 0; i < n; i++) {
    const v = [0, 1, 2].map((k) => rotate([tris[9 * i + 3 * k], tris[9 * i + 3 * k + 1], tris[9 * i + 3 * k + 2]]));
    const e1 = v[1].map((c, d) => c - v[0][d]);
    const e2 = v[2].map((c, d) => c - v[0][d]);
    const nz = e1[0] * e2[1] - e1[1] * e2[0];
    const len = Math.hypot(e1[1] * e2[2] - e1[2] * e2[1], e1[2] * e2[0] - e1[0] * e2[2], nz) || 1;
    faces.push({ i, v, depth: v[0][2] + v[1][2] + v[2][2], light: 0.35 + 0.65 * Math.abs(nz / len) });
  }
  faces.sort((a, b) => a.depth - b.depth);
  for (const f of faces) {
    const c = colors ? [colors[3 * f.i], colors[3 * f.i + 1], colors[3 * f.i + 2]] : [200, 200, 200];
    ctx.fillStyle = `rgb(${c.map((x) => Math.round(x * f.light)).join(",")})`;
    ctx.beginPath();
    f.v.forEach(([x, y], k) => (k ? ctx.lineTo : ctx.moveTo).call(ctx, ox + s * x, oy - s * y));
    ctx.closePath();
    ctx.fill();
    ctx.strokeStyle = "rgba(0,0,0,0.15)";
    ctx.stroke();
  }
}

function drawProfile(sigma) {
  const c = $("profile"), g = c.getContext("2d");
  const ys = kernelProfile(sigma, 121);
  g.clearRect(0, 0, c.width, c.height);
  g.strokeStyle = "#ccc";
  g.strokeRect(0.5, 0.5, c.width - 1, c.height - 1);
  g.beginPath();
  ys.forEach((y, i) => {
    const px = 4 + (i / (ys.length - 1)) * (c.width - 8);
    const py = c.height - 6 - y * (c.height - 14);
    i ? g.lineTo(px, py) : g.moveTo(px, py);
  });
  g.strokeStyle = "#c03";
  g.lineWidth = 2;
  g.stroke();
  g.fillStyle = "#555";
  g.fillText("0", 4, c.height - 8);
  g.fillText("π", c.width - 12, c.height - 8);
}

function params() {
  return ["theta", "phi", "sigma"].map((k) => parseFloat($(k).value));
}

function refreshField() {
  if (!scene) return;
  const [theta, phi, sigma] = params();
  try {
    colors = scene.kernelField(theta, phi, sigma);
    const vals = scene.kernelValues(theta, phi, sigma);
    let lo = Infinity, hi = -Infinity;
    for (const v of vals) { lo = Math.min(lo, v); hi = Math.max(hi, v); }
    $("stats").textContent =
      `input faces   ${scene.inputFaces()}\n` +
      `after budget  ${scene.faceCount()}\n` +
      `field range   [${lo.toFixed(4)}, ${hi.toFixed(4)}]`;
    $("error").textContent = "";
  } catch (e) {
    $("error").textContent = String(e);
  }
  drawProfile(sigma);
  draw();
}

function rebuild() {
  try {
    scene?.free();
    scene = new Scene($("shape").value, parseInt($("budget").value, 10));
    tris = scene.triangles();
  } catch (e) {
    scene = null;
    tris = null;
    $("error").textContent = String(e);
  }
  refreshField();
}

function syncOutputs() {
  for (const k of ["budget", "theta", "phi", "sigma"]) $(`${k}-out`).textContent = $(k).value;
}

await init();
for (const name of shapeNames()) $("shape").add(new Option(name, name));
$("shape").addEventListener("change", rebuild);
$("budget").addEventListener("input", () => { syncOutputs(); rebuild(); });
for (const k of ["theta", "phi", "sigma"]) $(k).addEventListener("input", () => { syncOutputs(); refreshField(); });

let drag = null;
view.addEventListener("pointerdown", (e) => { drag = [e.clientX, e.clientY]; view.setPointerCapture(e.pointerId); });
view.addEventListener("pointerup", () => (drag = null));
view.addEventListener("pointermove", (e) => {
  if (!drag) return;
  yaw += (e.clientX - drag[0]) * 0.01;
  pitch = Math.max(-1.5, Math.min(1.5, pitch + (e.clientY - drag[1]) * 0.01));
  drag = [e.clientX, e.clientY];
  draw();
});

syncOutputs();
rebuild();
