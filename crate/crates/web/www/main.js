// Demo page wiring: reads parameters from the controls, calls the wasm
// exports, and draws the returned buffers. No framework, no build step
// beyond wasm-pack.

import init, { compose_hybrid, degrade_audio, analyze_audio } from "./pkg/spoofkit_web.js";

const $ = (id) => document.getElementById(id);
const status = $("status");

const KIND_COLORS = ["#3b6ea5", "#b48ead", "#a54242"]; // human, cloned, generated
const CLASS_NAMES = ["human", "cloned", "generated", "hybrid"];

let audioCtx = null;
function playSamples(samples, sampleRate) {
  audioCtx = audioCtx || new AudioContext();
  const buffer = audioCtx.createBuffer(1, samples.length, sampleRate);
  buffer.copyToChannel(Float32Array.from(samples), 0);
  const source = audioCtx.createBufferSource();
  source.buffer = buffer;
  source.connect(audioCtx.destination);
  source.start();
}

function drawWave(ctx, samples, x0, y0, width, height, color) {
  const mid = y0 + height / 2;
  ctx.strokeStyle = "#2c313a";
  ctx.beginPath();
  ctx.moveTo(x0, mid);
  ctx.lineTo(x0 + width, mid);
  ctx.stroke();
  ctx.strokeStyle = color;
  ctx.beginPath();
  const step = samples.length / width;
  for (let px = 0; px < width; px++) {
    let lo = 1.0, hi = -1.0;
    const start = Math.floor(px * step);
    const end = Math.min(samples.length, Math.ceil((px + 1) * step) + 1);
    for (let i = start; i < end; i++) {
      lo = Math.min(lo, samples[i]);
      hi = Math.max(hi, samples[i]);
    }
    ctx.moveTo(x0 + px + 0.5, mid - hi * (height / 2) * 0.95);
    ctx.lineTo(x0 + px + 0.5, mid - lo * (height / 2) * 0.95);
  }
  ctx.stroke();
}

// --- compose panel ---------------------------------------------------------

function renderCompose() {
  const seconds = parseFloat($("compose-seconds").value);
  const fade = parseFloat($("compose-fade").value);
  $("compose-seconds-v").textContent = seconds.toFixed(1) + " s";
  $("compose-fade-v").textContent = fade.toFixed(0) + " ms";
  const out = compose_hybrid(
    $("compose-pattern").value,
    $("compose-mix").value,
    seconds,
    fade,
    parseInt($("compose-seed").value, 10) >>> 0,
  );
  const canvas = $("compose-wave");
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);

  const samples = out.samples;
  const bounds = out.boundaries; // (kind, start, end) triplets
  const toX = (s) => (s / samples.length) * canvas.width;
  for (let i = 0; i < bounds.length; i += 3) {
    ctx.fillStyle = KIND_COLORS[bounds[i]] + "26";
    ctx.fillRect(toX(bounds[i + 1]), 0, toX(bounds[i + 2]) - toX(bounds[i + 1]), canvas.height);
  }
  // fade overlaps, where adjacent segments share samples
  ctx.fillStyle = "#ebcb8b40";
  for (let i = 3; i < bounds.length; i += 3) {
    const overlapStart = bounds[i + 1];
    const overlapEnd = bounds[i - 1];
    if (overlapEnd > overlapStart) {
      ctx.fillRect(toX(overlapStart), 0, Math.max(1, toX(overlapEnd) - toX(overlapStart)), canvas.height);
    }
  }
  drawWave(ctx, samples, 0, 0, canvas.width, canvas.height, "#d8dee9");
  $("compose-play").onclick = () => playSamples(samples, out.sample_rate);
}

// --- degrade panel ---------------------------------------------------------

function renderDegrade() {
  const snr = parseFloat($("degrade-snr").value);
  $("degrade-snr-v").textContent = snr.toFixed(0) + " dB";
  const out = degrade_audio(
    parseInt($("degrade-class").value, 10),
    1.0,
    snr,
    parseFloat($("degrade-lowpass").value),
    parseInt($("degrade-codec").value, 10),
    parseInt($("degrade-seed").value, 10) >>> 0,
  );
  $("degrade-measured").textContent = Number.isFinite(out.measured_snr_db)
    ? out.measured_snr_db.toFixed(2) + " dB"
    : "inf";
  const canvas = $("degrade-wave");
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const half = canvas.height / 2;
  ctx.fillStyle = "#8b93a3";
  ctx.font = "12px ui-monospace";
  ctx.fillText("clean", 8, 14);
  ctx.fillText(out.clipped ? "degraded (peak-limited)" : "degraded", 8, half + 14);
  drawWave(ctx, out.input, 0, 0, canvas.width, half - 2, "#a3be8c");
  drawWave(ctx, out.output, 0, half + 2, canvas.width, half - 2, "#bf616a");
  $("degrade-play-in").onclick = () => playSamples(out.input, out.sample_rate);
  $("degrade-play-out").onclick = () => playSamples(out.output, out.sample_rate);
}

// --- analyze panel ---------------------------------------------------------

// simple blue -> yellow heat ramp
function heat(t) {
  const r = Math.round(255 * Math.min(1, Math.max(0, 1.6 * t - 0.2)));
  const g = Math.round(255 * Math.min(1, Math.max(0, 1.4 * t)));
  const b = Math.round(255 * Math.min(1, Math.max(0, 0.9 - t)));
  return [r, g, b];
}

function renderAnalyze() {
  const seconds = parseFloat($("analyze-seconds").value);
  $("analyze-seconds-v").textContent = seconds.toFixed(1) + " s";
  const view = analyze_audio(
    parseInt($("analyze-class").value, 10),
    seconds,
    parseInt($("analyze-seed").value, 10) >>> 0,
  );
  const canvas = $("analyze-spec");
  const ctx = canvas.getContext("2d");
  const bins = view.mel_bins;
  const frames = view.frames;
  const values = view.values;
  const span = view.max - view.min || 1;

  const image = ctx.createImageData(frames, bins);
  for (let b = 0; b < bins; b++) {
    for (let f = 0; f < frames; f++) {
      const t = (values[b * frames + f] - view.min) / span;
      const [r, g, bl] = heat(t);
      // draw mel bin 0 at the bottom
      const o = ((bins - 1 - b) * frames + f) * 4;
      image.data[o] = r;
      image.data[o + 1] = g;
      image.data[o + 2] = bl;
      image.data[o + 3] = 255;
    }
  }
  const off = new OffscreenCanvas(frames, bins);
  off.getContext("2d").putImageData(image, 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.drawImage(off, 0, 0, canvas.width, canvas.height);

  const bars = $("analyze-bars");
  bars.innerHTML = "";
  const probs = view.probs;
  for (let k = 0; k < probs.length; k++) {
    const name = document.createElement("span");
    name.textContent = CLASS_NAMES[k] ?? `class ${k}`;
    const track = document.createElement("div");
    const bar = document.createElement("div");
    bar.className = "bar";
    bar.style.width = (100 * probs[k]).toFixed(1) + "%";
    track.appendChild(bar);
    const value = document.createElement("span");
    value.textContent = probs[k].toFixed(3);
    bars.append(name, track, value);
  }
}

// --- wiring ----------------------------------------------------------------

function guard(fn) {
  return () => {
    try {
      status.textContent = "";
      fn();
    } catch (e) {
      status.textContent = "error: " + e;
    }
  };
}

async function main() {
  await init();
  const bind = (ids, handler) => {
    for (const id of ids) $(id).addEventListener("input", guard(handler));
    guard(handler)();
  };
  bind(["compose-pattern", "compose-mix", "compose-seconds", "compose-fade", "compose-seed"], renderCompose);
  bind(["degrade-class", "degrade-snr", "degrade-lowpass", "degrade-codec", "degrade-seed"], renderDegrade);
  bind(["analyze-class", "analyze-seconds", "analyze-seed"], renderAnalyze);
}

main().catch((e) => (status.textContent = "failed to load wasm module: " + e));
