/**
 * Browser entry point: wires transports, the view model, the scene
 * renderer, and the command form to the DOM. All logic lives in the
 * pure modules; this file only moves data between them and the page.
 */

import { ServiceClient, RejectedCommand } from "./client.js";
import {
  FormState, TermView, initialForm, clampSpeed, validate, toCommandBody,
  rejectForm, clearError,
} from "./controls.js";
import { Scene, SceneItem, buildScene } from "./scene.js";
import {
  ViewModel, initialViewModel, applyMessage, tickStaleness,
  commandAccepted, commandRejected, connectionClosed,
} from "./viewmodel.js";

/** Console-side catalog of the reward presets the service exposes, so
 * the weight editor can label terms without an extra endpoint. */
const PRESET_TERMS: Record<string, string[]> = {
  forest: ["collision-free bonus", "heading alignment"],
  city_analogue: ["collision-free bonus", "speed tracking",
                  "path following", "heading alignment",
                  "steering effort"],
  indoor_analogue: ["gated heading + beacon", "action effort"],
};

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

// ---------------------------------------------------------------------
// canvas adapter: draws a Scene verbatim

function drawScene(canvas: HTMLCanvasElement, scene: Scene): void {
  const ctx = canvas.getContext("2d");
  if (ctx === null) {
    return;
  }
  ctx.setTransform(1, 0, 0, 1, 0, 0);
  ctx.fillStyle = "#11141a";
  ctx.fillRect(0, 0, canvas.width, canvas.height);
  if (scene.viewBox === null) {
    return;
  }
  const [xmin, ymin, xmax, ymax] = scene.viewBox;
  const pad = 1.0;
  const sx = canvas.width / (xmax - xmin + 2 * pad);
  const sy = canvas.height / (ymax - ymin + 2 * pad);
  const s = Math.min(sx, sy);
  // world y grows up, canvas y grows down
  ctx.setTransform(s, 0, 0, -s,
                   -(xmin - pad) * s,
                   canvas.height + (ymin - pad) * s);
  for (const item of scene.world) {
    drawItem(ctx, item, s);
  }
}

function drawItem(ctx: CanvasRenderingContext2D, item: SceneItem,
                  scale: number): void {
  if (item.kind === "polyline") {
    if (item.points.length < 2) {
      return;
    }
    ctx.strokeStyle = item.color;
    ctx.lineWidth = item.width / scale;
    ctx.setLineDash(item.dashed ? [4 / scale, 3 / scale] : []);
    ctx.beginPath();
    ctx.moveTo(item.points[0][0], item.points[0][1]);
    for (const [x, y] of item.points.slice(1)) {
      ctx.lineTo(x, y);
    }
    ctx.stroke();
    ctx.setLineDash([]);
  } else if (item.kind === "circle") {
    ctx.beginPath();
    ctx.arc(item.x, item.y, item.r, 0, 2 * Math.PI);
    if (item.fill) {
      ctx.fillStyle = item.color;
      ctx.fill();
    } else {
      ctx.strokeStyle = item.color;
      ctx.lineWidth = 1.5 / scale;
      ctx.stroke();
    }
  } else if (item.kind === "marker") {
    const { x, y, heading, size } = item;
    ctx.fillStyle = item.color;
    ctx.beginPath();
    ctx.moveTo(x + size * Math.cos(heading),
               y + size * Math.sin(heading));
    ctx.lineTo(x + 0.5 * size * Math.cos(heading + 2.5),
               y + 0.5 * size * Math.sin(heading + 2.5));
    ctx.lineTo(x + 0.5 * size * Math.cos(heading - 2.5),
               y + 0.5 * size * Math.sin(heading - 2.5));
    ctx.closePath();
    ctx.fill();
  }
}

function renderBars(host: HTMLElement, scene: Scene): void {
  host.replaceChildren();
  for (const bar of scene.collisionBars) {
    const div = document.createElement("div");
    div.className = "coll-bar";
    const fill = document.createElement("div");
    fill.className = "coll-fill";
    fill.style.height = `${Math.round(bar.value * 100)}%`;
    fill.style.background = bar.color;
    div.appendChild(fill);
    div.title = `step ${bar.index}: p=${bar.value.toFixed(2)}`;
    host.appendChild(div);
  }
}

function renderBadges(host: HTMLElement, scene: Scene): void {
  host.replaceChildren();
  for (const badge of scene.badges) {
    const span = document.createElement("span");
    span.className = `badge badge-${badge.tone}`;
    span.textContent = badge.text;
    span.dataset.id = badge.id;
    host.appendChild(span);
  }
}

// ---------------------------------------------------------------------
// command form

function renderForm(form: FormState, host: HTMLElement,
                    onChange: (f: FormState) => void): void {
  host.replaceChildren();
  const heading = document.createElement("label");
  heading.textContent = `heading ${form.headingDegrees}°`;
  const dial = document.createElement("input");
  dial.type = "range";
  dial.min = "-180";
  dial.max = "180";
  dial.step = "5";
  dial.value = String(form.headingDegrees);
  dial.oninput = () => onChange(
    { ...form, headingDegrees: Number(dial.value) });
  heading.appendChild(dial);
  host.appendChild(heading);

  const speed = document.createElement("label");
  speed.textContent = `speed ${form.goalSpeed.toFixed(2)} m/s`;
  const slider = document.createElement("input");
  slider.type = "range";
  slider.min = "0";
  slider.max = String(form.vMax);
  slider.step = "0.05";
  slider.value = String(form.goalSpeed);
  slider.oninput = () => onChange(
    { ...form, goalSpeed: clampSpeed(form, Number(slider.value)) });
  speed.appendChild(slider);
  host.appendChild(speed);

  for (const term of form.terms) {
    const row = document.createElement("div");
    row.className = "term-row";
    const toggle = document.createElement("input");
    toggle.type = "checkbox";
    toggle.checked = term.enabled;
    toggle.onchange = () => onChange(updateTerm(
      form, term.index, { enabled: toggle.checked }));
    const name = document.createElement("span");
    name.textContent = term.label;
    const weight = document.createElement("input");
    weight.type = "number";
    weight.step = "0.05";
    weight.value = String(term.weight);
    weight.onchange = () => onChange(updateTerm(
      form, term.index, { weight: Number(weight.value) }));
    row.append(toggle, name, weight);
    host.appendChild(row);
  }

  if (form.lastError !== null) {
    const err = document.createElement("div");
    err.className = "form-error";
    err.textContent = form.lastError;
    host.appendChild(err);
  }
}

function updateTerm(form: FormState, index: number,
                    patch: Partial<TermView>): FormState {
  return {
    ...form,
    terms: form.terms.map(
      (t) => t.index === index ? { ...t, ...patch } : t),
  };
}

// ---------------------------------------------------------------------
// app

async function start(): Promise<void> {
  const base = window.location.origin;
  const client = new ServiceClient(
    base, (url, init) => fetch(url, init),
    (url) => {
      const ws = new WebSocket(url);
      const like = {
        onmessage: null as ((ev: { data: string }) => void) | null,
        onclose: null as (() => void) | null,
        onerror: null as (() => void) | null,
        close: () => ws.close(),
      };
      ws.onmessage = (ev) => like.onmessage?.({ data: String(ev.data) });
      ws.onclose = () => like.onclose?.();
      ws.onerror = () => like.onerror?.();
      return like;
    });

  const params = new URLSearchParams(window.location.search);
  const preset = params.get("spec") ?? "indoor_analogue";
  const labels = PRESET_TERMS[preset] ?? [];
  const body: Record<string, unknown> = { spec: preset };
  const model = params.get("model");
  if (model !== null) {
    body.model = model;
  }
  const worldKind = params.get("world");
  if (worldKind !== null) {
    body.world = { kind: worldKind };
  }

  let vm: ViewModel = initialViewModel();
  let form: FormState = initialForm(
    2.0, labels.map((label, index) =>
      ({ index, label, weight: 1.0, enabled: true })));

  const canvas = el<HTMLCanvasElement>("world-canvas");
  const bars = el<HTMLElement>("collision-bars");
  const badges = el<HTMLElement>("status-badges");
  const formHost = el<HTMLElement>("command-form");

  const render = () => {
    const scene = buildScene(vm);
    drawScene(canvas, scene);
    renderBars(bars, scene);
    renderBadges(badges, scene);
  };
  const setForm = (f: FormState) => {
    form = f;
    renderForm(form, formHost, setForm);
  };
  setForm(form);

  let info;
  try {
    info = await client.createSession(body);
  } catch (exc) {
    setForm(rejectForm(form, String(exc)));
    return;
  }
  const sid = info.session;

  client.openStream(sid, {
    onMessage: (raw) => {
      vm = applyMessage(vm, raw, Date.now());
      render();
    },
    onClosed: () => {
      vm = connectionClosed(vm);
      render();
    },
  });
  window.setInterval(() => {
    vm = tickStaleness(vm, Date.now());
    render();
  }, 250);

  el<HTMLButtonElement>("send-goal").onclick = async () => {
    const problem = validate(form);
    if (problem !== null) {
      setForm(rejectForm(form, problem));
      return;
    }
    setForm(clearError(form));
    try {
      const ack = await client.sendGoal(sid, toCommandBody(form));
      vm = commandAccepted(vm, ack.effective_step, ack.spec_hash);
    } catch (exc) {
      vm = commandRejected(vm);
      const reason = exc instanceof RejectedCommand
        ? exc.reason : String(exc);
      setForm(rejectForm(form, reason));
    }
    render();
  };

  let paused = false;
  el<HTMLButtonElement>("pause").onclick = async () => {
    paused = !paused;
    el<HTMLButtonElement>("pause").textContent =
      paused ? "resume" : "pause";
    await client.setPaused(sid, paused);
  };
  el<HTMLButtonElement>("reset").onclick = () => client.reset(sid);
}

start();
