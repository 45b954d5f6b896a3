// Browser entry: canvas rendering, keyboard capture, persona editor DOM,
// WebSocket transport (via the ws<->tcp bridge) with reconnect backoff.

import { backoffDelay } from "./input.js";
import { SkeletonRenderer, type DrawSurface } from "./render.js";
import { WebSocketTransport } from "./transport.js";
import { ViewerSession } from "./viewer.js";

function canvasSurface(canvas: HTMLCanvasElement): DrawSurface {
  const ctx = canvas.getContext("2d")!;
  return {
    get width() {
      return canvas.width;
    },
    get height() {
      return canvas.height;
    },
    clear() {
      ctx.fillStyle = "#101418";
      ctx.fillRect(0, 0, canvas.width, canvas.height);
      ctx.strokeStyle = "#9fd3ff";
      ctx.fillStyle = "#e8eef4";
      ctx.font = "13px monospace";
    },
    line(x1, y1, x2, y2, width) {
      ctx.lineWidth = width;
      ctx.beginPath();
      ctx.moveTo(x1, y1);
      ctx.lineTo(x2, y2);
      ctx.stroke();
    },
    circle(x, y, r) {
      ctx.beginPath();
      ctx.arc(x, y, r, 0, 2 * Math.PI);
      ctx.fill();
    },
    text(s, x, y) {
      ctx.fillText(s, x, y);
    },
  };
}

function buildEditor(session: ViewerSession): void {
  const panel = document.getElementById("editor")!;
  for (let i = 0; i < 10; i++) {
    const slider = document.createElement("input");
    slider.type = "range";
    slider.min = "-3";
    slider.max = "3";
    slider.step = "0.05";
    slider.value = "0";
    slider.title = `shape ${i}`;
    slider.addEventListener("input", () => {
      session.editor.setBeta(i, parseFloat(slider.value), performance.now());
    });
    panel.appendChild(slider);
  }
  const text = document.createElement("textarea");
  text.rows = 3;
  text.placeholder = "character trait description";
  text.addEventListener("input", () => {
    session.editor.setText(text.value, performance.now());
  });
  panel.appendChild(text);
}

function start(): void {
  const url = new URLSearchParams(location.search).get("ws") ?? "ws://127.0.0.1:7070";
  const canvas = document.getElementById("view") as HTMLCanvasElement;
  const renderer = new SkeletonRenderer(canvasSurface(canvas));
  let attempt = 0;

  function connect(): void {
    const transport = new WebSocketTransport(url);
    const session = new ViewerSession(transport);
    buildEditor(session);
    window.addEventListener("keydown", (e) => {
      if (e.key === "Tab") e.preventDefault();
      session.keyDown(e.key);
    });
    window.addEventListener("keyup", (e) => session.keyUp(e.key));
    transport.onClose(() => {
      session.input.setConnected(false);
      attempt += 1;
      setTimeout(connect, backoffDelay(attempt) * 1000);
    });

    let last = performance.now();
    function loop(now: number): void {
      session.tick((now - last) / 1000, now, renderer);
      last = now;
      requestAnimationFrame(loop);
    }
    requestAnimationFrame(loop);
  }

  connect();
}

start();
