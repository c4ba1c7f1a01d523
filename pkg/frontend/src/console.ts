// Operator console: live A/B frame view with a draggable split, keyboard
// driving, enhancement toggle and focus-follows-cursor threshold control.
// All state changes round-trip through the wire protocol; nothing is
// simulated client-side.

import { KeyboardDriver, SendScheduler } from "./controls.js";
import { LatestFrame, toRgba } from "./frames.js";
import {
  ControlUpdate,
  MSG_CONDITION,
  MSG_ERROR,
  MSG_FRAME,
  MSG_METRICS,
  MetricsMsg,
  TOPIC_METRICS,
  TOPIC_RAW,
  TOPIC_STYLED,
  decodeCondition,
  decodeEnvelope,
  decodeErrorPayload,
  decodeFrame,
  decodeMetrics,
  defaultControl,
  encodeControl,
  encodeSubscribe,
} from "./wire.js";

export interface ConsoleElements {
  canvas: HTMLCanvasElement;
  status: HTMLElement;
  metrics: HTMLElement;
  split: HTMLInputElement;
  enhance: HTMLInputElement;
  focusMode: HTMLInputElement;
  fineLow: HTMLInputElement;
  fineHigh: HTMLInputElement;
  coarseLow: HTMLInputElement;
  coarseHigh: HTMLInputElement;
  radiusInner: HTMLInputElement;
  radiusOuter: HTMLInputElement;
  seed: HTMLElement;
}

export class ConsoleApp {
  private ws: WebSocket | null = null;
  private raw = new LatestFrame();
  private styled = new LatestFrame();
  private driver = new KeyboardDriver();
  private scheduler = new SendScheduler();
  private metrics: MetricsMsg | null = null;
  private focus: { x: number; y: number } | null = null;
  private lastTick = performance.now();
  private rawCanvas = document.createElement("canvas");
  private styledCanvas = document.createElement("canvas");
  private stopped = false;

  constructor(
    private url: string,
    private el: ConsoleElements,
  ) {}

  start(): void {
    this.bindInput();
    this.connect();
    requestAnimationFrame(() => this.loop());
  }

  stop(): void {
    this.stopped = true;
    this.ws?.close();
  }

  private connect(): void {
    this.el.status.textContent = `connecting to ${this.url} ...`;
    const ws = new WebSocket(this.url);
    ws.binaryType = "arraybuffer";
    ws.onopen = () => {
      this.el.status.textContent = "connected";
      for (const topic of [TOPIC_STYLED, TOPIC_RAW, TOPIC_METRICS]) {
        ws.send(encodeSubscribe(topic));
      }
    };
    ws.onmessage = (event) => this.onMessage(event);
    ws.onclose = () => {
      this.ws = null;
      if (this.stopped) return;
      this.el.status.textContent = "disconnected - reconnecting";
      setTimeout(() => this.connect(), 1000);
    };
    this.ws = ws;
  }

  private onMessage(event: MessageEvent): void {
    if (typeof event.data === "string") return;
    const env = decodeEnvelope(new Uint8Array(event.data as ArrayBuffer));
    if (env.msgType === MSG_FRAME) {
      const frame = decodeFrame(env.payload);
      if (frame.sourceId === "styled") this.styled.offer(frame);
      else this.raw.offer(frame);
    } else if (env.msgType === MSG_METRICS) {
      this.metrics = decodeMetrics(env.payload);
    } else if (env.msgType === MSG_CONDITION) {
      decodeCondition(env.payload); // subscribed on demand by debug tooling
    } else if (env.msgType === MSG_ERROR) {
      const { code, detail } = decodeErrorPayload(env.payload);
      this.el.status.textContent = `server error ${code}: ${detail}`;
    }
  }

  private bindInput(): void {
    window.addEventListener("keydown", (e) => {
      if (!e.repeat) this.driver.keyDown(e.code);
    });
    window.addEventListener("keyup", (e) => this.driver.keyUp(e.code));
    window.addEventListener("blur", () => this.driver.releaseAll());
    this.el.canvas.addEventListener("mousemove", (e) => {
      const rect = this.el.canvas.getBoundingClientRect();
      this.focus = {
        x: ((e.clientX - rect.left) / rect.width) * this.el.canvas.width,
        y: ((e.clientY - rect.top) / rect.height) * this.el.canvas.height,
      };
    });
    this.el.canvas.addEventListener("mouseleave", () => {
      this.focus = null; // reverts to uniform thresholds
    });
  }

  private currentControl(): ControlUpdate {
    const c = defaultControl();
    const pedals = this.driver.state;
    c.steer = pedals.steer;
    c.throttle = pedals.throttle;
    c.brake = pedals.brake;
    c.enhancementEnabled = this.el.enhance.checked;
    const focusing = this.el.focusMode.checked && this.focus !== null;
    c.focusActive = focusing;
    if (focusing && this.focus) {
      c.focusX = this.focus.x;
      c.focusY = this.focus.y;
      c.rInner = Number(this.el.radiusInner.value);
      c.rOuter = Math.max(Number(this.el.radiusOuter.value), c.rInner + 1);
      c.fineLow = Number(this.el.fineLow.value);
      c.fineHigh = Math.max(Number(this.el.fineHigh.value), c.fineLow + 1);
      c.coarseLow = Number(this.el.coarseLow.value);
      c.coarseHigh = Math.max(Number(this.el.coarseHigh.value), c.coarseLow + 1);
    }
    return c;
  }

  private loop(): void {
    if (this.stopped) return;
    const now = performance.now();
    const dt = Math.min(0.1, (now - this.lastTick) / 1000);
    this.lastTick = now;
    this.driver.tick(dt);

    const control = this.currentControl();
    const extra = [
      control.enhancementEnabled,
      control.focusActive,
      control.focusX.toFixed(0),
      control.focusY.toFixed(0),
    ].join("|");
    if (this.ws?.readyState === WebSocket.OPEN) {
      if (this.scheduler.shouldSend(now / 1000, this.driver.state, extra)) {
        this.ws.send(encodeControl(control));
      }
    }

    this.paint();
    this.paintMetrics();
    requestAnimationFrame(() => this.loop());
  }

  private blit(target: HTMLCanvasElement, frame: ReturnType<LatestFrame["take"]>): void {
    if (!frame) return;
    target.width = frame.width;
    target.height = frame.height;
    const ctx = target.getContext("2d");
    if (!ctx) return;
    ctx.putImageData(new ImageData(toRgba(frame), frame.width, frame.height), 0, 0);
  }

  private paint(): void {
    this.blit(this.styledCanvas, this.styled.take());
    this.blit(this.rawCanvas, this.raw.take());
    const ctx = this.el.canvas.getContext("2d");
    if (!ctx) return;
    const w = this.el.canvas.width;
    const h = this.el.canvas.height;
    const split = Number(this.el.split.value) / 100;
    if (this.styledCanvas.width) ctx.drawImage(this.styledCanvas, 0, 0, w, h);
    if (this.rawCanvas.width && split > 0) {
      ctx.save();
      ctx.beginPath();
      ctx.rect(0, 0, split * w, h);
      ctx.clip();
      ctx.drawImage(this.rawCanvas, 0, 0, w, h);
      ctx.restore();
      ctx.fillStyle = "#ffffff";
      ctx.fillRect(split * w - 1, 0, 2, h);
    }
    if (this.el.focusMode.checked && this.focus) {
      ctx.strokeStyle = "#00e0ff";
      ctx.beginPath();
      ctx.arc(this.focus.x, this.focus.y, Number(this.el.radiusInner.value), 0, 2 * Math.PI);
      ctx.stroke();
    }
  }

  private paintMetrics(): void {
    if (!this.metrics) return;
    const m = this.metrics;
    this.el.metrics.textContent =
      `fps ${m.achievedFps.toFixed(1)} | drop ${(m.dropRate * 100).toFixed(0)}% | ` +
      `p50 ${(Number(m.p50Ns) / 1e6).toFixed(0)} ms | p99 ${(Number(m.p99Ns) / 1e6).toFixed(0)} ms`;
  }
}
