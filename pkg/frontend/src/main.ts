import { ConsoleApp, ConsoleElements } from "./console.js";

function grab<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
}

const elements: ConsoleElements = {
  canvas: grab<HTMLCanvasElement>("view"),
  status: grab("status"),
  metrics: grab("metrics"),
  split: grab<HTMLInputElement>("split"),
  enhance: grab<HTMLInputElement>("enhance"),
  focusMode: grab<HTMLInputElement>("focus-mode"),
  fineLow: grab<HTMLInputElement>("fine-low"),
  fineHigh: grab<HTMLInputElement>("fine-high"),
  coarseLow: grab<HTMLInputElement>("coarse-low"),
  coarseHigh: grab<HTMLInputElement>("coarse-high"),
  radiusInner: grab<HTMLInputElement>("radius-inner"),
  radiusOuter: grab<HTMLInputElement>("radius-outer"),
  seed: grab("seed"),
};

const params = new URLSearchParams(window.location.search);
const host = params.get("host") ?? window.location.hostname ?? "127.0.0.1";
const port = params.get("port") ?? "7072";
const app = new ConsoleApp(`ws://${host}:${port}`, elements);
app.start();
