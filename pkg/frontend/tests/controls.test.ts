import { describe, expect, it } from "vitest";

import { KeyboardDriver, SendScheduler } from "../src/controls.js";

function tickFor(driver: KeyboardDriver, seconds: number, dt = 0.01) {
  let state = driver.state;
  for (let t = 0; t < seconds - 1e-9; t += dt) state = driver.tick(dt);
  return state;
}

describe("keyboard ramps", () => {
  it("holding up reaches full throttle within one second", () => {
    const d = new KeyboardDriver();
    d.keyDown("ArrowUp");
    const state = tickFor(d, 1.0);
    expect(state.throttle).toBe(1);
    expect(state.steer).toBe(0);
  });

  it("attack takes 0.2 seconds to full", () => {
    const d = new KeyboardDriver();
    d.keyDown("ArrowUp");
    expect(tickFor(d, 0.1).throttle).toBeCloseTo(0.5, 5);
    expect(tickFor(d, 0.1).throttle).toBeCloseTo(1.0, 5);
  });

  it("release decays to zero in 0.3 seconds", () => {
    const d = new KeyboardDriver();
    d.keyDown("ArrowUp");
    tickFor(d, 0.5);
    d.keyUp("ArrowUp");
    expect(tickFor(d, 0.15).throttle).toBeCloseTo(0.5, 5);
    expect(tickFor(d, 0.15).throttle).toBeCloseTo(0.0, 5);
    expect(tickFor(d, 0.1).throttle).toBe(0);
  });

  it("left plus up composes steer<0 and throttle>0", () => {
    const d = new KeyboardDriver();
    d.keyDown("ArrowLeft");
    d.keyDown("ArrowUp");
    const state = tickFor(d, 0.3);
    expect(state.steer).toBeLessThan(0);
    expect(state.throttle).toBeGreaterThan(0);
  });

  it("opposing steer keys cancel", () => {
    const d = new KeyboardDriver();
    d.keyDown("ArrowLeft");
    d.keyDown("ArrowRight");
    expect(tickFor(d, 0.5).steer).toBe(0);
  });

  it("wasd aliases work", () => {
    const d = new KeyboardDriver();
    d.keyDown("KeyW");
    d.keyDown("KeyD");
    const state = tickFor(d, 0.3);
    expect(state.throttle).toBe(1);
    expect(state.steer).toBeGreaterThan(0);
  });

  it("brake ramps like throttle", () => {
    const d = new KeyboardDriver();
    d.keyDown("ArrowDown");
    expect(tickFor(d, 0.2).brake).toBeCloseTo(1.0, 5);
  });
});

describe("send scheduler", () => {
  it("caps changing updates at 50 Hz", () => {
    const s = new SendScheduler();
    let sent = 0;
    for (let i = 0; i < 1000; i++) {
      const t = i / 1000; // 1 kHz of changing states for one second
      if (s.shouldSend(t, { steer: i / 1000, throttle: 0, brake: 0 })) sent++;
    }
    expect(sent).toBeLessThanOrEqual(51);
    expect(sent).toBeGreaterThanOrEqual(45);
  });

  it("sends an idle heartbeat at 5 Hz", () => {
    const s = new SendScheduler();
    const idle = { steer: 0, throttle: 0, brake: 0 };
    let sent = 0;
    for (let i = 0; i < 1000; i++) {
      if (s.shouldSend(i / 1000, idle)) sent++;
    }
    expect(sent).toBeGreaterThanOrEqual(5);
    expect(sent).toBeLessThanOrEqual(7);
  });

  it("state change triggers an immediate send after the rate window", () => {
    const s = new SendScheduler();
    expect(s.shouldSend(0, { steer: 0, throttle: 0, brake: 0 })).toBe(true);
    expect(s.shouldSend(0.005, { steer: 0.5, throttle: 0, brake: 0 })).toBe(false);
    expect(s.shouldSend(0.025, { steer: 0.5, throttle: 0, brake: 0 })).toBe(true);
  });

  it("extra state participates in change detection", () => {
    const s = new SendScheduler();
    const idle = { steer: 0, throttle: 0, brake: 0 };
    expect(s.shouldSend(0, idle, "enhance=1")).toBe(true);
    expect(s.shouldSend(0.04, idle, "enhance=0")).toBe(true);
  });
});
