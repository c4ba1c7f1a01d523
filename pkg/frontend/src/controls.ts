// Keyboard-to-pedal mapping. Held keys ramp toward their target (attack
// 0.2 s) and decay back to zero on release (0.3 s), approximating analog
// pedals; steering left is negative per the control contract.

export const ATTACK_S = 0.2;
export const RELEASE_S = 0.3;
export const SEND_HZ_MAX = 50;
export const HEARTBEAT_HZ = 5;

export interface DriveState {
  steer: number;
  throttle: number;
  brake: number;
}

function ramp(value: number, target: number, dt: number): number {
  if (target === value) return value;
  if (target !== 0) {
    const step = (dt / ATTACK_S) * Math.abs(target);
    return target > value ? Math.min(target, value + step) : Math.max(target, value - step);
  }
  const step = dt / RELEASE_S;
  return value > 0 ? Math.max(0, value - step) : Math.min(0, value + step);
}

export class KeyboardDriver {
  private held = new Set<string>();
  state: DriveState = { steer: 0, throttle: 0, brake: 0 };

  keyDown(code: string): void {
    this.held.add(code);
  }

  keyUp(code: string): void {
    this.held.delete(code);
  }

  releaseAll(): void {
    this.held.clear();
  }

  private target(codes: string[]): number {
    return codes.some((c) => this.held.has(c)) ? 1 : 0;
  }

  /** Advance the ramps by dt seconds and return the current pedal state. */
  tick(dt: number): DriveState {
    const left = this.target(["ArrowLeft", "KeyA"]);
    const right = this.target(["ArrowRight", "KeyD"]);
    const steerTarget = right - left; // left key => steer < 0
    const prev = this.state;
    this.state = {
      steer: ramp(prev.steer, steerTarget, dt),
      throttle: ramp(prev.throttle, this.target(["ArrowUp", "KeyW"]), dt),
      brake: ramp(prev.brake, this.target(["ArrowDown", "KeyS"]), dt),
    };
    return this.state;
  }
}

/**
 * Rate limiter for control envelopes: at most SEND_HZ_MAX when the state is
 * changing, and an all-states heartbeat at HEARTBEAT_HZ when it is not.
 */
export class SendScheduler {
  private lastSent = -Infinity;
  private lastState = "";

  shouldSend(nowS: number, state: DriveState, extra = ""): boolean {
    const key = `${state.steer.toFixed(4)}|${state.throttle.toFixed(4)}|${state.brake.toFixed(4)}|${extra}`;
    const since = nowS - this.lastSent;
    const changed = key !== this.lastState;
    if (changed && since >= 1 / SEND_HZ_MAX) {
      this.lastSent = nowS;
      this.lastState = key;
      return true;
    }
    if (!changed && since >= 1 / HEARTBEAT_HZ) {
      this.lastSent = nowS;
      return true;
    }
    return false;
  }
}
