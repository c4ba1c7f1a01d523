// Binary envelope codec for the console socket. One envelope per WebSocket
// binary message; integers big-endian fixed width, floats IEEE-754 binary32.

export const MAGIC = new Uint8Array([0x44, 0x52, 0x56, 0x31]); // "DRV1"
export const VERSION = 1;
export const MAX_PAYLOAD = 16 * 1024 * 1024;

export const MSG_FRAME = 1;
export const MSG_CONDITION = 2;
export const MSG_STYLE_REQUEST = 3;
export const MSG_STYLE_RESULT = 4;
export const MSG_CONTROL = 5;
export const MSG_METRICS = 6;
export const MSG_SUBSCRIBE = 7;
export const MSG_ERROR = 8;

export const ROLE_SUBSCRIBE = 0;

export const TOPIC_RAW = "frames/raw";
export const TOPIC_CONDITION = "frames/condition";
export const TOPIC_STYLED = "frames/styled";
export const TOPIC_CONTROL = "control";
export const TOPIC_METRICS = "metrics";

export class DecodeError extends Error {
  constructor(
    public category: string,
    detail = "",
  ) {
    super(detail ? `${category}: ${detail}` : category);
  }
}

export interface Envelope {
  msgType: number;
  payload: Uint8Array;
}

export interface FrameMsg {
  id: number;
  tsNs: bigint;
  width: number;
  height: number;
  format: number; // 0 RGB8, 1 GRAY8
  sourceId: string;
  pixels: Uint8Array;
}

export interface ConditionMsg {
  frameId: number;
  width: number;
  height: number;
  data: Uint8Array;
}

export interface MetricsMsg {
  achievedFps: number;
  dropRate: number;
  p50Ns: bigint;
  p95Ns: bigint;
  p99Ns: bigint;
}

export interface ControlUpdate {
  steer: number;
  throttle: number;
  brake: number;
  enhancementEnabled: boolean;
  focusActive: boolean;
  focusX: number;
  focusY: number;
  rInner: number;
  rOuter: number;
  fineLow: number;
  fineHigh: number;
  coarseLow: number;
  coarseHigh: number;
}

export function defaultControl(): ControlUpdate {
  return {
    steer: 0,
    throttle: 0,
    brake: 0,
    enhancementEnabled: true,
    focusActive: false,
    focusX: 0,
    focusY: 0,
    rInner: 0,
    rOuter: 1,
    fineLow: 0,
    fineHigh: 1,
    coarseLow: 0,
    coarseHigh: 1,
  };
}

export function encodeEnvelope(msgType: number, payload: Uint8Array): Uint8Array {
  if (payload.length > MAX_PAYLOAD) throw new Error("payload exceeds 16 MiB cap");
  const out = new Uint8Array(10 + payload.length);
  out.set(MAGIC, 0);
  out[4] = VERSION;
  out[5] = msgType;
  new DataView(out.buffer).setUint32(6, payload.length, false);
  out.set(payload, 10);
  return out;
}

export function decodeEnvelope(data: Uint8Array): Envelope {
  if (data.length < 10) throw new DecodeError("short read", `${data.length} bytes`);
  for (let i = 0; i < 4; i++) {
    if (data[i] !== MAGIC[i]) throw new DecodeError("bad magic");
  }
  if (data[4] !== VERSION) throw new DecodeError("bad version", String(data[4]));
  const msgType = data[5];
  if (msgType < 1 || msgType > 8) throw new DecodeError("unknown type", String(msgType));
  const len = new DataView(data.buffer, data.byteOffset).getUint32(6, false);
  if (len > MAX_PAYLOAD) throw new DecodeError("oversize", String(len));
  if (data.length < 10 + len)
    throw new DecodeError("length mismatch", `declared ${len}, have ${data.length - 10}`);
  return { msgType, payload: data.subarray(10, 10 + len) };
}

class Reader {
  private view: DataView;
  pos = 0;

  constructor(private data: Uint8Array) {
    this.view = new DataView(data.buffer, data.byteOffset, data.byteLength);
  }

  private need(n: number): void {
    if (this.pos + n > this.data.length)
      throw new DecodeError("truncated payload", `need ${n} at ${this.pos}`);
  }

  u8(): number {
    this.need(1);
    return this.data[this.pos++];
  }

  u16(): number {
    this.need(2);
    const v = this.view.getUint16(this.pos, false);
    this.pos += 2;
    return v;
  }

  u32(): number {
    this.need(4);
    const v = this.view.getUint32(this.pos, false);
    this.pos += 4;
    return v;
  }

  u64(): bigint {
    this.need(8);
    const v = this.view.getBigUint64(this.pos, false);
    this.pos += 8;
    return v;
  }

  f32(): number {
    this.need(4);
    const v = this.view.getFloat32(this.pos, false);
    this.pos += 4;
    return v;
  }

  str8(): string {
    const n = this.u8();
    this.need(n);
    const s = new TextDecoder().decode(this.data.subarray(this.pos, this.pos + n));
    this.pos += n;
    return s;
  }

  rest(): Uint8Array {
    return this.data.subarray(this.pos);
  }
}

export function decodeFrame(payload: Uint8Array): FrameMsg {
  const r = new Reader(payload);
  const id = Number(r.u64());
  const tsNs = r.u64();
  const width = r.u16();
  const height = r.u16();
  const format = r.u8();
  const sourceId = r.str8();
  const pixels = r.rest();
  const expected = width * height * (format === 0 ? 3 : 1);
  if (pixels.length !== expected)
    throw new DecodeError("invalid frame", `${pixels.length} pixel bytes, want ${expected}`);
  return { id, tsNs, width, height, format, sourceId, pixels };
}

export function decodeCondition(payload: Uint8Array): ConditionMsg {
  const r = new Reader(payload);
  const frameId = Number(r.u64());
  const width = r.u16();
  const height = r.u16();
  const data = r.rest();
  if (data.length !== width * height)
    throw new DecodeError("invalid condition map", `${data.length} bytes for ${width}x${height}`);
  return { frameId, width, height, data };
}

export function decodeMetrics(payload: Uint8Array): MetricsMsg {
  const r = new Reader(payload);
  const fpsMilli = r.u32();
  const dropMilli = r.u32();
  return {
    achievedFps: fpsMilli / 1000,
    dropRate: dropMilli / 1000,
    p50Ns: r.u64(),
    p95Ns: r.u64(),
    p99Ns: r.u64(),
  };
}

export function decodeErrorPayload(payload: Uint8Array): { code: number; detail: string } {
  const r = new Reader(payload);
  const code = r.u8();
  const n = r.u16();
  const detail = new TextDecoder().decode(payload.subarray(r.pos, r.pos + n));
  return { code, detail };
}

export function encodeSubscribe(topic: string): Uint8Array {
  const raw = new TextEncoder().encode(topic);
  const payload = new Uint8Array(2 + raw.length);
  payload[0] = ROLE_SUBSCRIBE;
  payload[1] = raw.length;
  payload.set(raw, 2);
  return encodeEnvelope(MSG_SUBSCRIBE, payload);
}

export function encodeControl(c: ControlUpdate): Uint8Array {
  const payload = new Uint8Array(3 * 4 + 2 + 8 * 4);
  const view = new DataView(payload.buffer);
  view.setFloat32(0, c.steer, false);
  view.setFloat32(4, c.throttle, false);
  view.setFloat32(8, c.brake, false);
  payload[12] = c.enhancementEnabled ? 1 : 0;
  payload[13] = c.focusActive ? 1 : 0;
  const floats = [
    c.focusX,
    c.focusY,
    c.rInner,
    c.rOuter,
    c.fineLow,
    c.fineHigh,
    c.coarseLow,
    c.coarseHigh,
  ];
  floats.forEach((v, i) => view.setFloat32(14 + 4 * i, v, false));
  return encodeEnvelope(MSG_CONTROL, payload);
}
