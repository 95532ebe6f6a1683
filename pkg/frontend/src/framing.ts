/**
 * Gateway framing: 4-byte big-endian length prefix + UTF-8 JSON body.
 *
 * The decoder consumes the raw byte stream (TCP via the WebSocket byte
 * bridge), so chunk boundaries are arbitrary. Encoding is canonical:
 * recursively sorted keys, no whitespace, matching the gateway's own
 * serializer byte for byte.
 */

export const MAX_FRAME_BYTES = 1 << 20;

export interface Envelope {
  type: string;
  seq: number;
  payload: Record<string, unknown>;
}

export type DecodeResult =
  | { msg: Envelope; error?: undefined }
  | { msg?: undefined; error: string };

const VALID_TYPES = new Set([
  "hello",
  "status",
  "command",
  "ack",
  "nack",
  "telemetry",
  "event",
]);

export function parseEnvelope(body: Uint8Array): DecodeResult {
  let obj: unknown;
  try {
    obj = JSON.parse(new TextDecoder("utf-8", { fatal: true }).decode(body));
  } catch (err) {
    return { error: `frame body is not valid JSON: ${err}` };
  }
  if (typeof obj !== "object" || obj === null || Array.isArray(obj)) {
    return { error: "frame body must be a JSON object" };
  }
  const env = obj as Record<string, unknown>;
  if (typeof env.type !== "string" || !VALID_TYPES.has(env.type)) {
    return { error: `unknown or missing message type: ${String(env.type)}` };
  }
  const seq = env.seq;
  if (typeof seq !== "number" || !Number.isInteger(seq) || seq < 0) {
    return { error: `seq must be a non-negative integer, got ${String(seq)}` };
  }
  const payload = env.payload ?? {};
  if (typeof payload !== "object" || payload === null || Array.isArray(payload)) {
    return { error: "payload must be a JSON object" };
  }
  return { msg: { type: env.type, seq, payload: payload as Record<string, unknown> } };
}

export class FrameDecoder {
  private buf = new Uint8Array(0);

  constructor(private maxFrame = MAX_FRAME_BYTES) {}

  get pendingBytes(): number {
    return this.buf.length;
  }

  feed(data: Uint8Array): DecodeResult[] {
    const joined = new Uint8Array(this.buf.length + data.length);
    joined.set(this.buf, 0);
    joined.set(data, this.buf.length);
    this.buf = joined;

    const out: DecodeResult[] = [];
    for (;;) {
      if (this.buf.length < 4) break;
      const view = new DataView(this.buf.buffer, this.buf.byteOffset, 4);
      const declared = view.getUint32(0, false);
      if (declared > this.maxFrame) {
        out.push({ error: `declared frame length ${declared} exceeds maximum` });
        this.buf = new Uint8Array(0); // no reliable resync; drop pending bytes
        break;
      }
      if (this.buf.length < 4 + declared) break;
      const body = this.buf.slice(4, 4 + declared);
      this.buf = this.buf.slice(4 + declared);
      out.push(parseEnvelope(body));
    }
    return out;
  }

  /** Drop a stalled partial frame (sender went quiet mid-frame). */
  flushPartial(): string | null {
    if (this.buf.length === 0) return null;
    const error = `truncated frame (${this.buf.length} bytes pending)`;
    this.buf = new Uint8Array(0);
    return error;
  }
}

/** Recursively key-sorted JSON, identical to the gateway's canonical form. */
export function canonicalJson(value: unknown): string {
  if (value === null || typeof value !== "object") {
    return JSON.stringify(value);
  }
  if (Array.isArray(value)) {
    return `[${value.map(canonicalJson).join(",")}]`;
  }
  const entries = Object.entries(value as Record<string, unknown>)
    .filter(([, v]) => v !== undefined)
    .sort(([a], [b]) => (a < b ? -1 : a > b ? 1 : 0));
  const parts = entries.map(([k, v]) => `${JSON.stringify(k)}:${canonicalJson(v)}`);
  return `{${parts.join(",")}}`;
}

export function encodeFrame(env: Envelope): Uint8Array {
  const body = new TextEncoder().encode(
    canonicalJson({ payload: env.payload, seq: env.seq, type: env.type }),
  );
  const frame = new Uint8Array(4 + body.length);
  new DataView(frame.buffer).setUint32(0, body.length, false);
  frame.set(body, 4);
  return frame;
}
