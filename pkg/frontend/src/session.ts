/**
 * ConsoleSession: the console's connection state machine.
 *
 * Ingests the gateway byte stream, maintains the latest status snapshot and
 * a ring buffer of recent telemetry (>= 30 s at 20 Hz), tracks seq gaps,
 * raises a stale banner when the stream dries up, and matches control
 * commands to their single ack/nack.
 */

import { Envelope, FrameDecoder, encodeFrame } from "./framing";
import {
  CampaignStatus,
  ControlOutcome,
  ManipFeedback,
  TelemetryFrame,
  asStatus,
  asTelemetry,
} from "./messages";

export interface Transport {
  send(bytes: Uint8Array): void;
}

export interface SessionEvent {
  kind: "status" | "telemetry" | "feedback" | "gap" | "control" | "decode-error";
}

const RING_CAPACITY = 640; // 32 s at 20 Hz
export const STALE_AFTER_MS = 2000;

interface Pending {
  name: string;
  resolve: (outcome: ControlOutcome) => void;
}

export class ConsoleSession {
  statusLog: CampaignStatus[] = [];
  latestStatus: CampaignStatus | null = null;
  frames: TelemetryFrame[] = [];
  feedback: ManipFeedback[] = [];
  events: Array<Record<string, unknown>> = [];
  controlLog: Array<{ name: string; outcome: ControlOutcome }> = [];
  seqGaps = 0;
  droppedFrames = 0;
  decodeErrors = 0;
  lastTelemetrySeq: number | null = null;
  lastStatusSeq: number | null = null;
  lastMessageAt: number | null = null;
  helloAck: Record<string, unknown> | null = null;

  private decoder = new FrameDecoder();
  private nextSeq = 1;
  private pending = new Map<number, Pending>();
  private listeners: Array<(ev: SessionEvent) => void> = [];

  constructor(
    private transport: Transport,
    private now: () => number = () => Date.now(),
  ) {}

  onEvent(listener: (ev: SessionEvent) => void): void {
    this.listeners.push(listener);
  }

  private emit(kind: SessionEvent["kind"]): void {
    for (const listener of this.listeners) listener({ kind });
  }

  /** Open the session: the hello must be the first frame on the wire. */
  connect(): void {
    const seq = this.nextSeq++;
    this.transport.send(
      encodeFrame({
        type: "hello",
        seq,
        payload: { protocol_version: 1, role: "console" },
      }),
    );
  }

  /** Send one control; resolves with its single ack or nack. */
  sendControl(name: string, args: Record<string, unknown> = {}): Promise<ControlOutcome> {
    const seq = this.nextSeq++;
    const frame = encodeFrame({ type: "command", seq, payload: { args, name } });
    const promise = new Promise<ControlOutcome>((resolve) => {
      this.pending.set(seq, { name, resolve });
    });
    this.transport.send(frame);
    return promise;
  }

  ingest(bytes: Uint8Array): void {
    this.lastMessageAt = this.now();
    for (const result of this.decoder.feed(bytes)) {
      if (result.error !== undefined) {
        this.decodeErrors += 1;
        this.emit("decode-error");
        continue;
      }
      this.route(result.msg);
    }
  }

  isStale(): boolean {
    if (this.lastMessageAt === null) return true;
    return this.now() - this.lastMessageAt > STALE_AFTER_MS;
  }

  private route(msg: Envelope): void {
    switch (msg.type) {
      case "ack":
      case "nack": {
        const pending = this.pending.get(msg.seq);
        if (pending !== undefined) {
          this.pending.delete(msg.seq);
          const outcome: ControlOutcome = {
            ok: msg.type === "ack",
            payload: msg.payload,
            error: msg.payload.error as string | undefined,
            message: msg.payload.message as string | undefined,
            max: msg.payload.max as number | undefined,
          };
          this.controlLog.push({ name: pending.name, outcome });
          pending.resolve(outcome);
          this.emit("control");
        } else if (this.helloAck === null && msg.type === "ack") {
          this.helloAck = msg.payload; // reply to connect()'s hello
        }
        break;
      }
      case "status": {
        // rendered seq numbers never decrease: drop stale snapshots
        if (this.lastStatusSeq !== null && msg.seq <= this.lastStatusSeq) return;
        this.lastStatusSeq = msg.seq;
        const status = asStatus(msg.payload);
        this.statusLog.push(status);
        this.latestStatus = status;
        this.emit("status");
        break;
      }
      case "telemetry": {
        if (this.lastTelemetrySeq !== null) {
          if (msg.seq <= this.lastTelemetrySeq) return; // never render backwards
          const gap = msg.seq - this.lastTelemetrySeq - 1;
          if (gap > 0) {
            this.seqGaps += 1;
            this.droppedFrames += gap;
            this.emit("gap");
          }
        }
        this.lastTelemetrySeq = msg.seq;
        this.frames.push(asTelemetry(msg.payload));
        if (this.frames.length > RING_CAPACITY) {
          this.frames.splice(0, this.frames.length - RING_CAPACITY);
        }
        this.emit("telemetry");
        break;
      }
      case "event": {
        const name = msg.payload.name;
        if (name === "manip_feedback") {
          this.feedback.push(msg.payload as unknown as ManipFeedback);
          if (this.feedback.length > RING_CAPACITY) {
            this.feedback.splice(0, this.feedback.length - RING_CAPACITY);
          }
          this.emit("feedback");
        } else {
          this.events.push(msg.payload);
        }
        break;
      }
      default:
        break; // hello/command never flow gateway -> console
    }
  }
}
