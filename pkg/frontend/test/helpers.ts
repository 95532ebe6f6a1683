import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

import { parseEnvelope, Envelope } from "../src/framing";
import { TrialData } from "../src/playback";

const here = dirname(fileURLToPath(import.meta.url));

export interface TranscriptRecord {
  dir: "tx" | "rx";
  label?: string;
  bytes: Uint8Array;
  envelope: Envelope;
}

export interface Transcript {
  records: TranscriptRecord[];
  trialId: string;
}

export function loadTranscript(): Transcript {
  const raw = JSON.parse(
    readFileSync(join(here, "fixtures", "transcript.json"), "utf-8"),
  ) as { records: Array<{ dir: "tx" | "rx"; label?: string; b64: string }>; trial_id: string };
  const records = raw.records.map((r) => {
    const bytes = new Uint8Array(Buffer.from(r.b64, "base64"));
    const parsed = parseEnvelope(bytes.slice(4));
    if (parsed.error !== undefined) {
      throw new Error(`fixture frame does not parse: ${parsed.error}`);
    }
    return { dir: r.dir, label: r.label, bytes, envelope: parsed.msg };
  });
  return { records, trialId: raw.trial_id };
}

export function loadTrialFixture(): TrialData {
  return JSON.parse(
    readFileSync(join(here, "fixtures", "trial.json"), "utf-8"),
  ) as TrialData;
}

export class CaptureTransport {
  sent: Uint8Array[] = [];

  send(bytes: Uint8Array): void {
    this.sent.push(bytes);
  }

  get lastSent(): Uint8Array {
    if (this.sent.length === 0) throw new Error("nothing sent");
    return this.sent[this.sent.length - 1];
  }
}

export function bytesEqual(a: Uint8Array, b: Uint8Array): boolean {
  if (a.length !== b.length) return false;
  for (let i = 0; i < a.length; i++) if (a[i] !== b[i]) return false;
  return true;
}

/** Issue the session call matching a recorded tx frame. */
export function controlArgsFor(record: TranscriptRecord, trialId: string): {
  name: string;
  args: Record<string, unknown>;
} {
  switch (record.label) {
    case "abort_current":
      return { name: "abort_current", args: {} };
    case "override_26":
      return { name: "set_resistance_override", args: { newtons: 26 } };
    case "status":
      return { name: "status", args: {} };
    case "list_trials":
      return { name: "list_trials", args: {} };
    case "get_trial":
      return { name: "get_trial", args: { trial_id: trialId } };
    default:
      throw new Error(`unexpected tx label ${record.label}`);
  }
}
