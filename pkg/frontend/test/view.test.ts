// @vitest-environment jsdom
import { describe, expect, it } from "vitest";

import { encodeFrame } from "../src/framing";
import { PlaybackModel } from "../src/playback";
import { ConsoleSession } from "../src/session";
import { DashboardView } from "../src/view";
import {
  CaptureTransport,
  controlArgsFor,
  loadTranscript,
  loadTrialFixture,
} from "./helpers";

function buildView(session: ConsoleSession): DashboardView {
  return new DashboardView(document, session, {
    sendControl: (name, args) => session.sendControl(name, args ?? {}),
    loadTrial: () => undefined,
  });
}

describe("dashboard rendering", () => {
  it("renders every status transition from the transcript", () => {
    const transcript = loadTranscript();
    const session = new ConsoleSession(new CaptureTransport());
    const view = buildView(session);
    const statusLine = view.root.querySelector("[data-role=status-line]")!;

    for (const record of transcript.records) {
      if (record.dir === "tx") {
        if (record.label === "hello") session.connect();
        else {
          const { name, args } = controlArgsFor(record, transcript.trialId);
          void session.sendControl(name, args);
        }
        continue;
      }
      session.ingest(record.bytes);
      if (record.envelope.type === "status") {
        const payload = record.envelope.payload as { phase: string; done: boolean; paused: boolean };
        const tag = payload.done ? "done" : payload.paused ? "paused" : payload.phase;
        expect(statusLine.textContent).toContain(tag);
        expect(statusLine.textContent).toContain("transcript");
      }
    }
    expect(statusLine.textContent).toContain("done");
  });

  it("shows the gateway's max-25 rejection for an out-of-range override", async () => {
    const transcript = loadTranscript();
    const session = new ConsoleSession(new CaptureTransport());
    const view = buildView(session);
    let overridePromise: Promise<unknown> | null = null;
    let overrideSeq = -1;
    for (const record of transcript.records) {
      if (record.dir === "tx") {
        if (record.label === "hello") session.connect();
        else {
          const { name, args } = controlArgsFor(record, transcript.trialId);
          const p = session.sendControl(name, args);
          if (record.label === "override_26") {
            overridePromise = p;
            overrideSeq = record.envelope.seq;
          }
        }
        continue;
      }
      session.ingest(record.bytes);
      if (record.envelope.type === "nack" && record.envelope.seq === overrideSeq) {
        await overridePromise;
        const text = view.root.querySelector("[data-role=control-result]")!.textContent!;
        expect(text).toContain("rejected");
        expect(text).toContain("max 25");
        return;
      }
    }
    throw new Error("override nack never arrived in the transcript");
  });

  it("updates the 12 heatmap cells from live frames", () => {
    const transcript = loadTranscript();
    const session = new ConsoleSession(new CaptureTransport());
    const view = buildView(session);
    for (const record of transcript.records) {
      if (record.dir === "rx") session.ingest(record.bytes);
    }
    const cells = view.root.querySelectorAll(".heat-cell");
    expect(cells.length).toBe(12);
    for (const cell of Array.from(cells)) {
      expect((cell as HTMLElement).dataset.counts).toBeDefined();
    }
  });

  it("paints exact recorded counts at the playback scrub position", () => {
    const trial = loadTrialFixture();
    const session = new ConsoleSession(new CaptureTransport());
    const view = buildView(session);
    const model = new PlaybackModel(trial);
    view.enterPlayback(model);

    const loaded = trial.fsr.find((row) => row[10] > 100)!;
    model.seekTime(loaded[0]);
    view.render();
    const cell9 = view.root.querySelector('.heat-cell[data-channel="9"]') as HTMLElement;
    expect(Number(cell9.dataset.counts)).toBe(loaded[10]);
  });

  it("surfaces seq gaps and stale banners", () => {
    let clock = 0;
    const session = new ConsoleSession(new CaptureTransport(), () => clock);
    const view = buildView(session);
    session.ingest(encodeFrame({ type: "telemetry", seq: 1, payload: { t: 0, fsr: [] } }));
    session.ingest(encodeFrame({ type: "telemetry", seq: 9, payload: { t: 1, fsr: [] } }));
    view.render();
    const badge = view.root.querySelector("[data-role=gap-badge]") as HTMLElement;
    expect(badge.hidden).toBe(false);
    expect(badge.textContent).toContain("gaps: 1");

    clock += 5000;
    view.render();
    const banner = view.root.querySelector("[data-role=banner]") as HTMLElement;
    expect(banner.hidden).toBe(false);
    expect(banner.textContent).toContain("stale");
  });
});
