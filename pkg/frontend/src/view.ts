/**
 * Dashboard rendering: status header, stale/gap banners, opening strip
 * chart, FSR heatmap, joint sparklines, control panel, playback scrubber.
 * Framework-free; every update rewrites the affected nodes from session
 * state, so a reload reproduces the same view from the next snapshot.
 */

import { jointSeries, polylinePoints, windowSamples } from "./charts";
import { attachmentCells, heatColor } from "./heatmap";
import { PlaybackModel } from "./playback";
import { ConsoleSession } from "./session";

export interface ViewHooks {
  sendControl(name: string, args?: Record<string, unknown>): Promise<unknown>;
  loadTrial(trialId: string): void;
}

const CHART_W = 320;
const CHART_H = 72;
const SPARK_W = 110;
const SPARK_H = 24;

export class DashboardView {
  readonly root: HTMLElement;
  private statusLine: HTMLElement;
  private banner: HTMLElement;
  private gapBadge: HTMLElement;
  private resultLine: HTMLElement;
  private chart: SVGPolylineElement;
  private heatCellsByChannel = new Map<number, HTMLElement>();
  private heatBox: HTMLElement;
  private sparkBox: HTMLElement;
  private controlResult: HTMLElement;
  private overrideInput: HTMLInputElement;
  private playbackBox: HTMLElement;
  private attachment = "handle";
  playback: PlaybackModel | null = null;

  constructor(
    doc: Document,
    private session: ConsoleSession,
    private hooks: ViewHooks,
  ) {
    this.root = doc.createElement("div");
    this.root.className = "pullbench-console";
    this.root.innerHTML = `
      <div class="banner" data-role="banner" hidden></div>
      <header>
        <span data-role="status-line">connecting…</span>
        <span class="gap-badge" data-role="gap-badge" hidden></span>
        <span data-role="result-line"></span>
      </header>
      <section class="live">
        <svg class="strip-chart" viewBox="0 0 ${CHART_W} ${CHART_H}">
          <polyline data-role="opening" fill="none" stroke="currentColor"/>
        </svg>
        <div class="heatmap" data-role="heatmap"></div>
        <div class="sparklines" data-role="sparklines"></div>
      </section>
      <section class="controls">
        <button data-action="pause_after_trial">pause after trial</button>
        <button data-action="resume">resume</button>
        <button data-action="abort_current">abort current</button>
        <button data-action="reset">manual reset</button>
        <input data-role="override" type="number" step="1" placeholder="N" size="4"/>
        <button data-action="set_resistance_override">override next</button>
        <span data-role="control-result"></span>
      </section>
      <section class="playback" data-role="playback" hidden>
        <input data-role="scrub" type="range" min="0" max="1000" value="0"/>
        <span data-role="playhead"></span>
      </section>
    `;
    this.statusLine = this.q("[data-role=status-line]");
    this.banner = this.q("[data-role=banner]");
    this.gapBadge = this.q("[data-role=gap-badge]");
    this.resultLine = this.q("[data-role=result-line]");
    this.chart = this.root.querySelector("[data-role=opening]") as SVGPolylineElement;
    this.heatBox = this.q("[data-role=heatmap]");
    this.sparkBox = this.q("[data-role=sparklines]");
    this.controlResult = this.q("[data-role=control-result]");
    this.overrideInput = this.q("[data-role=override]") as HTMLInputElement;
    this.playbackBox = this.q("[data-role=playback]");
    this.buildHeatmap(doc, this.attachment);
    this.bindControls();
    session.onEvent(() => this.render());
  }

  private q(selector: string): HTMLElement {
    return this.root.querySelector(selector) as HTMLElement;
  }

  private bindControls(): void {
    for (const button of Array.from(this.root.querySelectorAll("button[data-action]"))) {
      button.addEventListener("click", () => {
        const action = (button as HTMLElement).dataset.action as string;
        const args: Record<string, unknown> = {};
        if (action === "set_resistance_override") {
          args.newtons = Number(this.overrideInput.value);
        }
        void this.hooks.sendControl(action, args).then(() => this.render());
      });
    }
    const scrub = this.q("[data-role=scrub]") as HTMLInputElement;
    scrub.addEventListener("input", () => {
      if (this.playback !== null) {
        this.playback.scrubTo(Number(scrub.value) / 1000);
        this.render();
      }
    });
  }

  buildHeatmap(doc: Document, attachment: string): void {
    this.attachment = attachment;
    this.heatBox.innerHTML = "";
    this.heatCellsByChannel.clear();
    for (const cell of attachmentCells(attachment)) {
      const node = doc.createElement("div");
      node.className = "heat-cell";
      node.dataset.channel = String(cell.channel);
      node.style.left = `${(cell.x * 100).toFixed(1)}%`;
      node.style.top = `${(cell.y * 100).toFixed(1)}%`;
      node.title = cell.label;
      this.heatBox.appendChild(node);
      this.heatCellsByChannel.set(cell.channel, node);
    }
  }

  /** Latest FSR values to paint: live frame, or the playback frame. */
  private currentFsr(): number[] | null {
    if (this.playback !== null) {
      const row = this.playback.frameAt(this.playback.playhead).fsr;
      return row === null ? null : row.slice(1); // recorded rows lead with t
    }
    const frame = this.session.frames[this.session.frames.length - 1];
    return frame !== undefined ? frame.fsr : null;
  }

  render(): void {
    const status = this.session.latestStatus;
    if (status !== null) {
      const trial = `${Math.min(status.trial_index + 1, status.trial_total)}/${status.trial_total}`;
      const tag = status.done ? "done" : status.paused ? "paused" : status.phase;
      this.statusLine.textContent =
        `${status.campaign_id} · trial ${trial} · ${tag}` +
        (status.trial_id !== null ? ` · ${status.trial_id}` : "");
      this.resultLine.textContent =
        status.last_result !== null ? `last: ${status.last_result}` : "";
      if (status.fault !== null) {
        this.banner.hidden = false;
        this.banner.textContent = `FAULT: ${status.fault} (clear fault + reset to recover)`;
      } else if (!this.session.isStale()) {
        this.banner.hidden = true;
      }
    }

    if (this.session.isStale()) {
      this.banner.hidden = false;
      this.banner.textContent = "stale: no gateway data";
    }

    this.gapBadge.hidden = this.session.seqGaps === 0;
    if (this.session.seqGaps > 0) {
      this.gapBadge.textContent = `gaps: ${this.session.seqGaps} (${this.session.droppedFrames} frames)`;
    }

    const opening = this.session.frames.map((f) => ({ t: f.t, value: f.opening_measured }));
    this.chart.setAttribute(
      "points",
      polylinePoints(windowSamples(opening, 30), CHART_W, CHART_H),
    );

    const fsr = this.currentFsr();
    if (fsr !== null) {
      for (const [channel, node] of this.heatCellsByChannel) {
        const counts = fsr[channel] ?? 0;
        node.style.background = heatColor(counts);
        node.dataset.counts = String(counts);
      }
    }

    const series = jointSeries(this.session.feedback, 7);
    this.sparkBox.innerHTML = series
      .map(
        (samples, j) =>
          `<svg viewBox="0 0 ${SPARK_W} ${SPARK_H}" class="spark" data-joint="${j}">` +
          `<polyline fill="none" stroke="currentColor" points="${polylinePoints(
            windowSamples(samples, 30),
            SPARK_W,
            SPARK_H,
          )}"/></svg>`,
      )
      .join("");

    const last = this.session.controlLog[this.session.controlLog.length - 1];
    if (last !== undefined) {
      this.controlResult.textContent = last.outcome.ok
        ? `${last.name}: ok`
        : `${last.name}: rejected: ${last.outcome.message ?? last.outcome.error}` +
          (last.outcome.max !== undefined ? ` (max ${last.outcome.max})` : "");
    }

    if (this.playback !== null) {
      this.playbackBox.hidden = false;
      this.q("[data-role=playhead]").textContent =
        `t=${this.playback.playhead.toFixed(2)}s / ${this.playback.tEnd.toFixed(2)}s`;
      (this.q("[data-role=scrub]") as HTMLInputElement).value = String(
        Math.round(this.playback.fraction * 1000),
      );
    }
  }

  enterPlayback(model: PlaybackModel): void {
    this.playback = model;
    this.render();
  }
}
