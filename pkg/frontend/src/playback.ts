/**
 * Recorded-trial playback: a scrub/play model over the streams served by
 * the gateway's get_trial endpoint. Rows are kept exactly as recorded;
 * frameAt() returns the verbatim sample rows at the playhead.
 */

export interface TrialData {
  meta: Record<string, unknown>;
  testbed: Array<Array<number | string>>;
  fsr: number[][];
  manipulator: number[][];
}

export interface PlaybackFrame {
  t: number;
  testbed: Array<number | string> | null;
  fsr: number[] | null;
  manipulator: number[] | null;
}

/** Latest index with row[0] <= t, or -1 if t precedes the stream. */
function indexAt(rows: Array<Array<number | string>>, t: number): number {
  let lo = 0;
  let hi = rows.length - 1;
  let best = -1;
  while (lo <= hi) {
    const mid = (lo + hi) >> 1;
    if ((rows[mid][0] as number) <= t) {
      best = mid;
      lo = mid + 1;
    } else {
      hi = mid - 1;
    }
  }
  return best;
}

export class PlaybackModel {
  readonly t0: number;
  readonly tEnd: number;
  playhead: number;
  playing = false;

  constructor(readonly trial: TrialData) {
    if (trial.testbed.length === 0) {
      throw new Error("trial has no frames");
    }
    this.t0 = trial.testbed[0][0] as number;
    this.tEnd = trial.testbed[trial.testbed.length - 1][0] as number;
    this.playhead = this.t0;
  }

  get duration(): number {
    return this.tEnd - this.t0;
  }

  get fraction(): number {
    return this.duration > 0 ? (this.playhead - this.t0) / this.duration : 0;
  }

  /** Jump to a normalized position in [0, 1]. */
  scrubTo(fraction: number): PlaybackFrame {
    const u = Math.min(Math.max(fraction, 0), 1);
    this.playhead = this.t0 + u * this.duration;
    return this.frameAt(this.playhead);
  }

  /** Jump to an exact recorded time (clamped to the record's span). */
  seekTime(t: number): PlaybackFrame {
    this.playhead = Math.min(Math.max(t, this.t0), this.tEnd);
    return this.frameAt(this.playhead);
  }

  /** Advance the playhead by wall-clock seconds at a rate multiplier. */
  advance(wallSeconds: number, rate: number): PlaybackFrame {
    if (rate <= 0) throw new Error("rate must be positive");
    this.playhead = Math.min(this.playhead + wallSeconds * rate, this.tEnd);
    if (this.playhead >= this.tEnd) this.playing = false;
    return this.frameAt(this.playhead);
  }

  /** Wall-clock seconds a full replay takes at the given rate. */
  wallDuration(rate: number): number {
    if (rate <= 0) throw new Error("rate must be positive");
    return this.duration / rate;
  }

  frameAt(t: number): PlaybackFrame {
    const ti = indexAt(this.trial.testbed, t);
    const fi = indexAt(this.trial.fsr as Array<Array<number>>, t);
    const mi = indexAt(this.trial.manipulator as Array<Array<number>>, t);
    return {
      t,
      testbed: ti >= 0 ? this.trial.testbed[ti] : null,
      fsr: fi >= 0 ? (this.trial.fsr[fi] as number[]) : null,
      manipulator: mi >= 0 ? (this.trial.manipulator[mi] as number[]) : null,
    };
  }
}
