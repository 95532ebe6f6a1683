/** Gateway message payload shapes the console consumes. */

export interface CampaignStatus {
  campaign_id: string;
  trial_index: number;
  trial_total: number;
  trial_id: string | null;
  phase: string;
  fault: string | null;
  paused: boolean;
  last_result: string | null;
  testbed: string;
  done: boolean;
}

export interface TelemetryFrame {
  t: number;
  frame_seq: number;
  opening: number;
  opening_measured: number;
  velocity: number;
  fsr: number[];
  resistance: number;
  reset_motor: string;
  flags: number;
  trial_id: string | null;
}

export interface ManipFeedback {
  t: number;
  q: number[];
  qd: number[];
}

export interface ControlOutcome {
  ok: boolean;
  payload: Record<string, unknown>;
  error?: string;
  message?: string;
  max?: number;
}

export function asStatus(payload: Record<string, unknown>): CampaignStatus {
  return payload as unknown as CampaignStatus;
}

export function asTelemetry(payload: Record<string, unknown>): TelemetryFrame {
  return payload as unknown as TelemetryFrame;
}

export const FLAG_DISLODGED = 1;
export const FLAG_AT_HARD_STOP = 2;
