/**
 * 2D schematic layout for the FSR heatmap.
 *
 * Handle: the 12 sensors sit in 2 columns x 6 rows along the unrolled grip.
 * Knob: 5 sensors equally spaced on a ring. Channel indexing matches the
 * recorded fsr columns (ch00..).
 */

export interface HeatCell {
  channel: number;
  x: number; // layout units, 0..1
  y: number;
  label: string;
}

export function attachmentCells(attachment: string): HeatCell[] {
  if (attachment === "handle") {
    const cells: HeatCell[] = [];
    for (let row = 0; row < 6; row++) {
      for (let col = 0; col < 2; col++) {
        const channel = row * 2 + col;
        cells.push({
          channel,
          x: 0.3 + col * 0.4,
          y: 0.08 + row * 0.168,
          label: `ch${String(channel).padStart(2, "0")}`,
        });
      }
    }
    return cells;
  }
  if (attachment === "knob") {
    const cells: HeatCell[] = [];
    for (let k = 0; k < 5; k++) {
      const angle = (2 * Math.PI * k) / 5;
      cells.push({
        channel: k,
        x: 0.5 + 0.36 * Math.cos(angle),
        y: 0.5 + 0.36 * Math.sin(angle),
        label: `ch0${k}`,
      });
    }
    return cells;
  }
  throw new Error(`unknown attachment ${attachment}`);
}

export const ADC_FULL_SCALE = 4095;

/** Normalized intensity for a divider count. */
export function heatIntensity(counts: number): number {
  return Math.min(Math.max(counts / ADC_FULL_SCALE, 0), 1);
}

/** CSS color ramp: near-black floor through amber to white-hot. */
export function heatColor(counts: number): string {
  const u = heatIntensity(counts);
  const r = Math.round(40 + 215 * Math.min(1, u * 1.6));
  const g = Math.round(40 + 180 * Math.max(0, u - 0.15) * 1.3);
  const b = Math.round(48 + 200 * Math.max(0, u - 0.7) * 3.3);
  return `rgb(${Math.min(r, 255)},${Math.min(g, 255)},${Math.min(b, 255)})`;
}
