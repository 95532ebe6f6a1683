/** Pure helpers turning sample windows into SVG polyline point strings. */

export interface Sample {
  t: number;
  value: number;
}

export function windowSamples(samples: Sample[], spanSeconds: number): Sample[] {
  if (samples.length === 0) return [];
  const tEnd = samples[samples.length - 1].t;
  const t0 = tEnd - spanSeconds;
  let start = samples.length - 1;
  while (start > 0 && samples[start - 1].t >= t0) start--;
  return samples.slice(start);
}

/**
 * Map samples onto a width x height viewBox. The y range defaults to the
 * window's own min/max with a small margin so flat traces stay visible.
 */
export function polylinePoints(
  samples: Sample[],
  width: number,
  height: number,
  yMin?: number,
  yMax?: number,
): string {
  if (samples.length === 0) return "";
  const t0 = samples[0].t;
  const t1 = samples[samples.length - 1].t;
  const span = Math.max(t1 - t0, 1e-9);
  let lo = yMin ?? Math.min(...samples.map((s) => s.value));
  let hi = yMax ?? Math.max(...samples.map((s) => s.value));
  if (hi - lo < 1e-9) {
    lo -= 1;
    hi += 1;
  }
  return samples
    .map((s) => {
      const x = ((s.t - t0) / span) * width;
      const y = height - ((s.value - lo) / (hi - lo)) * height;
      return `${x.toFixed(2)},${y.toFixed(2)}`;
    })
    .join(" ");
}

/** Per-joint sparkline series from manipulator feedback samples. */
export function jointSeries(
  feedback: Array<{ t: number; q: number[] }>,
  jointCount: number,
): Sample[][] {
  const series: Sample[][] = Array.from({ length: jointCount }, () => []);
  for (const sample of feedback) {
    for (let j = 0; j < Math.min(jointCount, sample.q.length); j++) {
      series[j].push({ t: sample.t, value: sample.q[j] });
    }
  }
  return series;
}
