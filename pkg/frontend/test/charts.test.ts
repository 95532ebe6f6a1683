import { describe, expect, it } from "vitest";

import { jointSeries, polylinePoints, windowSamples } from "../src/charts";

describe("chart helpers", () => {
  it("windows to the trailing span", () => {
    const samples = Array.from({ length: 100 }, (_, i) => ({ t: i, value: i }));
    const windowed = windowSamples(samples, 30);
    expect(windowed[0].t).toBeGreaterThanOrEqual(99 - 30);
    expect(windowed[windowed.length - 1].t).toBe(99);
  });

  it("maps samples into the viewbox", () => {
    const points = polylinePoints(
      [
        { t: 0, value: 0 },
        { t: 1, value: 10 },
      ],
      100,
      50,
    );
    const pairs = points.split(" ").map((p) => p.split(",").map(Number));
    expect(pairs[0][0]).toBe(0);
    expect(pairs[1][0]).toBe(100);
    expect(pairs[0][1]).toBe(50); // min value at the bottom
    expect(pairs[1][1]).toBe(0); // max at the top
  });

  it("keeps flat traces visible and empty input empty", () => {
    expect(polylinePoints([], 10, 10)).toBe("");
    const flat = polylinePoints(
      [
        { t: 0, value: 5 },
        { t: 1, value: 5 },
      ],
      10,
      10,
    );
    expect(flat.split(" ").length).toBe(2);
  });

  it("splits feedback into per-joint series", () => {
    const series = jointSeries(
      [
        { t: 0, q: [1, 2, 3] },
        { t: 1, q: [4, 5, 6] },
      ],
      3,
    );
    expect(series.length).toBe(3);
    expect(series[1]).toEqual([
      { t: 0, value: 2 },
      { t: 1, value: 5 },
    ]);
  });
});
