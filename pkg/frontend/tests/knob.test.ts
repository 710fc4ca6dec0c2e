import { describe, expect, it } from "vitest";

import { knobToLatent } from "../src/knob";

function normalCdf(x: number): number {
  // Abramowitz-Stegun 7.1.26 rational erf approximation
  const t = 1 / (1 + 0.3275911 * Math.abs(x) / Math.SQRT2);
  const erf =
    1 -
    (((((1.061405429 * t - 1.453152027) * t) + 1.421413741) * t -
      0.284496736) * t + 0.254829592) *
      t *
      Math.exp((-x * x) / 2);
  return x >= 0 ? 0.5 * (1 + erf) : 0.5 * (1 - erf);
}

describe("knobToLatent", () => {
  it("is zero at the midpoint", () => {
    expect(knobToLatent(0.5)).toBe(0);
  });

  it("matches known quantiles", () => {
    expect(knobToLatent(0.975)).toBeCloseTo(1.959964, 5);
    expect(knobToLatent(0.025)).toBeCloseTo(-1.959964, 5);
  });

  it("is strictly increasing", () => {
    let prev = -Infinity;
    for (let v = 0; v <= 1.0001; v += 0.01) {
      const z = knobToLatent(Math.min(v, 1));
      expect(z).toBeGreaterThan(prev);
      prev = z;
    }
  });

  it("round trips through an independent CDF approximation", () => {
    for (const v of [0.1, 0.3, 0.5, 0.7, 0.9]) {
      expect(normalCdf(knobToLatent(v))).toBeCloseTo(v, 3);
    }
  });

  it("stays finite at the clamped extremes", () => {
    expect(Number.isFinite(knobToLatent(0))).toBe(true);
    expect(Number.isFinite(knobToLatent(1))).toBe(true);
    expect(knobToLatent(1)).toBeGreaterThan(4);
  });
});
