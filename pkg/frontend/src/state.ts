import type { RecommendationRequest, RecommendationResponse } from "./types";

export interface Slider {
  value: number;
  engaged: boolean;
}

function clamp01(v: number): number {
  if (Number.isNaN(v)) return 0;
  return Math.min(1, Math.max(0, v));
}

/** Client-side panel state. Disengaged sliders never appear in requests, so
 * the all-disengaged request body is identical to the baseline one. */
export class KnobPanelState {
  readonly sliders = new Map<string, Slider>();
  items: number[] = [];
  listSize = 100;
  baseline: RecommendationResponse | null = null;
  manipulated: RecommendationResponse | null = null;

  constructor(factorNames: string[]) {
    for (const name of factorNames) {
      this.sliders.set(name, { value: 0.5, engaged: false });
    }
  }

  setItems(items: number[]): void {
    this.items = [...new Set(items)].sort((a, b) => a - b);
    this.baseline = null;
    this.manipulated = null;
  }

  setSlider(factor: string, value: number): void {
    const slider = this.sliders.get(factor);
    if (!slider) throw new Error(`unknown factor ${factor}`);
    slider.value = clamp01(value);
  }

  setEngaged(factor: string, engaged: boolean): void {
    const slider = this.sliders.get(factor);
    if (!slider) throw new Error(`unknown factor ${factor}`);
    slider.engaged = engaged;
  }

  engagedKnobs(): Record<string, number> {
    const knobs: Record<string, number> = {};
    for (const [name, slider] of this.sliders) {
      if (slider.engaged) knobs[name] = slider.value;
    }
    return knobs;
  }

  anyEngaged(): boolean {
    for (const slider of this.sliders.values()) {
      if (slider.engaged) return true;
    }
    return false;
  }

  baselineRequest(): RecommendationRequest {
    return { items: this.items, knobs: {}, n: this.listSize };
  }

  manipulatedRequest(): RecommendationRequest {
    return { items: this.items, knobs: this.engagedKnobs(), n: this.listSize };
  }
}
