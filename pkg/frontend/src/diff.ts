import type { RecommendationResponse } from "./types";

export type DiffStatus = "unchanged" | "up" | "down" | "entered";

export interface DiffRow {
  id: number;
  title: string;
  status: DiffStatus;
  /** Positive = moved toward the top relative to the baseline. */
  delta: number | null;
}

export interface ListDiff {
  rows: DiffRow[];
  left: number[];
  /** Per-factor Count(top_n) for both lists, for the bar display. */
  counts: { factor: string; baseline: number; manipulated: number }[];
  identical: boolean;
}

export function diffLists(
  baseline: RecommendationResponse,
  manipulated: RecommendationResponse,
): ListDiff {
  const baseRank = new Map<number, number>();
  baseline.items.forEach((item, rank) => baseRank.set(item.id, rank));

  const rows: DiffRow[] = manipulated.items.map((item, rank) => {
    const before = baseRank.get(item.id);
    if (before === undefined) {
      return { id: item.id, title: item.title, status: "entered", delta: null };
    }
    const delta = before - rank;
    const status: DiffStatus = delta > 0 ? "up" : delta < 0 ? "down" : "unchanged";
    return { id: item.id, title: item.title, status, delta };
  });

  const manipulatedIds = new Set(manipulated.items.map((i) => i.id));
  const left = baseline.items
    .map((i) => i.id)
    .filter((id) => !manipulatedIds.has(id));

  const factors = new Set([
    ...Object.keys(baseline.counts),
    ...Object.keys(manipulated.counts),
  ]);
  const counts = [...factors].sort().map((factor) => ({
    factor,
    baseline: baseline.counts[factor] ?? 0,
    manipulated: manipulated.counts[factor] ?? 0,
  }));

  return {
    rows,
    left,
    counts,
    identical: baseline.digest === manipulated.digest,
  };
}

/** Count of top-n items carrying the factor, recomputed from the tags. */
export function countInTop(
  response: RecommendationResponse,
  factor: string,
  n: number,
): number {
  return response.items
    .slice(0, n)
    .filter((item) => item.factors.includes(factor)).length;
}
