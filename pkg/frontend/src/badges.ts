// Judge-score badges: binarized pass/fail coloring plus hover justifications,
// keyed by the ratings file's pair-id convention
// `<query_image_id>#r<zero-padded merged position>`.

import type { JudgeRatingRow } from "./types.js";

export interface Badge {
  relevance: number;
  similarity: number;
  relevantPass: boolean; // relevance >= 2
  similarPass: boolean; // similarity <= 2
  tooltip: string;
}

export function pairIdFor(queryImageId: string, position: number): string {
  return `${queryImageId}#r${String(position).padStart(3, "0")}`;
}

export function indexRatings(rows: JudgeRatingRow[]): Map<string, JudgeRatingRow> {
  return new Map(rows.map((row) => [row.pair_id, row]));
}

export function badgeFor(
  ratings: Map<string, JudgeRatingRow>,
  queryImageId: string,
  position: number,
): Badge | null {
  const row = ratings.get(pairIdFor(queryImageId, position));
  if (!row || row.status !== "ok" || !row.rating) return null;
  const { category_relevance, visual_similarity } = row.rating;
  return {
    relevance: category_relevance,
    similarity: visual_similarity,
    relevantPass: category_relevance >= 2,
    similarPass: visual_similarity <= 2,
    tooltip:
      `${row.rating.relevance_justification}\n${row.rating.similarity_justification}`.trim(),
  };
}

export function badgeClass(badge: Badge): string {
  const rel = badge.relevantPass ? "badge-rel-pass" : "badge-rel-fail";
  const sim = badge.similarPass ? "badge-sim-pass" : "badge-sim-fail";
  return `badge ${rel} ${sim}`;
}
