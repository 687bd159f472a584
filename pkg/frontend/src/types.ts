// Response shapes of the documented HTTP API this client consumes
// (POST /v1/search, GET /v1/eval/report/{run_id}).

export interface GalleryResultItem {
  product_id: string;
  image_id: string;
  score: number;
  category: string;
  broad_class: string;
  source_object_rank: number;
}

export interface GalleryObject {
  box: [number, number, number, number];
  rank: number;
  rank_score: number;
  broad_class: string | null;
  warning: string | null;
  results: GalleryResultItem[];
}

export interface GalleryResponse {
  query_image_id: string;
  objects: GalleryObject[];
  merged: GalleryResultItem[];
  trace: Record<string, { in: number; out: number }>;
  reason?: string;
}

export interface QueryObjectInput {
  box: [number, number, number, number];
  confidence: number;
  superclass?: string | null;
  embedding?: number[];
  descriptor?: { category: string; instance_id: string };
}

export interface SearchRequest {
  image_id: string;
  width: number;
  height: number;
  objects: QueryObjectInput[];
}

export interface JudgeRatingRow {
  pair_id: string;
  status: string;
  rating: {
    category_relevance: number;
    visual_similarity: number;
    relevance_justification: string;
    similarity_justification: string;
  } | null;
}

export interface EvalReport {
  run_id: string;
  k: Record<string, { rel_p: number; vs_p: number; success: number; ndcg: number }>;
  ratings?: JudgeRatingRow[];
}
