export interface ModelInfo {
  n_items: number;
  d_latent: number;
  n_supervised: number;
  factors: string[];
  supervision_frac: number;
  variant: string;
  config_digest: string;
}

export interface Factor {
  index: number;
  name: string;
  prevalence: number;
}

export interface RecommendedItem {
  id: number;
  title: string;
  score: number;
  factors: string[];
}

export interface RecommendationResponse {
  items: RecommendedItem[];
  counts: Record<string, number>;
  digest: string;
}

export interface RecommendationRequest {
  items?: number[];
  knobs?: Record<string, number>;
  n?: number;
  session_id?: string;
}
