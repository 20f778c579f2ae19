/** Wire types of the annotation service API. */

export type Pixel = [number, number];

export interface SequenceSummary {
  id: string;
  image_count: number;
  annotated: number;
  completeness: number;
  images: string[];
  timestamps: number[];
}

export interface AnnotationBody {
  center: Pixel;
  ground?: Pixel;
  diameter?: number;
  visible?: boolean;
}

export interface ImageMeta {
  id: string;
  camera_id: string;
  width: number;
  height: number;
  annotation: AnnotationBody | null;
  revision: number;
}

export interface Guides {
  locus: Pixel[];
  heights: number[];
  cross: Pixel[][];
  floor_point: [number, number, number];
}

export interface PutAnnotationResponse {
  revision: number;
  position: [number, number, number];
  diameter_px: number;
  gap_m: number;
  warning: string | null;
}

export interface FitResponse {
  trajectory_id: string;
  image_ids: string[];
  p0: number[];
  v0: number[];
  g: number;
  rms: number;
  residuals: Record<string, number[]>;
  residual_norms: Record<string, number>;
  outliers: string[];
  denoised: Record<string, number[]>;
  overlay: Record<string, Pixel[]>;
}

export interface ApiErrorBody {
  code: string;
  message: string;
  detail: string | null;
}
