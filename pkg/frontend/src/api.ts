/** Thin typed client for the annotation service.
 *
 * The client never computes geometry: every 3D position, implied diameter,
 * locus, and residual shown in the UI comes from a server response.
 */

import type {
  ApiErrorBody,
  FitResponse,
  Guides,
  ImageMeta,
  Pixel,
  PutAnnotationResponse,
  SequenceSummary,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly body: ApiErrorBody,
  ) {
    super(`${body.code}: ${body.message}`);
  }
}

async function parseError(response: Response): Promise<never> {
  let body: ApiErrorBody;
  try {
    body = (await response.json()) as ApiErrorBody;
  } catch {
    body = { code: "http_error", message: response.statusText, detail: null };
  }
  throw new ApiError(response.status, body);
}

export class ApiClient {
  constructor(private readonly baseUrl: string = "") {}

  private async getJson<T>(path: string): Promise<T> {
    const response = await fetch(this.baseUrl + path);
    if (!response.ok) await parseError(response);
    return (await response.json()) as T;
  }

  private async sendJson<T>(method: string, path: string, payload: unknown): Promise<T> {
    const response = await fetch(this.baseUrl + path, {
      method,
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(payload),
    });
    if (!response.ok) await parseError(response);
    return (await response.json()) as T;
  }

  listSequences(): Promise<SequenceSummary[]> {
    return this.getJson("/api/sequences");
  }

  getImage(imageId: string): Promise<ImageMeta> {
    return this.getJson(`/api/images/${encodeURIComponent(imageId)}`);
  }

  imageDataUrl(imageId: string): string {
    return `${this.baseUrl}/api/images/${encodeURIComponent(imageId)}/data`;
  }

  getGuides(imageId: string, center: Pixel, samples?: number): Promise<Guides> {
    return this.sendJson("POST", `/api/images/${encodeURIComponent(imageId)}/guides`, {
      center,
      samples,
    });
  }

  putAnnotation(imageId: string, center: Pixel, ground: Pixel): Promise<PutAnnotationResponse> {
    return this.sendJson("PUT", `/api/images/${encodeURIComponent(imageId)}/annotation`, {
      center,
      ground,
    });
  }

  fitTrajectory(trajectoryId: string): Promise<FitResponse> {
    return this.sendJson("POST", `/api/trajectories/${encodeURIComponent(trajectoryId)}/fit`, {});
  }

  exportTrajectory(trajectoryId: string): Promise<unknown> {
    return this.getJson(`/api/trajectories/${encodeURIComponent(trajectoryId)}/export`);
  }
}
