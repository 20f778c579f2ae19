/** Annotation state machines, free of DOM so they are unit-testable.
 *
 * Annotate flow: the first click fixes the ball center and fetches the
 * calibration-constrained guides; the second click snaps to the projection
 * locus; submit stores the pair server-side and records the acknowledged
 * revision. Review flow: fit a trajectory, surface residual-flagged images,
 * reopen them for correction, and refit.
 */

import { snapToPolyline } from "./snap.js";
import type { FitResponse, Guides, ImageMeta, Pixel, PutAnnotationResponse } from "./types.js";

/** The slice of the service API the flows need; ApiClient satisfies it. */
export interface AnnotationApi {
  getImage(imageId: string): Promise<ImageMeta>;
  getGuides(imageId: string, center: Pixel, samples?: number): Promise<Guides>;
  putAnnotation(imageId: string, center: Pixel, ground: Pixel): Promise<PutAnnotationResponse>;
  fitTrajectory(trajectoryId: string): Promise<FitResponse>;
}

export type Mode = "annotate" | "review";

export interface UiAnnotationState {
  imageId: string | null;
  meta: ImageMeta | null;
  pendingCenter: Pixel | null;
  pendingProjection: Pixel | null;
  guides: Guides | null;
  revision: number;
  mode: Mode;
  lastResult: PutAnnotationResponse | null;
  conflict: boolean;
}

function initialState(): UiAnnotationState {
  return {
    imageId: null,
    meta: null,
    pendingCenter: null,
    pendingProjection: null,
    guides: null,
    revision: 0,
    mode: "annotate",
    lastResult: null,
    conflict: false,
  };
}

export class AnnotationFlow {
  state: UiAnnotationState = initialState();

  constructor(
    private readonly client: AnnotationApi,
    private readonly onChange: (state: UiAnnotationState) => void = () => {},
  ) {}

  private emit(): void {
    this.onChange(this.state);
  }

  async openImage(imageId: string): Promise<ImageMeta> {
    const meta = await this.client.getImage(imageId);
    this.state = {
      ...initialState(),
      mode: this.state.mode,
      imageId,
      meta,
      revision: meta.revision,
    };
    this.emit();
    return meta;
  }

  setMode(mode: Mode): void {
    this.state = { ...this.state, mode };
    this.emit();
  }

  /** First click: ball center. Second click: snapped vertical projection. */
  async clickAt(pixel: Pixel): Promise<void> {
    if (this.state.imageId === null) throw new Error("no image open");
    if (this.state.pendingCenter === null) {
      const guides = await this.client.getGuides(this.state.imageId, pixel);
      this.state = { ...this.state, pendingCenter: pixel, guides, pendingProjection: null };
    } else {
      if (this.state.guides === null) throw new Error("guides missing for projection click");
      const snapped = snapToPolyline(pixel, this.state.guides.locus);
      this.state = { ...this.state, pendingProjection: snapped.point };
    }
    this.emit();
  }

  /** Undo the last click: projection first, then center (with its guides). */
  undo(): void {
    if (this.state.pendingProjection !== null) {
      this.state = { ...this.state, pendingProjection: null };
    } else if (this.state.pendingCenter !== null) {
      this.state = { ...this.state, pendingCenter: null, guides: null };
    }
    this.emit();
  }

  cancel(): void {
    this.state = {
      ...this.state,
      pendingCenter: null,
      pendingProjection: null,
      guides: null,
      lastResult: null,
    };
    this.emit();
  }

  canSubmit(): boolean {
    return this.state.pendingCenter !== null && this.state.pendingProjection !== null;
  }

  /** PUT the pending pair; keeps the clicks when the server rejects them. */
  async submit(): Promise<PutAnnotationResponse> {
    const { imageId, pendingCenter, pendingProjection, revision } = this.state;
    if (imageId === null || pendingCenter === null || pendingProjection === null) {
      throw new Error("both clicks are required before submitting");
    }
    const result = await this.client.putAnnotation(imageId, pendingCenter, pendingProjection);
    // Someone else wrote between our load and this ack: flag for reload.
    const conflict = result.revision !== revision + 1;
    this.state = {
      ...this.state,
      revision: result.revision,
      lastResult: result,
      conflict,
      pendingCenter: null,
      pendingProjection: null,
      guides: null,
    };
    this.emit();
    return result;
  }
}

export interface ReviewState {
  trajectoryId: string | null;
  fit: FitResponse | null;
  flagged: string[];
}

export class ReviewFlow {
  state: ReviewState = { trajectoryId: null, fit: null, flagged: [] };

  constructor(
    private readonly client: AnnotationApi,
    private readonly onChange: (state: ReviewState) => void = () => {},
  ) {}

  private emit(): void {
    this.onChange(this.state);
  }

  async load(trajectoryId: string): Promise<FitResponse> {
    const fit = await this.client.fitTrajectory(trajectoryId);
    this.state = { trajectoryId, fit, flagged: [...fit.outliers] };
    this.emit();
    return fit;
  }

  isFlagged(imageId: string): boolean {
    return this.state.flagged.includes(imageId);
  }

  /** Store a corrected annotation and refit; returns old and new RMS. */
  async correct(
    imageId: string,
    center: Pixel,
    ground: Pixel,
  ): Promise<{ previousRms: number; rms: number }> {
    if (this.state.trajectoryId === null || this.state.fit === null) {
      throw new Error("no trajectory loaded");
    }
    const previousRms = this.state.fit.rms;
    await this.client.putAnnotation(imageId, center, ground);
    const fit = await this.load(this.state.trajectoryId);
    return { previousRms, rms: fit.rms };
  }
}
