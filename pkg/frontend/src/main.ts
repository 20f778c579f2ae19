/** DOM bootstrap: image navigation, click handling, keyboard shortcuts.
 *
 * Keys: n/p next/previous image, u undo last click, enter submit,
 * m toggle annotate/review mode.
 */

import { ApiClient } from "./api.js";
import {
  canvasToImage,
  drawFitOverlay,
  drawGuides,
  drawMarker,
  fitView,
  residualColor,
  type ViewTransform,
} from "./render.js";
import { AnnotationFlow, ReviewFlow } from "./state.js";
import type { SequenceSummary } from "./types.js";

const client = new ApiClient("");
const canvas = document.getElementById("view") as HTMLCanvasElement;
const ctx = canvas.getContext("2d") as CanvasRenderingContext2D;
const status = document.getElementById("status") as HTMLElement;
const sequenceSelect = document.getElementById("sequence") as HTMLSelectElement;
const banner = document.getElementById("banner") as HTMLElement;

let sequences: SequenceSummary[] = [];
let imageIds: string[] = [];
let imageIndex = 0;
let view: ViewTransform = { scale: 1, offsetX: 0, offsetY: 0 };
let bitmap: ImageBitmap | null = null;

const review = new ReviewFlow(client, () => redraw());
const flow = new AnnotationFlow(client, () => redraw());

function setStatus(text: string): void {
  status.textContent = text;
}

function setBanner(text: string | null): void {
  banner.textContent = text ?? "";
  banner.style.display = text ? "block" : "none";
}

function redraw(): void {
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  if (bitmap && flow.state.meta) {
    view = fitView(canvas.width, canvas.height, flow.state.meta.width, flow.state.meta.height);
    ctx.drawImage(
      bitmap,
      view.offsetX,
      view.offsetY,
      flow.state.meta.width * view.scale,
      flow.state.meta.height * view.scale,
    );
  }
  if (flow.state.guides) drawGuides(ctx, view, flow.state.guides);
  if (flow.state.pendingCenter) drawMarker(ctx, view, flow.state.pendingCenter, "#e3e");
  if (flow.state.pendingProjection) drawMarker(ctx, view, flow.state.pendingProjection, "#39f");
  const stored = flow.state.meta?.annotation;
  if (stored) {
    const color =
      flow.state.mode === "review" && review.state.fit && flow.state.imageId
        ? residualColor(review.state.fit, flow.state.imageId)
        : "#3c6";
    drawMarker(ctx, view, stored.center, color, 7);
    if (stored.ground) drawMarker(ctx, view, stored.ground, color, 4);
  }
  if (flow.state.mode === "review" && review.state.fit && flow.state.imageId) {
    drawFitOverlay(ctx, view, review.state.fit, flow.state.imageId);
  }
  if (flow.state.conflict) {
    setBanner("Annotation changed on the server since this image was loaded; reload (n/p).");
  }
}

async function openImage(index: number): Promise<void> {
  imageIndex = (index + imageIds.length) % imageIds.length;
  const imageId = imageIds[imageIndex];
  const meta = await flow.openImage(imageId);
  const blob = await (await fetch(client.imageDataUrl(imageId))).blob();
  bitmap = await createImageBitmap(blob);
  setBanner(null);
  setStatus(
    `${imageId} (${imageIndex + 1}/${imageIds.length}) rev ${meta.revision} ` +
      `[${flow.state.mode}] - click ball center`,
  );
  redraw();
}

async function openSequence(sequenceId: string): Promise<void> {
  const sequence = sequences.find((s) => s.id === sequenceId);
  if (!sequence) return;
  imageIds = sequence.images;
  if (flow.state.mode === "review") {
    try {
      await review.load(sequence.id);
      setBanner(
        review.state.flagged.length
          ? `Flagged for review: ${review.state.flagged.join(", ")}`
          : null,
      );
    } catch (error) {
      setBanner(`Fit failed: ${(error as Error).message}`);
    }
  }
  await openImage(0);
}

canvas.addEventListener("click", async (event) => {
  if (!flow.state.meta) return;
  const rect = canvas.getBoundingClientRect();
  const pixel = canvasToImage(view, [event.clientX - rect.left, event.clientY - rect.top]);
  try {
    await flow.clickAt(pixel);
    setStatus(
      flow.state.pendingProjection
        ? "projection snapped - enter to submit, u to undo"
        : "now click the vertical projection on the court (snaps to the blue locus)",
    );
  } catch (error) {
    setStatus(`rejected: ${(error as Error).message}`);
  }
});

document.addEventListener("keydown", async (event) => {
  if (event.key === "n") await openImage(imageIndex + 1);
  else if (event.key === "p") await openImage(imageIndex - 1);
  else if (event.key === "u") flow.undo();
  else if (event.key === "m") {
    flow.setMode(flow.state.mode === "annotate" ? "review" : "annotate");
    await openSequence(sequenceSelect.value);
  } else if (event.key === "Enter" && flow.canSubmit()) {
    try {
      const result = await flow.submit();
      const [x, y, z] = result.position;
      setStatus(
        `stored rev ${result.revision}: ball at (${x.toFixed(2)}, ${y.toFixed(2)}, ` +
          `${z.toFixed(2)}) m, implied diameter ${result.diameter_px.toFixed(1)} px` +
          (result.warning ? ` - ${result.warning}` : ""),
      );
      if (flow.state.mode === "review" && review.state.trajectoryId) {
        await review.load(review.state.trajectoryId);
        setBanner(`RMS ${review.state.fit?.rms.toFixed(3)} m`);
      }
      await openImage(imageIndex); // refresh stored annotation + revision
    } catch (error) {
      setStatus(`rejected: ${(error as Error).message}`); // clicks kept
    }
  }
});

sequenceSelect.addEventListener("change", () => void openSequence(sequenceSelect.value));

async function boot(): Promise<void> {
  sequences = await client.listSequences();
  sequenceSelect.replaceChildren(
    ...sequences.map((s) => {
      const option = document.createElement("option");
      option.value = s.id;
      option.textContent = `${s.id} (${s.annotated}/${s.image_count})`;
      return option;
    }),
  );
  if (sequences.length) await openSequence(sequences[0].id);
  else setStatus("manifest has no trajectories");
}

void boot();
