/** Canvas drawing for the annotation view. All geometry arrives in image
 * pixel coordinates; the view transform is a uniform scale + pan. */

import type { FitResponse, Guides, Pixel } from "./types.js";

export interface ViewTransform {
  scale: number;
  offsetX: number;
  offsetY: number;
}

export function imageToCanvas(view: ViewTransform, p: Pixel): Pixel {
  return [p[0] * view.scale + view.offsetX, p[1] * view.scale + view.offsetY];
}

export function canvasToImage(view: ViewTransform, p: Pixel): Pixel {
  return [(p[0] - view.offsetX) / view.scale, (p[1] - view.offsetY) / view.scale];
}

export function fitView(
  canvasWidth: number,
  canvasHeight: number,
  imageWidth: number,
  imageHeight: number,
): ViewTransform {
  const scale = Math.min(canvasWidth / imageWidth, canvasHeight / imageHeight);
  return {
    scale,
    offsetX: (canvasWidth - imageWidth * scale) / 2,
    offsetY: (canvasHeight - imageHeight * scale) / 2,
  };
}

function polyline(
  ctx: CanvasRenderingContext2D,
  view: ViewTransform,
  points: Pixel[],
  stroke: string,
  width = 1.5,
): void {
  if (points.length < 2) return;
  ctx.strokeStyle = stroke;
  ctx.lineWidth = width;
  ctx.beginPath();
  const [x0, y0] = imageToCanvas(view, points[0]);
  ctx.moveTo(x0, y0);
  for (const p of points.slice(1)) {
    const [x, y] = imageToCanvas(view, p);
    ctx.lineTo(x, y);
  }
  ctx.stroke();
}

export function drawMarker(
  ctx: CanvasRenderingContext2D,
  view: ViewTransform,
  p: Pixel,
  color: string,
  radius = 5,
): void {
  const [x, y] = imageToCanvas(view, p);
  ctx.strokeStyle = color;
  ctx.lineWidth = 1.5;
  ctx.beginPath();
  ctx.arc(x, y, radius, 0, Math.PI * 2);
  ctx.stroke();
  ctx.beginPath();
  ctx.moveTo(x - radius, y);
  ctx.lineTo(x + radius, y);
  ctx.moveTo(x, y - radius);
  ctx.lineTo(x, y + radius);
  ctx.stroke();
}

export function drawGuides(
  ctx: CanvasRenderingContext2D,
  view: ViewTransform,
  guides: Guides,
): void {
  polyline(ctx, view, guides.locus, "#39f", 1.5);
  for (const segment of guides.cross) {
    polyline(ctx, view, segment, "#fc3", 1.5);
  }
}

export function drawFitOverlay(
  ctx: CanvasRenderingContext2D,
  view: ViewTransform,
  fit: FitResponse,
  imageId: string,
): void {
  const curve = fit.overlay[imageId];
  if (curve) polyline(ctx, view, curve, "#3c6", 2);
}

export function residualColor(fit: FitResponse, imageId: string): string {
  return fit.outliers.includes(imageId) ? "#e33" : "#3c6";
}
