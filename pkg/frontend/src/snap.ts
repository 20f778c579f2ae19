/** Pixel-space snapping onto the projection locus polyline.
 *
 * The server samples the locus; the client interpolates linearly between
 * samples so the snapped point is the true nearest point on the polyline,
 * independent of zoom or sample spacing.
 */

import type { Pixel } from "./types.js";

export interface SnapResult {
  point: Pixel;
  distance: number;
  segment: number;
  t: number; // position within the segment, in [0, 1]
}

export function nearestOnSegment(p: Pixel, a: Pixel, b: Pixel): { point: Pixel; t: number } {
  const dx = b[0] - a[0];
  const dy = b[1] - a[1];
  const lengthSq = dx * dx + dy * dy;
  if (lengthSq === 0) return { point: [a[0], a[1]], t: 0 };
  let t = ((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / lengthSq;
  t = Math.max(0, Math.min(1, t));
  return { point: [a[0] + t * dx, a[1] + t * dy], t };
}

export function snapToPolyline(p: Pixel, polyline: Pixel[]): SnapResult {
  if (polyline.length === 0) {
    throw new Error("cannot snap to an empty polyline");
  }
  if (polyline.length === 1) {
    const only = polyline[0];
    return { point: [only[0], only[1]], distance: Math.hypot(p[0] - only[0], p[1] - only[1]), segment: 0, t: 0 };
  }
  let best: SnapResult | null = null;
  for (let i = 0; i + 1 < polyline.length; i++) {
    const { point, t } = nearestOnSegment(p, polyline[i], polyline[i + 1]);
    const distance = Math.hypot(p[0] - point[0], p[1] - point[1]);
    if (best === null || distance < best.distance) {
      best = { point, distance, segment: i, t };
    }
  }
  return best as SnapResult;
}
