// The learning-curve view is a verbatim projection of the metrics payload:
// no recomputation, no smoothing, no client-side derivation of values.

import type { CurvePoint, MetricsPayload } from './types.js'

export interface CurveView {
  sessionId: string
  phase: MetricsPayload['phase']
  unlabeled: number
  labeled: number
  points: CurvePoint[]
  flags: string[]
}

export function curveViewFromMetrics(metrics: MetricsPayload): CurveView {
  return {
    sessionId: metrics.session_id,
    phase: metrics.phase,
    unlabeled: metrics.unlabeled,
    labeled: metrics.labeled,
    points: metrics.curve.map((point) => ({ ...point })),
    flags: [...metrics.flags],
  }
}

// SVG polyline for the accuracy points (null accuracies are skipped).
// Geometry only; the numbers themselves pass through untouched.
export function curvePolyline(
  points: CurvePoint[],
  width = 560,
  height = 240,
  margin = 30,
): string {
  const drawable = points.filter((p) => p.accuracy !== null)
  if (drawable.length === 0) return ''
  const maxIteration = Math.max(...drawable.map((p) => p.iteration), 1)
  const x = (iteration: number) =>
    margin + ((width - 2 * margin) * (iteration - 1)) / Math.max(maxIteration - 1, 1)
  const y = (accuracy: number) => height - margin - (height - 2 * margin) * accuracy
  return drawable.map((p) => `${x(p.iteration).toFixed(1)},${y(p.accuracy as number).toFixed(1)}`).join(' ')
}
