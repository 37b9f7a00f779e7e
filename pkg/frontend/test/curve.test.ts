import { describe, expect, it } from 'vitest'

import { curvePolyline, curveViewFromMetrics } from '../src/curve.js'
import type { MetricsPayload } from '../src/types.js'

const PAYLOAD: MetricsPayload = {
  session_id: 'abc123',
  phase: 'awaiting_batch',
  rounds_completed: 3,
  unlabeled: 27,
  labeled: 9,
  curve: [
    { iteration: 1, n_labeled: 3, accuracy: 0.5 },
    { iteration: 2, n_labeled: 6, accuracy: 0.6666666666666666 },
    { iteration: 3, n_labeled: 9, accuracy: null },
  ],
  flags: [],
}

describe('curveViewFromMetrics', () => {
  it('is a verbatim projection of the payload', () => {
    const view = curveViewFromMetrics(PAYLOAD)
    expect(view.sessionId).toBe(PAYLOAD.session_id)
    expect(view.phase).toBe(PAYLOAD.phase)
    expect(view.unlabeled).toBe(PAYLOAD.unlabeled)
    expect(view.labeled).toBe(PAYLOAD.labeled)
    // Exact equality, including the unrounded accuracy and the null.
    expect(view.points).toEqual(PAYLOAD.curve)
  })

  it('never mutates or aliases the payload', () => {
    const payload = structuredClone(PAYLOAD)
    const view = curveViewFromMetrics(payload)
    view.points[0]!.accuracy = 0.999
    view.flags.push('local noise')
    expect(payload.curve[0]!.accuracy).toBe(0.5)
    expect(payload.flags).toEqual([])
  })

  it('renders an empty chart for a fresh session', () => {
    const view = curveViewFromMetrics({ ...PAYLOAD, curve: [], labeled: 0, unlabeled: 36 })
    expect(view.points).toEqual([])
    expect(curvePolyline(view.points)).toBe('')
  })

  it('emits one polyline vertex per non-null point', () => {
    const line = curvePolyline(PAYLOAD.curve)
    expect(line.split(' ')).toHaveLength(2) // third point has null accuracy
  })

  it('keeps vertices inside the viewport and ordered by iteration', () => {
    const points = Array.from({ length: 10 }, (_, i) => ({
      iteration: i + 1,
      n_labeled: (i + 1) * 9,
      accuracy: (i + 1) / 10,
    }))
    const coords = curvePolyline(points, 560, 240, 30)
      .split(' ')
      .map((pair) => pair.split(',').map(Number) as [number, number])
    expect(coords).toHaveLength(10)
    for (const [x, y] of coords) {
      expect(x).toBeGreaterThanOrEqual(30)
      expect(x).toBeLessThanOrEqual(530)
      expect(y).toBeGreaterThanOrEqual(30)
      expect(y).toBeLessThanOrEqual(210)
    }
    for (let i = 1; i < coords.length; i++) {
      expect(coords[i]![0]).toBeGreaterThan(coords[i - 1]![0])
      expect(coords[i]![1]).toBeLessThan(coords[i - 1]![1]) // higher accuracy = higher on screen
    }
  })
})
