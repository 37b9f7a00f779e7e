// Typed fetch client for the annotation service. Submission is guarded so
// repeated clicks while a POST is in flight reuse the same request.

import type {
  AnnotationEvent,
  BatchPayload,
  MetricsPayload,
  SessionConfigPayload,
  SubmitReceipt,
} from './types.js'

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
    readonly body: Record<string, unknown> = {},
  ) {
    super(`HTTP ${status}: ${detail}`)
  }
}

export class PhaseConflictError extends ApiError {}

export class BatchMismatchError extends ApiError {
  get missing(): string[] {
    return Array.isArray(this.body['missing']) ? (this.body['missing'] as string[]) : []
  }
}

async function parseError(response: Response): Promise<never> {
  let body: Record<string, unknown> = {}
  try {
    body = (await response.json()) as Record<string, unknown>
  } catch {
    // not JSON; keep the empty body
  }
  const detail = typeof body['detail'] === 'string' ? (body['detail'] as string) : response.statusText
  if (response.status === 409) throw new PhaseConflictError(409, detail, body)
  if (response.status === 422) throw new BatchMismatchError(422, detail, body)
  throw new ApiError(response.status, detail, body)
}

export class AnnotationClient {
  private pendingSubmit: Promise<SubmitReceipt> | null = null

  constructor(readonly baseUrl: string) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await fetch(this.baseUrl + path, {
      headers: { 'Content-Type': 'application/json' },
      ...init,
    })
    if (!response.ok) await parseError(response)
    return (await response.json()) as T
  }

  async createSession(dataset: string, config: SessionConfigPayload = {}): Promise<string> {
    const data = await this.request<{ session_id: string }>('/sessions', {
      method: 'POST',
      body: JSON.stringify({ dataset, config }),
    })
    return data.session_id
  }

  nextBatch(sessionId: string): Promise<BatchPayload> {
    return this.request<BatchPayload>(`/sessions/${sessionId}/batch`)
  }

  currentBatch(sessionId: string): Promise<BatchPayload> {
    return this.request<BatchPayload>(`/sessions/${sessionId}/batch/current`)
  }

  metrics(sessionId: string): Promise<MetricsPayload> {
    return this.request<MetricsPayload>(`/sessions/${sessionId}/metrics`)
  }

  // Loads whatever batch the session is in a position to give: the pending
  // one when annotations are awaited, otherwise a freshly proposed one.
  async loadBatch(sessionId: string): Promise<BatchPayload> {
    const metrics = await this.metrics(sessionId)
    if (metrics.phase === 'awaiting_annotations') return this.currentBatch(sessionId)
    return this.nextBatch(sessionId)
  }

  submitAnnotations(sessionId: string, events: AnnotationEvent[]): Promise<SubmitReceipt> {
    if (this.pendingSubmit) return this.pendingSubmit
    this.pendingSubmit = this.request<SubmitReceipt>(`/sessions/${sessionId}/annotations`, {
      method: 'POST',
      body: JSON.stringify({ events }),
    }).finally(() => {
      this.pendingSubmit = null
    })
    return this.pendingSubmit
  }

  get submitting(): boolean {
    return this.pendingSubmit !== null
  }
}

export async function pollUntil<T>(
  fetchOnce: () => Promise<T>,
  done: (value: T) => boolean,
  options: { intervalMs?: number; timeoutMs?: number } = {},
): Promise<T> {
  const intervalMs = options.intervalMs ?? 300
  const timeoutMs = options.timeoutMs ?? 60_000
  const deadline = Date.now() + timeoutMs
  for (;;) {
    const value = await fetchOnce()
    if (done(value)) return value
    if (Date.now() > deadline) throw new Error(`poll timed out after ${timeoutMs}ms`)
    await new Promise((resolve) => setTimeout(resolve, intervalMs))
  }
}
