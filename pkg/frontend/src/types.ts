// Payload shapes of the annotation service REST API.

export const LABELS = ['entailment', 'neutral', 'contradiction'] as const
export type Label = (typeof LABELS)[number]

export function isLabel(value: unknown): value is Label {
  return typeof value === 'string' && (LABELS as readonly string[]).includes(value)
}

export interface BatchItem {
  example_id: string
  premise: string
  hypothesis: string
  suggested_explanation: string | null
  predicted_label?: string | null
}

export interface BatchPayload {
  session_id: string
  round: number
  items: BatchItem[]
}

export interface CurvePoint {
  iteration: number
  n_labeled: number
  accuracy: number | null
}

export interface MetricsPayload {
  session_id: string
  phase: 'awaiting_batch' | 'awaiting_annotations' | 'training' | 'idle'
  rounds_completed: number
  unlabeled: number
  labeled: number
  curve: CurvePoint[]
  flags: string[]
}

export interface AnnotationEvent {
  example_id: string
  label: Label
  explanation: string
  annotator_id: string
}

export interface SubmitReceipt {
  session_id: string
  round: number
  accepted: number
}

export interface SessionConfigPayload {
  x_total?: number
  strategy?: string
  seed?: number
  pool_size?: number
  eval_dataset?: string
  eval_per_category?: number
  max_rounds?: number
  show_predicted_label?: boolean
}
