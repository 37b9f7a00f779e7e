// Form state for one annotation batch.
//
// Suggested explanations pre-fill the draft but stay marked as AI
// suggestions until the annotator edits or explicitly confirms them; the
// mark is presentation only. Submission is possible exactly when every
// item has a label and a non-whitespace explanation.

import type { AnnotationEvent, BatchItem, BatchPayload, Label } from './types.js'
import { isLabel } from './types.js'

export type SuggestionState = 'none' | 'suggested' | 'edited' | 'confirmed'

export interface ItemDraft {
  label: Label | null
  explanation: string
  suggestion: SuggestionState
}

export interface ItemProblem {
  example_id: string
  missingLabel: boolean
  missingExplanation: boolean
  serverRejected: boolean
}

export class BatchForm {
  readonly sessionId: string
  readonly round: number
  readonly items: BatchItem[]
  private drafts: Map<string, ItemDraft>
  private rejected: Set<string> = new Set()

  constructor(batch: BatchPayload) {
    this.sessionId = batch.session_id
    this.round = batch.round
    this.items = batch.items
    this.drafts = new Map(
      batch.items.map((item) => [
        item.example_id,
        {
          label: null,
          explanation: item.suggested_explanation ?? '',
          suggestion: item.suggested_explanation ? 'suggested' : 'none',
        } satisfies ItemDraft,
      ]),
    )
  }

  draft(exampleId: string): ItemDraft {
    const draft = this.drafts.get(exampleId)
    if (!draft) throw new Error(`unknown example id ${exampleId}`)
    return draft
  }

  setLabel(exampleId: string, label: string | null): void {
    const draft = this.draft(exampleId)
    draft.label = label !== null && isLabel(label) ? label : null
    this.rejected.delete(exampleId)
  }

  setExplanation(exampleId: string, text: string): void {
    const draft = this.draft(exampleId)
    if (text !== draft.explanation && draft.suggestion !== 'none') {
      draft.suggestion = 'edited'
    }
    draft.explanation = text
    this.rejected.delete(exampleId)
  }

  confirmSuggestion(exampleId: string): void {
    const draft = this.draft(exampleId)
    if (draft.suggestion === 'suggested') draft.suggestion = 'confirmed'
  }

  markRejected(exampleIds: string[]): void {
    for (const id of exampleIds) if (this.drafts.has(id)) this.rejected.add(id)
  }

  problems(): ItemProblem[] {
    const out: ItemProblem[] = []
    for (const item of this.items) {
      const draft = this.draft(item.example_id)
      const missingLabel = draft.label === null
      const missingExplanation = draft.explanation.trim().length === 0
      if (missingLabel || missingExplanation || this.rejected.has(item.example_id)) {
        out.push({
          example_id: item.example_id,
          missingLabel,
          missingExplanation,
          serverRejected: this.rejected.has(item.example_id),
        })
      }
    }
    return out
  }

  get submittable(): boolean {
    return this.items.every((item) => {
      const draft = this.draft(item.example_id)
      return draft.label !== null && draft.explanation.trim().length > 0
    })
  }

  toEvents(annotatorId: string): AnnotationEvent[] {
    if (!this.submittable) {
      throw new Error('batch is not submittable: ' + JSON.stringify(this.problems()))
    }
    return this.items.map((item) => {
      const draft = this.draft(item.example_id)
      return {
        example_id: item.example_id,
        label: draft.label as Label,
        explanation: draft.explanation,
        annotator_id: annotatorId,
      }
    })
  }
}
