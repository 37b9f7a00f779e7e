// DOM wiring: session controls, batch cards, submit gating, polled curve.

import { AnnotationClient, ApiError, PhaseConflictError, BatchMismatchError, pollUntil } from './client.js'
import { BatchForm } from './batchForm.js'
import { curvePolyline, curveViewFromMetrics, type CurveView } from './curve.js'
import { LABELS } from './types.js'

const POLL_MS = 1000

type Ui = {
  client: AnnotationClient
  sessionId: string | null
  form: BatchForm | null
  annotator: string
}

const state: Ui = {
  client: new AnnotationClient(''),
  sessionId: null,
  form: null,
  annotator: 'annotator',
}

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id)
  if (!node) throw new Error(`missing element #${id}`)
  return node as T
}

function showBanner(text: string, retry?: () => void): void {
  const banner = el<HTMLDivElement>('banner')
  banner.textContent = text
  banner.classList.remove('hidden')
  banner.onclick = () => {
    banner.classList.add('hidden')
    retry?.()
  }
}

function hideBanner(): void {
  el<HTMLDivElement>('banner').classList.add('hidden')
}

function renderCurve(view: CurveView): void {
  el<HTMLSpanElement>('phase-badge').textContent = view.phase
  el<HTMLSpanElement>('phase-badge').dataset['phase'] = view.phase
  el<HTMLSpanElement>('pool-counts').textContent =
    `${view.labeled} labeled / ${view.unlabeled} unlabeled`
  const svg = el<HTMLElement>('curve-svg')
  const line = svg.querySelector('polyline')
  if (line) line.setAttribute('points', curvePolyline(view.points))
  const tbody = el<HTMLTableSectionElement>('curve-rows')
  tbody.innerHTML = ''
  for (const point of view.points) {
    const row = document.createElement('tr')
    const accuracy = point.accuracy === null ? 'n/a' : point.accuracy.toFixed(4)
    row.innerHTML = `<td>${point.iteration}</td><td>${point.n_labeled}</td><td>${accuracy}</td>`
    tbody.appendChild(row)
  }
}

async function refreshCurve(): Promise<CurveView | null> {
  if (!state.sessionId) return null
  const metrics = await state.client.metrics(state.sessionId)
  const view = curveViewFromMetrics(metrics)
  renderCurve(view)
  return view
}

function updateSubmitButton(): void {
  const button = el<HTMLButtonElement>('submit')
  button.disabled = !state.form || !state.form.submittable || state.client.submitting
  const problems = state.form?.problems() ?? []
  for (const item of state.form?.items ?? []) {
    const card = document.querySelector<HTMLElement>(`[data-card="${item.example_id}"]`)
    if (!card) continue
    const problem = problems.find((p) => p.example_id === item.example_id)
    card.classList.toggle('invalid', Boolean(problem))
  }
}

function renderBatch(form: BatchForm): void {
  const container = el<HTMLDivElement>('cards')
  container.innerHTML = ''
  for (const item of form.items) {
    const card = document.createElement('div')
    card.className = 'card'
    card.dataset['card'] = item.example_id
    const draft = form.draft(item.example_id)

    const suggestion = draft.suggestion === 'suggested'
      ? '<span class="tag">AI suggestion</span>'
      : ''
    const predicted = item.predicted_label
      ? `<span class="tag predicted">model: ${item.predicted_label}</span>`
      : ''
    card.innerHTML = `
      <p class="premise">${item.premise}</p>
      <p class="hypothesis">${item.hypothesis}</p>
      <div class="labels">${LABELS.map(
        (label) => `<label><input type="radio" name="label-${item.example_id}" value="${label}"> ${label}</label>`,
      ).join(' ')}</div>
      ${predicted}
      <div class="explanation-row">${suggestion}
        <textarea rows="2" placeholder="why?"></textarea>
        <button class="confirm" ${draft.suggestion === 'suggested' ? '' : 'hidden'}>keep suggestion</button>
      </div>`

    const textarea = card.querySelector('textarea') as HTMLTextAreaElement
    textarea.value = draft.explanation
    textarea.addEventListener('input', () => {
      form.setExplanation(item.example_id, textarea.value)
      card.querySelector('.tag:not(.predicted)')?.remove()
      ;(card.querySelector('.confirm') as HTMLButtonElement).hidden = true
      updateSubmitButton()
    })
    for (const radio of card.querySelectorAll<HTMLInputElement>('input[type=radio]')) {
      radio.addEventListener('change', () => {
        form.setLabel(item.example_id, radio.value)
        updateSubmitButton()
      })
    }
    const confirm = card.querySelector('.confirm') as HTMLButtonElement
    confirm.addEventListener('click', () => {
      form.confirmSuggestion(item.example_id)
      card.querySelector('.tag:not(.predicted)')?.remove()
      confirm.hidden = true
      updateSubmitButton()
    })
    container.appendChild(card)
  }
  updateSubmitButton()
}

async function loadBatch(): Promise<void> {
  if (!state.sessionId) return
  hideBanner()
  try {
    const batch = await state.client.loadBatch(state.sessionId)
    state.form = new BatchForm(batch)
    renderBatch(state.form)
    el<HTMLDivElement>('batch-panel').classList.remove('hidden')
  } catch (error) {
    if (error instanceof PhaseConflictError) {
      // Training (or exhausted): poll until a batch can be served again.
      showBanner('training in progress, waiting...')
      await pollUntil(
        () => state.client.metrics(state.sessionId as string),
        (m) => m.phase === 'awaiting_batch' || m.phase === 'awaiting_annotations',
        { intervalMs: POLL_MS },
      )
      await refreshCurve()
      return loadBatch()
    }
    showBanner(`could not load a batch: ${String(error)} (click to retry)`, loadBatch)
  }
}

async function submitBatch(): Promise<void> {
  if (!state.sessionId || !state.form || !state.form.submittable) return
  const events = state.form.toEvents(state.annotator)
  const button = el<HTMLButtonElement>('submit')
  button.disabled = true
  try {
    await state.client.submitAnnotations(state.sessionId, events)
    el<HTMLDivElement>('batch-panel').classList.add('hidden')
    showBanner('batch accepted; training...')
    await pollUntil(
      () => state.client.metrics(state.sessionId as string),
      (m) => m.phase !== 'training',
      { intervalMs: POLL_MS },
    )
    hideBanner()
    await refreshCurve()
  } catch (error) {
    if (error instanceof BatchMismatchError) {
      state.form.markRejected(error.missing)
      updateSubmitButton()
      showBanner(`the service rejected the batch: ${error.detail}`)
    } else if (error instanceof ApiError) {
      showBanner(`submission failed: ${error.detail}`)
    } else {
      showBanner(`submission failed: ${String(error)} (click to retry)`, submitBatch)
    }
  } finally {
    updateSubmitButton()
  }
}

async function connect(): Promise<void> {
  const base = el<HTMLInputElement>('base-url').value.replace(/\/$/, '')
  state.client = new AnnotationClient(base)
  state.annotator = el<HTMLInputElement>('annotator').value || 'annotator'
  const existing = el<HTMLInputElement>('session-id').value.trim()
  try {
    if (existing) {
      state.sessionId = existing
    } else {
      const dataset = el<HTMLInputElement>('dataset').value.trim()
      state.sessionId = await state.client.createSession(dataset, { x_total: 9 })
      el<HTMLInputElement>('session-id').value = state.sessionId
    }
    hideBanner()
    el<HTMLDivElement>('workbench').classList.remove('hidden')
    await refreshCurve()
    await loadBatch()
  } catch (error) {
    showBanner(`could not connect: ${String(error)} (click to retry)`, connect)
  }
}

export function start(): void {
  el<HTMLButtonElement>('connect').addEventListener('click', () => void connect())
  el<HTMLButtonElement>('submit').addEventListener('click', () => void submitBatch())
  el<HTMLButtonElement>('refresh-curve').addEventListener('click', () => void refreshCurve())
}

if (typeof document !== 'undefined' && document.getElementById('connect')) {
  start()
}
