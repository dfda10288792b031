import { ModulationApi, RestoreResult } from './api'
import { debounce } from './debounce'
import { ModulationLoop, Task, clampTask } from './state'
import { clampPercent, wipeClip } from './wipe'

const $ = <T extends HTMLElement>(id: string) => document.getElementById(id) as T

const api = new ModulationApi('')

const fileInput = $<HTMLInputElement>('file')
const errorBanner = $<HTMLDivElement>('error')
const sessionLabel = $<HTMLSpanElement>('session-id')
const inputImg = $<HTMLImageElement>('input-img')
const restoredImg = $<HTMLImageElement>('restored-img')
const sliders = ['t-blur', 't-noise', 't-jpeg'].map((id) => $<HTMLInputElement>(id))
const sliderVals = ['v-blur', 'v-noise', 'v-jpeg'].map((id) => $<HTMLSpanElement>(id))
const firstBar = $<HTMLDivElement>('bar-first')
const thisBar = $<HTMLDivElement>('bar-this')
const firstLabel = $<HTMLSpanElement>('label-first')
const thisLabel = $<HTMLSpanElement>('label-this')
const amortizedLabel = $<HTMLSpanElement>('label-amortized')
const reusedBadge = $<HTMLSpanElement>('reused-badge')
const compareToggle = $<HTMLInputElement>('compare')
const wipeRange = $<HTMLInputElement>('wipe')
const busyDot = $<HTMLSpanElement>('busy')

let sessionId: string | null = null
let firstEffectFlops: number | null = null
let restoredUrl: string | null = null

function showError(msg: string | null): void {
  errorBanner.textContent = msg ?? ''
  errorBanner.hidden = msg === null
}

function formatFlops(f: number): string {
  if (!Number.isFinite(f)) return '?'
  if (f >= 1e9) return `${(f / 1e9).toFixed(2)} G`
  if (f >= 1e6) return `${(f / 1e6).toFixed(2)} M`
  return `${(f / 1e3).toFixed(1)} k`
}

function renderCost(thisEffect: number, amortized: number, reused: boolean): void {
  if (firstEffectFlops === null) firstEffectFlops = thisEffect
  const full = Math.max(firstEffectFlops, thisEffect)
  firstBar.style.width = `${(100 * firstEffectFlops) / full}%`
  thisBar.style.width = `${(100 * thisEffect) / full}%`
  firstLabel.textContent = formatFlops(firstEffectFlops)
  thisLabel.textContent = formatFlops(thisEffect)
  amortizedLabel.textContent = formatFlops(amortized)
  reusedBadge.hidden = !reused
}

function applyRestore(result: RestoreResult): void {
  if (restoredUrl !== null) URL.revokeObjectURL(restoredUrl)
  restoredUrl = URL.createObjectURL(result.blob)
  restoredImg.src = restoredUrl
  renderCost(result.cost.thisEffect, result.cost.amortized, result.cost.prefixReused)
  showError(null)
  busyDot.hidden = true
}

const loop = new ModulationLoop<RestoreResult>(
  (task: Task) => {
    if (sessionId === null) return Promise.reject(new Error('no session'))
    busyDot.hidden = false
    return api.restore(sessionId, task)
  },
  applyRestore,
  (err) => {
    busyDot.hidden = true
    showError(err instanceof Error ? err.message : String(err))
  },
)

function currentTask(): Task {
  return clampTask(sliders.map((s) => Number(s.value)))
}

// trailing debounce so a drag through many positions coalesces
const requestRestore = debounce(() => loop.request(currentTask()), 80)

sliders.forEach((slider, i) => {
  slider.addEventListener('input', () => {
    sliderVals[i].textContent = Number(slider.value).toFixed(2)
    if (sessionId !== null) requestRestore()
  })
})

fileInput.addEventListener('change', async () => {
  const file = fileInput.files?.[0]
  if (!file) return
  try {
    const info = await api.createSession(file)
    sessionId = info.sessionId
    firstEffectFlops = null
    sessionLabel.textContent = `${info.sessionId.slice(0, 8)} (${info.width}x${info.height})`
    inputImg.src = URL.createObjectURL(file)
    restoredImg.removeAttribute('src')
    reusedBadge.hidden = true
    showError(null)
    requestRestore()
  } catch (err) {
    showError(err instanceof Error ? err.message : String(err))
  }
})

function renderWipe(): void {
  const on = compareToggle.checked
  wipeRange.hidden = !on
  restoredImg.style.clipPath = on ? wipeClip(clampPercent(Number(wipeRange.value))) : ''
}

compareToggle.addEventListener('change', renderWipe)
wipeRange.addEventListener('input', renderWipe)
renderWipe()
