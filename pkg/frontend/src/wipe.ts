/** A/B wipe compare: the restored layer sits on top of the input and is
 * clipped to the left `percent` of the frame. 0 shows the input only,
 * 100 the restored image only. */

export function clampPercent(p: number): number {
  if (!Number.isFinite(p)) return 50
  return Math.min(100, Math.max(0, p))
}

export function wipeClip(percent: number): string {
  const p = clampPercent(percent)
  return `inset(0 ${100 - p}% 0 0)`
}
