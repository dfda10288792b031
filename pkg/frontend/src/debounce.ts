/**
 * Trailing debounce — fires `delayMs` after the last call with the last
 * arguments. Slider drags collapse into one request per pause.
 */
// eslint-disable-next-line @typescript-eslint/no-explicit-any
export function debounce<T extends (...args: any[]) => void>(
  fn: T,
  delayMs: number,
): T & { cancel(): void; flush(): void } {
  let timerId: ReturnType<typeof setTimeout> | null = null
  // eslint-disable-next-line @typescript-eslint/no-explicit-any
  let lastArgs: any[] | null = null

  // eslint-disable-next-line @typescript-eslint/no-explicit-any
  const debounced = ((...args: any[]) => {
    lastArgs = args
    if (timerId !== null) clearTimeout(timerId)
    timerId = setTimeout(() => {
      timerId = null
      const a = lastArgs!
      lastArgs = null
      fn(...a)
    }, delayMs)
  }) as T & { cancel(): void; flush(): void }

  debounced.cancel = () => {
    if (timerId !== null) {
      clearTimeout(timerId)
      timerId = null
      lastArgs = null
    }
  }

  debounced.flush = () => {
    if (timerId !== null) {
      clearTimeout(timerId)
      timerId = null
      const a = lastArgs!
      lastArgs = null
      fn(...a)
    }
  }

  return debounced
}
