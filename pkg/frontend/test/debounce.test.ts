import { afterEach, beforeEach, describe, expect, it, vi } from 'vitest'

import { debounce } from '../src/debounce'

describe('trailing debounce', () => {
  beforeEach(() => vi.useFakeTimers())
  afterEach(() => vi.useRealTimers())

  it('drag through 10 positions in 200 ms issues at most 3 calls', () => {
    const calls: number[] = []
    const fn = debounce((v: number) => calls.push(v), 80)
    for (let i = 0; i < 10; i++) {
      fn(i)
      vi.advanceTimersByTime(20)
    }
    vi.advanceTimersByTime(200)
    expect(calls.length).toBeLessThanOrEqual(3)
    expect(calls.length).toBeGreaterThan(0)
  })

  it('fires once with the last arguments after the delay', () => {
    const calls: number[] = []
    const fn = debounce((v: number) => calls.push(v), 80)
    fn(1)
    fn(2)
    fn(3)
    expect(calls).toEqual([])
    vi.advanceTimersByTime(79)
    expect(calls).toEqual([])
    vi.advanceTimersByTime(1)
    expect(calls).toEqual([3])
  })

  it('a call inside the window restarts the timer', () => {
    const calls: number[] = []
    const fn = debounce((v: number) => calls.push(v), 80)
    fn(1)
    vi.advanceTimersByTime(60)
    fn(2)
    vi.advanceTimersByTime(60)
    expect(calls).toEqual([])
    vi.advanceTimersByTime(20)
    expect(calls).toEqual([2])
  })

  it('cancel drops the pending call', () => {
    const calls: number[] = []
    const fn = debounce((v: number) => calls.push(v), 80)
    fn(1)
    fn.cancel()
    vi.advanceTimersByTime(500)
    expect(calls).toEqual([])
  })

  it('flush fires the pending call immediately', () => {
    const calls: number[] = []
    const fn = debounce((v: number) => calls.push(v), 80)
    fn(7)
    fn.flush()
    expect(calls).toEqual([7])
    vi.advanceTimersByTime(500)
    expect(calls).toEqual([7])
  })
})
