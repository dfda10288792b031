/** Task vector, one restoration level per degradation type, each in [0,1]. */
export type Task = [number, number, number]

export function clampTask(t: readonly number[]): Task {
  const c = (v: number) => (Number.isFinite(v) ? Math.min(1, Math.max(0, v)) : 0)
  return [c(t[0] ?? 0), c(t[1] ?? 0), c(t[2] ?? 0)]
}

/** Cost figures reported by the server for one restore. */
export interface CostInfo {
  thisEffect: number
  amortized: number
  prefixReused: boolean
}

/**
 * Monotone request ids with stale-response rejection: a response is
 * accepted only if no response with a higher id has been applied yet.
 */
export class RequestSequencer {
  private nextId = 1
  private applied = 0

  issue(): number {
    return this.nextId++
  }

  /** Returns true if the response for `id` may be applied. */
  accept(id: number): boolean {
    if (id <= this.applied) return false
    this.applied = id
    return true
  }
}

/**
 * Serializes restore requests: at most one in flight, and while one is
 * in flight only the latest requested task is kept (intermediate slider
 * positions are coalesced away). Responses that lost the race against a
 * newer request are discarded.
 */
export class ModulationLoop<R> {
  private seq = new RequestSequencer()
  private inFlight = false
  private pending: Task | null = null

  constructor(
    private send: (task: Task) => Promise<R>,
    private apply: (result: R, task: Task) => void,
    private onError: (err: unknown) => void = () => {},
  ) {}

  request(task: Task): void {
    if (this.inFlight) {
      this.pending = clampTask(task)
      return
    }
    void this.launch(clampTask(task))
  }

  get busy(): boolean {
    return this.inFlight
  }

  private async launch(task: Task): Promise<void> {
    const id = this.seq.issue()
    this.inFlight = true
    try {
      const result = await this.send(task)
      if (this.seq.accept(id)) this.apply(result, task)
    } catch (err) {
      this.onError(err)
    } finally {
      this.inFlight = false
      if (this.pending !== null) {
        const next = this.pending
        this.pending = null
        this.request(next)
      }
    }
  }
}
