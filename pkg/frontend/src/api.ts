import type { CostInfo, Task } from './state'

export interface SessionInfo {
  sessionId: string
  width: number
  height: number
}

export interface RestoreResult {
  blob: Blob
  cost: CostInfo
}

/** All FLOPs figures come from these response headers; the UI never
 * computes cost numbers itself. */
export function parseCostHeaders(headers: Headers): CostInfo {
  return {
    thisEffect: Number(headers.get('X-Flops-This-Effect') ?? 'NaN'),
    amortized: Number(headers.get('X-Flops-Amortized') ?? 'NaN'),
    prefixReused: headers.get('X-Prefix-Reused') === 'true',
  }
}

async function errorMessage(res: Response): Promise<string> {
  try {
    const body = await res.json()
    if (body && typeof body.error === 'string') return body.error
  } catch {
    // non-JSON error body
  }
  return `server returned ${res.status}`
}

export class ModulationApi {
  constructor(private baseUrl: string = '') {}

  async createSession(file: Blob): Promise<SessionInfo> {
    const res = await fetch(`${this.baseUrl}/v1/session`, {
      method: 'POST',
      body: file,
    })
    if (!res.ok) throw new Error(await errorMessage(res))
    const body = await res.json()
    return { sessionId: body.session_id, width: body.width, height: body.height }
  }

  async restore(sessionId: string, task: Task): Promise<RestoreResult> {
    const res = await fetch(`${this.baseUrl}/v1/session/${sessionId}/restore`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ task }),
    })
    if (!res.ok) throw new Error(await errorMessage(res))
    return { blob: await res.blob(), cost: parseCostHeaders(res.headers) }
  }

  async modelInfo(): Promise<unknown> {
    const res = await fetch(`${this.baseUrl}/v1/model/info`)
    if (!res.ok) throw new Error(await errorMessage(res))
    return res.json()
  }
}
