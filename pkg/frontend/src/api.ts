// Typed client for the review service. Mutations carry request ids so a
// network retry with the same id can never create a duplicate review.

import type { Decision, FinalizeAck, FramePayload, PendingSummary, ReviewAck, StateSummary } from './types.js';

export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: unknown,
  ) {
    super(`API error ${status}: ${JSON.stringify(detail)}`);
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

async function parseOrThrow<T>(response: Response): Promise<T> {
  const body = await response.json().catch(() => null);
  if (!response.ok) {
    throw new ApiError(response.status, body ? (body as { detail?: unknown }).detail ?? body : null);
  }
  return body as T;
}

export class ReviewApi {
  constructor(
    private baseUrl = '',
    private fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private get(path: string): Promise<Response> {
    return this.fetchImpl(this.baseUrl + path);
  }

  private post(path: string, body: unknown): Promise<Response> {
    return this.fetchImpl(this.baseUrl + path, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(body),
    });
  }

  async getState(): Promise<StateSummary> {
    return parseOrThrow(await this.get('/api/state'));
  }

  async getPending(iteration: number): Promise<PendingSummary> {
    return parseOrThrow(await this.get(`/api/iterations/${iteration}/pending`));
  }

  async getFrame(frameId: string): Promise<FramePayload> {
    return parseOrThrow(await this.get(`/api/frames/${encodeURIComponent(frameId)}`));
  }

  async submitReview(frameId: string, requestId: string, decisions: Decision[]): Promise<ReviewAck> {
    return parseOrThrow(
      await this.post(`/api/frames/${encodeURIComponent(frameId)}/review`, {
        request_id: requestId,
        decisions,
      }),
    );
  }

  async finalize(iteration: number): Promise<FinalizeAck> {
    return parseOrThrow(await this.post(`/api/iterations/${iteration}/finalize`, {}));
  }

  /**
   * Submit one frame's decisions, retrying transient network failures with
   * the same request id. Server-side idempotency makes the retry safe.
   */
  async submitWithRetry(
    frameId: string,
    requestId: string,
    decisions: Decision[],
    attempts = 3,
  ): Promise<ReviewAck> {
    let lastError: unknown;
    for (let attempt = 0; attempt < attempts; attempt++) {
      try {
        return await this.submitReview(frameId, requestId, decisions);
      } catch (error) {
        if (error instanceof ApiError) throw error; // server spoke; don't loop on 4xx/5xx
        lastError = error;
      }
    }
    throw lastError;
  }
}
