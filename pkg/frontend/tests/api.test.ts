import { describe, expect, it } from 'vitest';

import { ApiError, ReviewApi } from '../src/api.js';
import { ReviewSession } from '../src/session.js';
import type { Decision, FrameDetection } from '../src/types.js';

/**
 * In-memory stand-in for the review service with the same idempotency
 * semantics: one stored review per frame, deduplicated by request id,
 * finalize refused (409) while any pending frame lacks a review.
 */
class FakeServer {
  reviews = new Map<string, { request_id: string; decisions: Decision[] }>();
  submissionsSeen = 0;
  finalized = false;

  constructor(
    public frames: Map<string, FrameDetection[]>,
    public failNextNetworkCalls = 0,
  ) {}

  fetch = async (url: string, init?: RequestInit): Promise<Response> => {
    if (this.failNextNetworkCalls > 0) {
      this.failNextNetworkCalls -= 1;
      throw new TypeError('network dropped');
    }
    const reviewMatch = url.match(/\/api\/frames\/(.+)\/review$/);
    if (reviewMatch && init?.method === 'POST') {
      this.submissionsSeen += 1;
      const frameId = decodeURIComponent(reviewMatch[1]);
      if (!this.frames.has(frameId)) return json(404, { detail: 'not pending' });
      const body = JSON.parse(String(init.body)) as { request_id: string; decisions: Decision[] };
      const existing = this.reviews.get(frameId);
      if (!existing || existing.request_id !== body.request_id) {
        const indices = body.decisions.map((d) => d.detection_index).sort();
        const expected = this.frames.get(frameId)!.map((d) => d.index).sort();
        if (JSON.stringify(indices) !== JSON.stringify(expected)) {
          return json(400, { detail: 'missing decisions' });
        }
        this.reviews.set(frameId, body);
      }
      return json(200, {
        frame_id: frameId,
        request_id: body.request_id,
        accepted: true,
        remaining: [...this.frames.keys()].filter((f) => !this.reviews.has(f)),
      });
    }
    if (/\/api\/iterations\/\d+\/finalize$/.test(url) && init?.method === 'POST') {
      const missing = [...this.frames.keys()].filter((f) => !this.reviews.has(f));
      if (missing.length > 0) return json(409, { detail: { unreviewed: missing } });
      this.finalized = true;
      return json(200, {
        iteration: 0,
        status: 'finalized',
        training_size: 40 + this.frames.size,
        next_iteration: 1,
        phase: 'ready',
      });
    }
    const frameMatch = url.match(/\/api\/frames\/([^/]+)$/);
    if (frameMatch) {
      const frameId = decodeURIComponent(frameMatch[1]);
      const detections = this.frames.get(frameId);
      if (!detections) return json(404, { detail: 'unknown frame' });
      return json(200, {
        frame_id: frameId,
        iteration: 0,
        pending_review: true,
        detections,
        image: null,
        reviewed: this.reviews.has(frameId),
        request_id: this.reviews.get(frameId)?.request_id ?? null,
      });
    }
    return json(404, { detail: `unhandled ${url}` });
  };
}

function json(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { 'Content-Type': 'application/json' },
  });
}

function detections(n: number): FrameDetection[] {
  return Array.from({ length: n }, (_, i) => ({
    index: i,
    class: 'deck',
    score: 0.91,
    bbox: [i * 20, 0, i * 20 + 10, 10] as [number, number, number, number],
    mask: null,
    provenance: i === 0 ? ('recovered' as const) : undefined,
  }));
}

describe('ReviewApi against the idempotent server contract', () => {
  it('accept-all flow reviews every frame and finalizes once', async () => {
    const server = new FakeServer(new Map([['3', detections(2)], ['9', detections(1)]]));
    const api = new ReviewApi('', server.fetch);
    const session = new ReviewSession({ iteration: 0, frames: ['3', '9'], reviewed: [] });

    for (const frameId of session.pendingFrames) {
      const frame = await api.getFrame(frameId);
      session.loadFrame(frameId, frame.detections, frame.reviewed);
      session.decideAll(frameId, 'accept');
    }
    expect(session.canFinalize()).toBe(true);

    for (const frameId of session.framesToSubmit()) {
      await api.submitWithRetry(frameId, session.requestIdFor(frameId), session.decisionsFor(frameId));
      session.markSubmitted(frameId);
    }
    const ack = await api.finalize(0);
    expect(ack.status).toBe('finalized');
    expect(server.reviews.size).toBe(2);
    expect([...server.reviews.get('3')!.decisions].every((d) => d.action === 'accept')).toBe(true);
  });

  it('retries after a network failure with the same request id, no duplicates', async () => {
    const server = new FakeServer(new Map([['3', detections(1)]]), 1);
    const api = new ReviewApi('', server.fetch);
    const session = new ReviewSession({ iteration: 0, frames: ['3'], reviewed: [] });
    session.loadFrame('3', detections(1));
    session.decideAll('3', 'accept');

    const requestId = session.requestIdFor('3');
    const ack = await api.submitWithRetry('3', requestId, session.decisionsFor('3'));
    expect(ack.request_id).toBe(requestId);
    expect(server.reviews.size).toBe(1);

    // A client-side repeat of the same submission is absorbed server-side.
    await api.submitWithRetry('3', requestId, session.decisionsFor('3'));
    expect(server.submissionsSeen).toBeGreaterThan(1);
    expect(server.reviews.size).toBe(1);
    expect(server.reviews.get('3')!.request_id).toBe(requestId);
  });

  it('does not retry on server-validated errors', async () => {
    const server = new FakeServer(new Map([['3', detections(2)]]));
    const api = new ReviewApi('', server.fetch);
    // Only one of two detections decided: the server refuses with 400.
    await expect(
      api.submitWithRetry('3', 'r1', [{ detection_index: 0, action: 'accept' }]),
    ).rejects.toThrowError(ApiError);
    expect(server.submissionsSeen).toBe(1);
    expect(server.reviews.size).toBe(0);
  });

  it('surfaces the unreviewed list from a 409 finalize', async () => {
    const server = new FakeServer(new Map([['3', detections(1)], ['9', detections(1)]]));
    const api = new ReviewApi('', server.fetch);
    await api.submitReview('3', 'r1', [{ detection_index: 0, action: 'accept' }]);
    try {
      await api.finalize(0);
      expect.unreachable('finalize should have failed');
    } catch (error) {
      expect(error).toBeInstanceOf(ApiError);
      expect((error as ApiError).status).toBe(409);
      expect((error as ApiError).detail).toEqual({ unreviewed: ['9'] });
    }
    expect(server.finalized).toBe(false);
  });

  it('propagates relabel decisions verbatim', async () => {
    const server = new FakeServer(new Map([['3', detections(1)]]));
    const api = new ReviewApi('', server.fetch);
    await api.submitReview('3', 'r1', [
      { detection_index: 0, action: 'relabel', class: 'rivet' },
    ]);
    expect(server.reviews.get('3')!.decisions[0]).toEqual({
      detection_index: 0,
      action: 'relabel',
      class: 'rivet',
    });
  });
});
