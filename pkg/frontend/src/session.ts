// Client-side review session: per-frame decisions over the pending list,
// finalize gating, and stable request ids for idempotent submission.

import type { Decision, DecisionAction, FrameDetection, PendingSummary } from './types.js';

export type SessionStatus = 'reviewing' | 'submitting' | 'finalized';

export interface FrameState {
  detections: FrameDetection[];
  decisions: Map<number, Decision>;
  submitted: boolean;
}

export class ReviewSession {
  readonly iteration: number;
  readonly pendingFrames: string[];
  dirty = false;
  status: SessionStatus = 'reviewing';
  finalizedCount: number | null = null;

  private frames = new Map<string, FrameState>();
  private requestIds = new Map<string, string>();
  private nonce: string;

  constructor(pending: PendingSummary, nonce?: string) {
    this.iteration = pending.iteration;
    this.pendingFrames = [...pending.frames];
    this.nonce = nonce ?? Math.random().toString(36).slice(2, 10);
    for (const frameId of pending.reviewed) {
      // Already reviewed server-side (e.g. the page was reloaded mid-session).
      this.frames.set(frameId, { detections: [], decisions: new Map(), submitted: true });
    }
  }

  isPending(frameId: string): boolean {
    return this.pendingFrames.includes(frameId);
  }

  loadFrame(frameId: string, detections: FrameDetection[], reviewed = false): void {
    if (!this.isPending(frameId)) {
      throw new Error(`frame ${frameId} is not pending review`);
    }
    const existing = this.frames.get(frameId);
    this.frames.set(frameId, {
      detections,
      decisions: existing?.decisions ?? new Map(),
      submitted: reviewed || (existing?.submitted ?? false),
    });
  }

  frameState(frameId: string): FrameState | undefined {
    return this.frames.get(frameId);
  }

  /** Stable per frame for the whole session, so retries cannot duplicate. */
  requestIdFor(frameId: string): string {
    let id = this.requestIds.get(frameId);
    if (!id) {
      id = `${this.nonce}-${this.iteration}-${frameId}`;
      this.requestIds.set(frameId, id);
    }
    return id;
  }

  decide(frameId: string, detectionIndex: number, action: DecisionAction, extra: Partial<Decision> = {}): void {
    const frame = this.frames.get(frameId);
    if (!frame || !this.isPending(frameId)) {
      throw new Error(`frame ${frameId} is not pending review`);
    }
    if (!frame.detections.some((d) => d.index === detectionIndex)) {
      throw new Error(`frame ${frameId} has no detection ${detectionIndex}`);
    }
    if (action === 'relabel' && !extra.class) {
      throw new Error('relabel requires a class');
    }
    if (action === 'adjust_box' && !extra.bbox) {
      throw new Error('adjust_box requires a bbox');
    }
    frame.decisions.set(detectionIndex, { detection_index: detectionIndex, action, ...extra });
    frame.submitted = false;
    this.dirty = true;
  }

  /** Accept-all / reject-all shortcut, also valid for empty frames. */
  decideAll(frameId: string, action: 'accept' | 'reject'): void {
    const frame = this.frames.get(frameId);
    if (!frame) throw new Error(`frame ${frameId} not loaded`);
    for (const det of frame.detections) {
      this.decide(frameId, det.index, action);
    }
    if (frame.detections.length === 0) {
      frame.submitted = false;
      this.dirty = true;
    }
  }

  /** A frame is decided when every detection has exactly one decision. */
  isFrameDecided(frameId: string): boolean {
    const frame = this.frames.get(frameId);
    if (!frame) return false;
    if (frame.submitted) return true;
    return frame.detections.every((d) => frame.decisions.has(d.index));
  }

  undecidedFrames(): string[] {
    return this.pendingFrames.filter((f) => !this.isFrameDecided(f));
  }

  canFinalize(): boolean {
    return this.pendingFrames.every((f) => this.isFrameDecided(f));
  }

  decisionsFor(frameId: string): Decision[] {
    const frame = this.frames.get(frameId);
    if (!frame) return [];
    return [...frame.decisions.values()].sort((a, b) => a.detection_index - b.detection_index);
  }

  framesToSubmit(): string[] {
    return this.pendingFrames.filter((f) => {
      const frame = this.frames.get(f);
      return frame !== undefined && !frame.submitted && this.isFrameDecided(f);
    });
  }

  markSubmitted(frameId: string): void {
    const frame = this.frames.get(frameId);
    if (frame) frame.submitted = true;
  }

  markFinalized(reviewedCount: number): void {
    this.status = 'finalized';
    this.finalizedCount = reviewedCount;
    this.dirty = false;
  }
}
