// Payload shapes of the review service API.

export type DecisionAction = 'accept' | 'reject' | 'relabel' | 'adjust_box';

export interface Decision {
  detection_index: number;
  action: DecisionAction;
  class?: string;
  bbox?: [number, number, number, number];
}

export interface FrameDetection {
  index: number;
  class: string;
  score: number;
  bbox: [number, number, number, number];
  mask: [number, number][] | null;
  provenance?: 'detector' | 'recovered';
}

export interface FramePayload {
  frame_id: string;
  iteration: number;
  pending_review: boolean;
  detections: FrameDetection[];
  image: string | null;
  reviewed: boolean;
  request_id: string | null;
}

export interface PendingSummary {
  iteration: number;
  frames: string[];
  reviewed: string[];
}

export interface HistoryRow {
  iteration: number;
  train_size: number;
  precision: number;
  recall: number;
  f1: number;
  recovered: number | null;
  sampled: number | null;
  auto: number | null;
  human: number | null;
  terminated: boolean;
}

export interface StateSummary {
  iteration: number;
  phase: 'ready' | 'awaiting-review' | 'done' | 'exhausted';
  training_size: number;
  unlabeled_size: number;
  alpha_schedule: number[];
  history: HistoryRow[];
  pending: { iteration: number; frames: string[]; reviewed: string[] } | null;
}

export interface ReviewAck {
  frame_id: string;
  request_id: string;
  accepted: boolean;
  remaining: string[];
}

export interface FinalizeAck {
  iteration: number;
  status: 'finalized' | 'pending';
  training_size: number;
  next_iteration: number;
  phase: string;
}
