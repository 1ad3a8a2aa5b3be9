// App wiring: load loop state, walk the pending frames, record decisions,
// submit everything with idempotent request ids, then finalize.

import { ApiError, ReviewApi } from './api.js';
import { dragBox, drawHandles, hitTestHandle, renderFrame, type Handle } from './canvas.js';
import { ReviewSession } from './session.js';
import type { Decision, FramePayload } from './types.js';

const api = new ReviewApi('');

interface AppState {
  session: ReviewSession | null;
  currentFrame: string | null;
  payloads: Map<string, FramePayload>;
  images: Map<string, HTMLImageElement | null>;
  editing: { detectionIndex: number; handle: Handle | null; bbox: [number, number, number, number] } | null;
  scale: number;
}

const app: AppState = {
  session: null,
  currentFrame: null,
  payloads: new Map(),
  images: new Map(),
  editing: null,
  scale: 1,
};

function loadImage(frameId: string, source: string): void {
  const img = new Image();
  img.onload = () => {
    app.images.set(frameId, img);
    if (app.currentFrame === frameId) drawCurrent();
  };
  img.onerror = () => app.images.set(frameId, null);
  img.src = source;
}

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function banner(message: string, kind: 'info' | 'warn' | 'error' = 'info'): void {
  const node = el<HTMLDivElement>('banner');
  node.textContent = message;
  node.className = `banner ${kind}`;
  node.hidden = message === '';
}

async function boot(): Promise<void> {
  try {
    const state = await api.getState();
    el<HTMLSpanElement>('iteration').textContent = String(state.iteration);
    el<HTMLSpanElement>('training-size').textContent = String(state.training_size);
    if (!state.pending || state.phase !== 'awaiting-review') {
      banner(`Nothing to review: loop phase is "${state.phase}".`, 'info');
      el<HTMLDivElement>('workspace').hidden = true;
      return;
    }
    const pending = await api.getPending(state.pending.iteration);
    app.session = new ReviewSession(pending);
    renderFrameList();
    if (pending.frames.length > 0) {
      await selectFrame(pending.frames[0]);
    }
    banner('');
  } catch (error) {
    banner(`Failed to load loop state: ${error}`, 'error');
  }
}

function renderFrameList(): void {
  const session = app.session;
  if (!session) return;
  const list = el<HTMLUListElement>('frame-list');
  list.innerHTML = '';
  for (const frameId of session.pendingFrames) {
    const item = document.createElement('li');
    const decided = session.isFrameDecided(frameId);
    item.textContent = `frame ${frameId}${decided ? ' ✓' : ''}`;
    item.className = [
      frameId === app.currentFrame ? 'current' : '',
      decided ? 'decided' : 'undecided',
    ].join(' ');
    item.onclick = () => void selectFrame(frameId);
    list.appendChild(item);
  }
  const submit = el<HTMLButtonElement>('submit-all');
  submit.disabled = !session.canFinalize() || session.status !== 'reviewing';
  el<HTMLSpanElement>('undecided-count').textContent = String(session.undecidedFrames().length);
}

async function selectFrame(frameId: string): Promise<void> {
  const session = app.session;
  if (!session) return;
  if (!app.payloads.has(frameId)) {
    const payload = await api.getFrame(frameId);
    app.payloads.set(frameId, payload);
    if (payload.image) loadImage(frameId, payload.image);
  }
  const payload = app.payloads.get(frameId)!;
  session.loadFrame(frameId, payload.detections, payload.reviewed);
  app.currentFrame = frameId;
  app.editing = null;
  drawCurrent();
  renderDecisionPanel();
  renderFrameList();
}

function currentPayload(): FramePayload | null {
  return app.currentFrame ? app.payloads.get(app.currentFrame) ?? null : null;
}

function drawCurrent(): void {
  const payload = currentPayload();
  const session = app.session;
  if (!payload || !session) return;
  const canvas = el<HTMLCanvasElement>('frame-canvas');
  const ctx = canvas.getContext('2d');
  if (!ctx) return;

  const rejected = new Set(
    session
      .decisionsFor(payload.frame_id)
      .filter((d) => d.action === 'reject')
      .map((d) => d.detection_index),
  );
  const detections = payload.detections.map((det) => {
    const decision = session.frameState(payload.frame_id)?.decisions.get(det.index);
    if (decision?.action === 'adjust_box' && decision.bbox) {
      return { ...det, bbox: decision.bbox };
    }
    if (decision?.action === 'relabel' && decision.class) {
      return { ...det, class: decision.class };
    }
    return det;
  });
  if (app.editing) {
    const editing = app.editing;
    const index = detections.findIndex((d) => d.index === editing.detectionIndex);
    if (index >= 0) detections[index] = { ...detections[index], bbox: editing.bbox };
  }
  const image = app.images.get(payload.frame_id) ?? null;
  renderFrame(ctx, detections, image, canvas.width, canvas.height, {
    rejected,
    scale: app.scale,
    selectedIndex: app.editing?.detectionIndex,
  });
  if (image === null) {
    banner('No image attached to this frame; showing boxes on a neutral background.', 'warn');
  } else {
    banner('');
  }
  if (app.editing) {
    const scaled = app.editing.bbox.map((v) => v * app.scale) as [number, number, number, number];
    drawHandles(ctx, scaled);
  }
}

function renderDecisionPanel(): void {
  const payload = currentPayload();
  const session = app.session;
  const panel = el<HTMLDivElement>('detections');
  panel.innerHTML = '';
  if (!payload || !session) return;

  if (payload.detections.length === 0) {
    const empty = document.createElement('p');
    empty.textContent = 'No detections in this frame.';
    panel.appendChild(empty);
  }

  for (const det of payload.detections) {
    const row = document.createElement('div');
    row.className = 'detection-row';
    const decision = session.frameState(payload.frame_id)?.decisions.get(det.index);
    const title = document.createElement('span');
    title.textContent =
      `#${det.index} ${det.class} (${(det.score * 100).toFixed(0)}%)` +
      (det.provenance === 'recovered' ? ' [recovered]' : '');
    row.appendChild(title);

    for (const action of ['accept', 'reject'] as const) {
      const button = document.createElement('button');
      button.textContent = action;
      button.className = decision?.action === action ? 'active' : '';
      button.onclick = () => {
        session.decide(payload.frame_id, det.index, action);
        refresh();
      };
      row.appendChild(button);
    }

    const relabel = document.createElement('button');
    relabel.textContent = 'relabel';
    relabel.className = decision?.action === 'relabel' ? 'active' : '';
    relabel.onclick = () => {
      const cls = window.prompt('New class for this detection:', det.class);
      if (cls) {
        session.decide(payload.frame_id, det.index, 'relabel', { class: cls });
        refresh();
      }
    };
    row.appendChild(relabel);

    const adjust = document.createElement('button');
    adjust.textContent = 'adjust box';
    adjust.className = decision?.action === 'adjust_box' ? 'active' : '';
    adjust.onclick = () => {
      const startBox = (decision?.action === 'adjust_box' && decision.bbox) ? decision.bbox : det.bbox;
      app.editing = { detectionIndex: det.index, handle: null, bbox: [...startBox] as typeof det.bbox };
      drawCurrent();
    };
    row.appendChild(adjust);
    panel.appendChild(row);
  }

  const shortcuts = document.createElement('div');
  shortcuts.className = 'shortcuts';
  const acceptAll = document.createElement('button');
  acceptAll.textContent = payload.detections.length ? 'accept all' : 'mark reviewed (empty frame)';
  acceptAll.onclick = () => {
    session.decideAll(payload.frame_id, 'accept');
    refresh();
  };
  shortcuts.appendChild(acceptAll);
  if (payload.detections.length) {
    const rejectAll = document.createElement('button');
    rejectAll.textContent = 'reject all';
    rejectAll.onclick = () => {
      session.decideAll(payload.frame_id, 'reject');
      refresh();
    };
    shortcuts.appendChild(rejectAll);
  }
  panel.appendChild(shortcuts);
}

function refresh(): void {
  drawCurrent();
  renderDecisionPanel();
  renderFrameList();
}

function wireCanvasEditing(): void {
  const canvas = el<HTMLCanvasElement>('frame-canvas');
  canvas.addEventListener('mousedown', (event) => {
    if (!app.editing) return;
    const rect = canvas.getBoundingClientRect();
    const px = (event.clientX - rect.left) / app.scale;
    const py = (event.clientY - rect.top) / app.scale;
    app.editing.handle = hitTestHandle(app.editing.bbox, px, py);
  });
  canvas.addEventListener('mousemove', (event) => {
    if (!app.editing?.handle) return;
    app.editing.bbox = dragBox(app.editing.bbox, app.editing.handle, event.movementX / app.scale, event.movementY / app.scale);
    drawCurrent();
  });
  canvas.addEventListener('mouseup', () => {
    const session = app.session;
    if (!app.editing || !session || !app.currentFrame) return;
    if (app.editing.handle) {
      session.decide(app.currentFrame, app.editing.detectionIndex, 'adjust_box', {
        bbox: app.editing.bbox,
      });
      app.editing.handle = null;
      refresh();
    }
  });
}

async function submitAll(): Promise<void> {
  const session = app.session;
  if (!session || !session.canFinalize()) return;
  session.status = 'submitting';
  renderFrameList();
  try {
    for (const frameId of session.framesToSubmit()) {
      const decisions: Decision[] = session.decisionsFor(frameId);
      await api.submitWithRetry(frameId, session.requestIdFor(frameId), decisions);
      session.markSubmitted(frameId);
    }
    const ack = await api.finalize(session.iteration);
    session.markFinalized(session.pendingFrames.length);
    el<HTMLDivElement>('workspace').hidden = true;
    banner(
      `Iteration ${session.iteration} finalized: ${session.pendingFrames.length} reviewed frames ` +
        `added; training set now ${ack.training_size} images.`,
      'info',
    );
  } catch (error) {
    session.status = 'reviewing';
    if (error instanceof ApiError && error.status === 409) {
      // Someone else reviewed concurrently or we lost a submission: re-pull
      // the pending list and highlight what is still open.
      const detail = error.detail as { unreviewed?: string[] };
      banner(`Finalize refused: ${detail?.unreviewed?.length ?? '?'} frames still unreviewed.`, 'warn');
      await boot();
    } else {
      banner(`Submission failed: ${error}`, 'error');
    }
    renderFrameList();
  }
}

if (typeof document !== 'undefined' && document.getElementById('frame-canvas')) {
  el<HTMLButtonElement>('submit-all').onclick = () => void submitAll();
  wireCanvasEditing();
  void boot();
}
