// Frame rendering: class-colored boxes over the image (or a neutral
// placeholder), provenance badges for recovered detections, and the drag
// handle geometry used for rectangle adjustment.

import type { FrameDetection } from './types.js';

const PALETTE = [
  '#e6194b', '#3cb44b', '#4363d8', '#f58231', '#911eb4',
  '#46f0f0', '#f032e6', '#bcf60c', '#008080', '#9a6324',
];

export function classColor(classId: string): string {
  let hash = 0;
  for (let i = 0; i < classId.length; i++) {
    hash = (hash * 31 + classId.charCodeAt(i)) >>> 0;
  }
  return PALETTE[hash % PALETTE.length];
}

export interface RenderOptions {
  selectedIndex?: number;
  rejected?: Set<number>;
  scale?: number;
}

export function renderFrame(
  ctx: CanvasRenderingContext2D,
  detections: FrameDetection[],
  image: CanvasImageSource | null,
  width: number,
  height: number,
  options: RenderOptions = {},
): void {
  const scale = options.scale ?? 1;
  ctx.clearRect(0, 0, width, height);
  if (image) {
    ctx.drawImage(image, 0, 0, width, height);
  } else {
    ctx.fillStyle = '#2b2f36'; // neutral background when no image is attached
    ctx.fillRect(0, 0, width, height);
  }

  for (const det of detections) {
    const [x0, y0, x1, y1] = det.bbox.map((v) => v * scale) as [number, number, number, number];
    const color = classColor(det.class);
    const rejected = options.rejected?.has(det.index) ?? false;
    ctx.lineWidth = det.index === options.selectedIndex ? 3 : 1.5;
    ctx.strokeStyle = color;
    ctx.setLineDash(rejected ? [6, 4] : []);
    ctx.globalAlpha = rejected ? 0.35 : 1.0;
    ctx.strokeRect(x0, y0, x1 - x0, y1 - y0);

    const label = `${det.class} ${(det.score * 100).toFixed(0)}%`;
    ctx.font = '12px sans-serif';
    const labelWidth = ctx.measureText(label).width + 8;
    ctx.fillStyle = color;
    ctx.fillRect(x0, Math.max(0, y0 - 16), labelWidth, 16);
    ctx.fillStyle = '#fff';
    ctx.fillText(label, x0 + 4, Math.max(12, y0 - 4));

    if (det.provenance === 'recovered') {
      // Badge so the reviewer can see which boxes exist only thanks to
      // temporal-coherence recovery.
      ctx.fillStyle = '#ffd43b';
      ctx.fillRect(x0, y1 + 2, 72, 14);
      ctx.fillStyle = '#000';
      ctx.fillText('recovered', x0 + 4, y1 + 13);
    }
    ctx.globalAlpha = 1.0;
    ctx.setLineDash([]);
  }
}

// --- Rectangle adjustment geometry -----------------------------------------

export type Handle = 'nw' | 'ne' | 'sw' | 'se' | 'n' | 's' | 'w' | 'e' | 'move';

const HANDLE_RADIUS = 6;

export function hitTestHandle(
  bbox: [number, number, number, number],
  px: number,
  py: number,
): Handle | null {
  const [x0, y0, x1, y1] = bbox;
  const cx = (x0 + x1) / 2;
  const cy = (y0 + y1) / 2;
  const spots: [Handle, number, number][] = [
    ['nw', x0, y0], ['ne', x1, y0], ['sw', x0, y1], ['se', x1, y1],
    ['n', cx, y0], ['s', cx, y1], ['w', x0, cy], ['e', x1, cy],
  ];
  for (const [handle, hx, hy] of spots) {
    if (Math.abs(px - hx) <= HANDLE_RADIUS && Math.abs(py - hy) <= HANDLE_RADIUS) {
      return handle;
    }
  }
  if (px > x0 && px < x1 && py > y0 && py < y1) return 'move';
  return null;
}

export function dragBox(
  bbox: [number, number, number, number],
  handle: Handle,
  dx: number,
  dy: number,
): [number, number, number, number] {
  let [x0, y0, x1, y1] = bbox;
  if (handle === 'move') {
    return [x0 + dx, y0 + dy, x1 + dx, y1 + dy];
  }
  // Dragged edges clamp against the opposite edge; unmoved edges stay put.
  if (handle.includes('w')) x0 = Math.min(x0 + dx, x1 - 1);
  if (handle.includes('e')) x1 = Math.max(x1 + dx, x0 + 1);
  if (handle.includes('n')) y0 = Math.min(y0 + dy, y1 - 1);
  if (handle.includes('s')) y1 = Math.max(y1 + dy, y0 + 1);
  return [x0, y0, x1, y1];
}

export function drawHandles(ctx: CanvasRenderingContext2D, bbox: [number, number, number, number]): void {
  const [x0, y0, x1, y1] = bbox;
  const cx = (x0 + x1) / 2;
  const cy = (y0 + y1) / 2;
  ctx.fillStyle = '#fff';
  ctx.strokeStyle = '#000';
  for (const [hx, hy] of [
    [x0, y0], [x1, y0], [x0, y1], [x1, y1], [cx, y0], [cx, y1], [x0, cy], [x1, cy],
  ]) {
    ctx.beginPath();
    ctx.rect(hx - 4, hy - 4, 8, 8);
    ctx.fill();
    ctx.stroke();
  }
}
