import { Frame } from './protocol.js';
import { ViewerClient } from './client.js';
import {
  FOCAL_MAX,
  FOCAL_MIN,
  LIGHT_PRESETS,
  PITCH_LIMIT_DEG,
  RADIUS_MAX,
  RADIUS_MIN,
  SH_LIMIT,
  ViewerState,
  YAW_LIMIT_DEG,
} from './state.js';

const DRAG_DEG_PER_PX = 0.35;

interface Refs {
  canvas: HTMLCanvasElement;
  status: HTMLElement;
  banner: HTMLElement;
  readouts: HTMLElement;
  cameraSliders: Record<string, HTMLInputElement>;
  shSliders: HTMLInputElement[];
  streamToggle: HTMLInputElement;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  ...children: (Node | string)[]
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) {
    node.setAttribute(k, v);
  }
  node.append(...children);
  return node;
}

function slider(
  label: string,
  min: number,
  max: number,
  step: number,
  value: number,
  oninput: (v: number) => void,
): { row: HTMLElement; input: HTMLInputElement } {
  const input = el('input', {
    type: 'range',
    min: String(min),
    max: String(max),
    step: String(step),
    value: String(value),
  });
  input.addEventListener('input', () => oninput(Number(input.value)));
  const row = el('label', { class: 'slider-row' }, el('span', {}, label), input);
  return { row, input };
}

export function buildUi(root: HTMLElement, client: ViewerClient): void {
  const canvas = el('canvas', { width: '512', height: '512' });
  const status = el('span', { class: 'status' }, 'idle');
  const banner = el('div', { class: 'banner', hidden: '' });
  const readouts = el('div', { class: 'readouts' });

  const cameraSliders: Record<string, HTMLInputElement> = {};
  const cameraPanel = el('fieldset', {}, el('legend', {}, 'camera'));
  const cameraDefs: [string, number, number, number, number, (v: number) => void][] = [
    ['yaw', -YAW_LIMIT_DEG, YAW_LIMIT_DEG, 0.5, 0, (v) => client.setCamera({ yawDeg: v })],
    ['pitch', -PITCH_LIMIT_DEG, PITCH_LIMIT_DEG, 0.5, 0, (v) => client.setCamera({ pitchDeg: v })],
    ['radius', RADIUS_MIN, RADIUS_MAX, 0.05, 2.7, (v) => client.setCamera({ radius: v })],
    ['focal', FOCAL_MIN, FOCAL_MAX, 10, 700, (v) => client.setCamera({ focal: v })],
  ];
  for (const [name, min, max, step, value, handler] of cameraDefs) {
    const { row, input } = slider(name, min, max, step, value, handler);
    cameraSliders[name] = input;
    cameraPanel.append(row);
  }

  const shSliders: HTMLInputElement[] = [];
  const lightPanel = el('fieldset', {}, el('legend', {}, 'lighting'));
  for (let i = 0; i < 9; i++) {
    const { row, input } = slider(
      `sh[${i}]`, -SH_LIMIT, SH_LIMIT, 0.01, i === 0 ? 1 : 0,
      (v) => client.setShCoefficient(i, v),
    );
    shSliders.push(input);
    lightPanel.append(row);
  }
  const presetRow = el('div', { class: 'presets' });
  for (const name of Object.keys(LIGHT_PRESETS)) {
    const button = el('button', { type: 'button' }, name);
    button.addEventListener('click', () => client.setPreset(name));
    presetRow.append(button);
  }
  lightPanel.append(presetRow);

  const streamToggle = el('input', { type: 'checkbox' });
  streamToggle.addEventListener('change', () => client.setStream(streamToggle.checked));
  const snapshot = el('button', { type: 'button' }, 'save PNG');
  snapshot.addEventListener('click', () => {
    const link = el('a', {
      href: canvas.toDataURL('image/png'),
      download: `frame-${client.state.lastFrameId}.png`,
    });
    link.click();
  });
  const requestButton = el('button', { type: 'button' }, 'render once');
  requestButton.addEventListener('click', () => client.requestFrame());
  const reconnectButton = el('button', { type: 'button' }, 'reconnect');
  reconnectButton.addEventListener('click', () => client.reconnect());

  // drag on the canvas orbits the camera
  let dragging: { x: number; y: number } | null = null;
  canvas.addEventListener('pointerdown', (ev) => {
    dragging = { x: ev.clientX, y: ev.clientY };
    canvas.setPointerCapture(ev.pointerId);
  });
  canvas.addEventListener('pointermove', (ev) => {
    if (dragging === null) {
      return;
    }
    const dx = ev.clientX - dragging.x;
    const dy = ev.clientY - dragging.y;
    dragging = { x: ev.clientX, y: ev.clientY };
    client.setCamera({
      yawDeg: client.state.yawDeg + dx * DRAG_DEG_PER_PX,
      pitchDeg: client.state.pitchDeg - dy * DRAG_DEG_PER_PX,
    });
  });
  canvas.addEventListener('pointerup', () => {
    dragging = null;
  });

  root.append(
    banner,
    el('div', { class: 'layout' },
      el('div', { class: 'view' }, canvas, readouts),
      el('div', { class: 'controls' },
        el('div', {}, 'status: ', status),
        cameraPanel,
        lightPanel,
        el('label', {}, streamToggle, ' stream'),
        el('div', {}, requestButton, ' ', snapshot, ' ', reconnectButton),
      ),
    ),
  );

  const refs: Refs = { canvas, status, banner, readouts, cameraSliders, shSliders, streamToggle };
  wireStateUpdates(client, refs);
}

function wireStateUpdates(client: ViewerClient, refs: Refs): void {
  const ctx = refs.canvas.getContext('2d');

  const showState = (state: ViewerState): void => {
    refs.status.textContent = state.status;
    refs.banner.hidden = state.banner === null;
    refs.banner.textContent = state.banner ?? '';
    refs.readouts.textContent =
      `fps ${state.fps.toFixed(1)} | ` +
      `latency ${state.ackLatencyMs === null ? '-' : state.ackLatencyMs.toFixed(0) + ' ms'} | ` +
      `frame #${state.lastFrameId < 0 ? '-' : state.lastFrameId}`;
    refs.cameraSliders.yaw.value = String(state.yawDeg);
    refs.cameraSliders.pitch.value = String(state.pitchDeg);
    refs.cameraSliders.radius.value = String(state.radius);
    refs.cameraSliders.focal.value = String(state.focal);
    state.sh.forEach((v, i) => {
      refs.shSliders[i].value = String(v);
    });
    refs.streamToggle.checked = state.streaming;
  };

  const showFrame = (frame: Frame): void => {
    if (ctx === null) {
      return;
    }
    if (frame.png) {
      const blob = new Blob([frame.data.slice().buffer], { type: 'image/png' });
      void createImageBitmap(blob).then((bitmap) => {
        refs.canvas.width = bitmap.width;
        refs.canvas.height = bitmap.height;
        ctx.drawImage(bitmap, 0, 0);
      });
      return;
    }
    const rgba = new Uint8ClampedArray(frame.width * frame.height * 4);
    const src = frame.data;
    const ch = frame.channels;
    for (let p = 0, s = 0; p < rgba.length; p += 4, s += ch) {
      rgba[p] = src[s];
      rgba[p + 1] = src[ch >= 3 ? s + 1 : s];
      rgba[p + 2] = src[ch >= 3 ? s + 2 : s];
      rgba[p + 3] = 255;
    }
    refs.canvas.width = frame.width;
    refs.canvas.height = frame.height;
    ctx.putImageData(new ImageData(rgba, frame.width, frame.height), 0, 0);
  };

  client.bindEvents({ onState: showState, onFrame: showFrame });
  showState(client.state);
}
