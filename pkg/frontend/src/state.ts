import type { Channel, Encoding } from './protocol.js';

/** Slider limits; all well inside what the wire accepts. */
export const YAW_LIMIT_DEG = 49;
export const PITCH_LIMIT_DEG = 26;
export const RADIUS_MIN = 1.5;
export const RADIUS_MAX = 6.0;
export const FOCAL_MIN = 100;
export const FOCAL_MAX = 2000;
export const SH_LIMIT = 2.0;

export type ConnectionStatus = 'idle' | 'connecting' | 'connected' | 'closed' | 'error';

/**
 * Everything the UI shows or the client restores after a reconnect lives
 * here; nothing else in the viewer is mutable.
 */
export interface ViewerState {
  status: ConnectionStatus;
  banner: string | null;
  yawDeg: number;
  pitchDeg: number;
  radius: number;
  focal: number;
  sh: number[];
  size: number;
  spp: number;
  channel: Channel;
  encoding: Encoding;
  streaming: boolean;
  lastFrameId: number;
  framesShown: number;
  fps: number;
  ackLatencyMs: number | null;
}

export function initialState(): ViewerState {
  return {
    status: 'idle',
    banner: null,
    yawDeg: 0,
    pitchDeg: 0,
    radius: 2.7,
    focal: 700,
    sh: [1, 0, 0, 0, 0, 0, 0, 0, 0],
    size: 128,
    spp: 32,
    channel: 'rgb',
    encoding: 'raw',
    streaming: false,
    lastFrameId: -1,
    framesShown: 0,
    fps: 0,
    ackLatencyMs: null,
  };
}

export function clamp(v: number, lo: number, hi: number): number {
  return Math.min(hi, Math.max(lo, v));
}

export function degToRad(deg: number): number {
  return (deg * Math.PI) / 180;
}

/**
 * One lighting preset per button; index order is the SH basis the server
 * shades with (1: y, 2: z, 3: x for the linear band). Each sets all nine
 * coefficients at once.
 */
export const LIGHT_PRESETS: Record<string, readonly number[]> = {
  frontal: [1, 0, 0.15, 0.8, 0, 0, 0, 0.1, 0],
  'left-rim': [1, 0.8, 0.2, -0.2, 0, 0.1, 0, 0, 0],
  top: [1, 0, 0.85, 0, 0, 0, 0.25, 0, 0],
  ambient: [1, 0, 0, 0, 0, 0, 0, 0, 0],
};

export interface CameraPatch {
  yawDeg?: number;
  pitchDeg?: number;
  radius?: number;
  focal?: number;
}

/** Apply a camera patch in place, clamped to the slider limits. */
export function applyCameraPatch(state: ViewerState, patch: CameraPatch): void {
  if (patch.yawDeg !== undefined) {
    state.yawDeg = clamp(patch.yawDeg, -YAW_LIMIT_DEG, YAW_LIMIT_DEG);
  }
  if (patch.pitchDeg !== undefined) {
    state.pitchDeg = clamp(patch.pitchDeg, -PITCH_LIMIT_DEG, PITCH_LIMIT_DEG);
  }
  if (patch.radius !== undefined) {
    state.radius = clamp(patch.radius, RADIUS_MIN, RADIUS_MAX);
  }
  if (patch.focal !== undefined) {
    state.focal = clamp(patch.focal, FOCAL_MIN, FOCAL_MAX);
  }
}
