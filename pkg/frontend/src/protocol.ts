/**
 * Wire format spoken with the render service.
 *
 * Text messages are JSON: controls out, ack/error replies back. Frames are
 * binary with a 16-byte header of four u32 LE fields (width, height,
 * channels, frame_id) followed by raw u8 bytes or a PNG, sniffed by
 * signature. The handshake is a single binary u32 LE protocol version,
 * sent by each side.
 */

export const PROTOCOL_VERSION = 1;
export const FRAME_HEADER_BYTES = 16;

const PNG_SIGNATURE = [0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a];

export const VALID_CHANNELS = ['rgb', 'albedo', 'shading'] as const;
export const VALID_ENCODINGS = ['raw', 'png'] as const;
export type Channel = (typeof VALID_CHANNELS)[number];
export type Encoding = (typeof VALID_ENCODINGS)[number];

/** Server-side validation bounds; messages outside them are rejected. */
export const WIRE_LIMITS = {
  angle: { min: -10.0, max: 10.0 },
  radius: { min: 1.2, max: 100.0 },
  focal: { min: 1.0, max: 10000.0 },
  size: { min: 8, max: 1024 },
  spp: { min: 1, max: 1024 },
};

export interface SetCamera {
  type: 'set_camera';
  yaw: number;
  pitch: number;
  roll: number;
  radius: number;
  focal: number;
}

export interface SetLighting {
  type: 'set_lighting';
  sh: number[];
}

export interface SetOpts {
  type: 'set_opts';
  size: number;
  spp: number;
  channel: Channel;
  encoding: Encoding;
}

export interface RequestFrame {
  type: 'request_frame';
}

export interface Stream {
  type: 'stream';
  on: boolean;
}

export type Control = SetCamera | SetLighting | SetOpts | RequestFrame | Stream;

export interface Ack {
  type: 'ack';
  frame_id: number;
}

export interface ErrorReply {
  type: 'error';
  msg: string;
}

export type Reply = Ack | ErrorReply;

export interface Frame {
  width: number;
  height: number;
  channels: number;
  frameId: number;
  /** Raw interleaved u8 samples, or the PNG bytes when `png` is set. */
  data: Uint8Array;
  png: boolean;
}

export class ProtocolError extends Error {}

export function encodeHello(): ArrayBuffer {
  const buf = new ArrayBuffer(4);
  new DataView(buf).setUint32(0, PROTOCOL_VERSION, true);
  return buf;
}

export function decodeHello(buf: ArrayBuffer): number {
  if (buf.byteLength !== 4) {
    throw new ProtocolError(`hello must be exactly 4 bytes, got ${buf.byteLength}`);
  }
  return new DataView(buf).getUint32(0, true);
}

function requireFinite(name: string, v: number, min: number, max: number): void {
  if (typeof v !== 'number' || !Number.isFinite(v)) {
    throw new ProtocolError(`${name} must be a finite number`);
  }
  if (v < min || v > max) {
    throw new ProtocolError(`${name}=${v} outside [${min}, ${max}]`);
  }
}

function requireInt(name: string, v: number, min: number, max: number): void {
  if (!Number.isInteger(v) || v < min || v > max) {
    throw new ProtocolError(`${name} must be an integer in [${min}, ${max}]`);
  }
}

/**
 * Serialized control message; throws ProtocolError rather than let anything
 * the server would reject reach the socket.
 */
export function encodeControl(control: Control): string {
  switch (control.type) {
    case 'set_camera': {
      const { angle, radius, focal } = WIRE_LIMITS;
      requireFinite('yaw', control.yaw, angle.min, angle.max);
      requireFinite('pitch', control.pitch, angle.min, angle.max);
      requireFinite('roll', control.roll, angle.min, angle.max);
      requireFinite('radius', control.radius, radius.min, radius.max);
      requireFinite('focal', control.focal, focal.min, focal.max);
      break;
    }
    case 'set_lighting': {
      if (!Array.isArray(control.sh) || control.sh.length !== 9) {
        throw new ProtocolError('sh must be a list of 9 numbers');
      }
      control.sh.forEach((v, i) => {
        if (typeof v !== 'number' || !Number.isFinite(v)) {
          throw new ProtocolError(`sh[${i}] must be a finite number`);
        }
      });
      break;
    }
    case 'set_opts': {
      requireInt('size', control.size, WIRE_LIMITS.size.min, WIRE_LIMITS.size.max);
      requireInt('spp', control.spp, WIRE_LIMITS.spp.min, WIRE_LIMITS.spp.max);
      if (!VALID_CHANNELS.includes(control.channel)) {
        throw new ProtocolError(`channel must be one of ${VALID_CHANNELS.join('|')}`);
      }
      if (!VALID_ENCODINGS.includes(control.encoding)) {
        throw new ProtocolError(`encoding must be one of ${VALID_ENCODINGS.join('|')}`);
      }
      break;
    }
    case 'request_frame':
      break;
    case 'stream': {
      if (typeof control.on !== 'boolean') {
        throw new ProtocolError("stream needs a boolean 'on'");
      }
      break;
    }
    default:
      throw new ProtocolError(`unknown control type ${(control as Control).type}`);
  }
  return JSON.stringify(control);
}

export function parseReply(text: string): Reply {
  let msg: unknown;
  try {
    msg = JSON.parse(text);
  } catch {
    throw new ProtocolError(`reply is not valid JSON: ${text.slice(0, 80)}`);
  }
  if (typeof msg !== 'object' || msg === null) {
    throw new ProtocolError('reply must be an object');
  }
  const obj = msg as Record<string, unknown>;
  if (obj.type === 'ack') {
    if (!Number.isInteger(obj.frame_id)) {
      throw new ProtocolError('ack needs an integer frame_id');
    }
    return { type: 'ack', frame_id: obj.frame_id as number };
  }
  if (obj.type === 'error') {
    if (typeof obj.msg !== 'string') {
      throw new ProtocolError('error needs a message string');
    }
    return { type: 'error', msg: obj.msg };
  }
  throw new ProtocolError(`reply type must be ack or error, got ${String(obj.type)}`);
}

export function parseFrame(buf: ArrayBuffer): Frame {
  if (buf.byteLength < FRAME_HEADER_BYTES) {
    throw new ProtocolError(`frame shorter than its ${FRAME_HEADER_BYTES}-byte header`);
  }
  const view = new DataView(buf);
  const width = view.getUint32(0, true);
  const height = view.getUint32(4, true);
  const channels = view.getUint32(8, true);
  const frameId = view.getUint32(12, true);
  const data = new Uint8Array(buf, FRAME_HEADER_BYTES);
  const png = data.length >= 8 && PNG_SIGNATURE.every((b, i) => data[i] === b);
  if (!png && data.length !== width * height * channels) {
    throw new ProtocolError(
      `raw payload has ${data.length} bytes, expected ${width * height * channels}`);
  }
  return { width, height, channels, frameId, data, png };
}
