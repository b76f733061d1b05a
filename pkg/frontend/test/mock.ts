/**
 * Scripted stand-in for the render service, faithful to the wire grammar:
 * it validates every client message the way the server does and records
 * violations instead of silently tolerating them, so passing tests also
 * prove the client never sends anything malformed.
 */

import type { SocketLike } from '../src/client.js';
import type { Scheduler } from '../src/throttle.js';

export class FakeScheduler implements Scheduler {
  private t = 0;
  private timers: { at: number; fn: () => void; id: number }[] = [];
  private nextId = 1;

  now(): number {
    return this.t;
  }

  setTimeout(fn: () => void, ms: number): unknown {
    const id = this.nextId++;
    this.timers.push({ at: this.t + Math.max(0, ms), fn, id });
    return id;
  }

  clearTimeout(handle: unknown): void {
    this.timers = this.timers.filter((timer) => timer.id !== handle);
  }

  /** Run due timers in order, then land on now + ms. */
  advance(ms: number): void {
    const target = this.t + ms;
    for (;;) {
      const due = this.timers
        .filter((timer) => timer.at <= target)
        .sort((a, b) => a.at - b.at || a.id - b.id)[0];
      if (due === undefined) {
        break;
      }
      this.timers = this.timers.filter((timer) => timer.id !== due.id);
      this.t = Math.max(this.t, due.at);
      due.fn();
    }
    this.t = target;
  }
}

export class FakeSocket implements SocketLike {
  binaryType = 'blob';
  readyState = 0;
  onopen: (() => void) | null = null;
  onmessage: ((ev: { data: string | ArrayBuffer }) => void) | null = null;
  onclose: (() => void) | null = null;
  onerror: (() => void) | null = null;

  constructor(private server: MockServer) {}

  send(data: string | ArrayBuffer): void {
    this.server.onClientMessage(this, data);
  }

  close(): void {
    this.readyState = 3;
  }

  deliver(data: string | ArrayBuffer): void {
    this.onmessage?.({ data });
  }
}

export interface ReceivedControl {
  control: Record<string, unknown>;
  at: number;
}

const CONTROL_FIELDS: Record<string, Set<string>> = {
  set_camera: new Set(['yaw', 'pitch', 'roll', 'radius', 'focal']),
  set_lighting: new Set(['sh']),
  set_opts: new Set(['size', 'spp', 'channel', 'encoding']),
  request_frame: new Set(),
  stream: new Set(['on']),
};

function numberIn(v: unknown, lo: number, hi: number): boolean {
  return typeof v === 'number' && Number.isFinite(v) && v >= lo && v <= hi;
}

/** Port of the server's control validation; returns a complaint or null. */
function findViolation(msg: Record<string, unknown>): string | null {
  const kind = msg.type;
  if (typeof kind !== 'string' || !(kind in CONTROL_FIELDS)) {
    return `unknown control type ${String(kind)}`;
  }
  for (const key of Object.keys(msg)) {
    if (key !== 'type' && !CONTROL_FIELDS[kind].has(key)) {
      return `unexpected field ${key} for ${kind}`;
    }
  }
  if (kind === 'set_camera') {
    if (Object.keys(msg).length === 1) {
      return 'set_camera with no fields';
    }
    for (const key of ['yaw', 'pitch', 'roll'] as const) {
      if (key in msg && !numberIn(msg[key], -10, 10)) {
        return `${key} out of range`;
      }
    }
    if ('radius' in msg && !numberIn(msg.radius, 1.2, 100)) {
      return 'radius out of range';
    }
    if ('focal' in msg && !numberIn(msg.focal, 1, 10000)) {
      return 'focal out of range';
    }
  } else if (kind === 'set_lighting') {
    const sh = msg.sh;
    if (!Array.isArray(sh) || sh.length !== 9 || !sh.every((v) => numberIn(v, -1e9, 1e9))) {
      return 'sh must be 9 finite numbers';
    }
  } else if (kind === 'set_opts') {
    if (Object.keys(msg).length === 1) {
      return 'set_opts with no fields';
    }
    if ('size' in msg && !(Number.isInteger(msg.size) && numberIn(msg.size, 8, 1024))) {
      return 'size out of range';
    }
    if ('spp' in msg && !(Number.isInteger(msg.spp) && numberIn(msg.spp, 1, 1024))) {
      return 'spp out of range';
    }
    if ('channel' in msg && !['rgb', 'albedo', 'shading'].includes(msg.channel as string)) {
      return 'bad channel';
    }
    if ('encoding' in msg && !['raw', 'png'].includes(msg.encoding as string)) {
      return 'bad encoding';
    }
  } else if (kind === 'stream') {
    if (typeof msg.on !== 'boolean') {
      return "stream needs a boolean 'on'";
    }
  }
  return null;
}

export class MockServer {
  helloVersion = 1;
  autoAck = true;
  version = 0;
  streaming = false;
  clientHello: number | null = null;
  socket: FakeSocket | null = null;
  received: ReceivedControl[] = [];
  violations: string[] = [];

  constructor(private sched: FakeScheduler) {}

  factory = (_url: string): SocketLike => {
    this.socket = new FakeSocket(this);
    this.clientHello = null;
    return this.socket;
  };

  /** Accept the pending connection: fire onopen, then send our hello. */
  open(): void {
    const socket = this.socket;
    if (socket === null) {
      throw new Error('no client connected');
    }
    socket.readyState = 1;
    socket.onopen?.();
    const hello = new ArrayBuffer(4);
    new DataView(hello).setUint32(0, this.helloVersion, true);
    socket.deliver(hello);
  }

  onClientMessage(socket: FakeSocket, data: string | ArrayBuffer): void {
    if (socket !== this.socket) {
      return; // late traffic on a replaced connection
    }
    if (typeof data !== 'string') {
      if (this.clientHello === null && data.byteLength === 4) {
        this.clientHello = new DataView(data).getUint32(0, true);
      } else {
        this.violations.push('unexpected binary message');
      }
      return;
    }
    let msg: Record<string, unknown>;
    try {
      msg = JSON.parse(data) as Record<string, unknown>;
    } catch {
      this.violations.push(`not valid JSON: ${data.slice(0, 60)}`);
      return;
    }
    const violation = findViolation(msg);
    if (violation !== null) {
      this.violations.push(violation);
      socket.deliver(JSON.stringify({ type: 'error', msg: violation }));
      return;
    }
    this.received.push({ control: msg, at: this.sched.now() });
    if (msg.type === 'stream') {
      this.streaming = msg.on as boolean;
    } else if (msg.type !== 'request_frame') {
      this.version += 1;
    }
    if (this.autoAck) {
      this.ack();
    }
  }

  ack(frameId?: number): void {
    this.socket?.deliver(JSON.stringify({ type: 'ack', frame_id: frameId ?? this.version }));
  }

  sendError(msg: string): void {
    this.socket?.deliver(JSON.stringify({ type: 'error', msg }));
  }

  sendFrame(frameId: number, width = 4, height = 4, channels = 3): void {
    const buf = new ArrayBuffer(16 + width * height * channels);
    const view = new DataView(buf);
    view.setUint32(0, width, true);
    view.setUint32(4, height, true);
    view.setUint32(8, channels, true);
    view.setUint32(12, frameId, true);
    new Uint8Array(buf, 16).fill(frameId % 256);
    this.socket?.deliver(buf);
  }

  closeFromServer(): void {
    const socket = this.socket;
    if (socket !== null) {
      socket.readyState = 3;
      socket.onclose?.();
    }
  }

  /** Controls of one type, in arrival order. */
  controlsOf(type: string): ReceivedControl[] {
    return this.received.filter((r) => r.control.type === type);
  }
}
