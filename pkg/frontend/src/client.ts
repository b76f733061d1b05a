import {
  Control,
  Frame,
  PROTOCOL_VERSION,
  ProtocolError,
  decodeHello,
  encodeControl,
  encodeHello,
  parseFrame,
  parseReply,
} from './protocol.js';
import {
  CameraPatch,
  LIGHT_PRESETS,
  SH_LIMIT,
  ViewerState,
  applyCameraPatch,
  clamp,
  degToRad,
  initialState,
} from './state.js';
import { ControlThrottle, Scheduler, realScheduler } from './throttle.js';

/** Structural subset of WebSocket, so tests can hand in a scripted fake. */
export interface SocketLike {
  binaryType: string;
  readyState: number;
  send(data: string | ArrayBuffer): void;
  close(): void;
  onopen: (() => void) | null;
  onmessage: ((ev: { data: string | ArrayBuffer }) => void) | null;
  onclose: (() => void) | null;
  onerror: (() => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

export interface ViewerEvents {
  onState?: (state: ViewerState) => void;
  onFrame?: (frame: Frame) => void;
}

const MAX_CONTROL_RATE = 30; // messages per second, all control types together
const MIN_SEND_GAP_MS = 1000 / MAX_CONTROL_RATE;

/**
 * Connection, control and frame plumbing for the viewer. All UI-visible
 * facts live in `state`; the UI reads it and calls the set* methods, nothing
 * else is shared.
 */
export class ViewerClient {
  readonly state: ViewerState = initialState();

  private socket: SocketLike | null = null;
  private url = '';
  private gotHello = false;
  private throttle: ControlThrottle;
  private ackTimestamps: number[] = [];
  private firstFrameAt: number | null = null;

  constructor(
    private factory: SocketFactory,
    private events: ViewerEvents = {},
    private sched: Scheduler = realScheduler,
  ) {
    this.throttle = new ControlThrottle(MIN_SEND_GAP_MS, (msg) => {
      if (this.socket !== null && this.gotHello) {
        this.ackTimestamps.push(this.sched.now());
        if (this.ackTimestamps.length > 64) {
          this.ackTimestamps.shift();
        }
        this.socket.send(msg);
      }
    }, sched);
  }

  /** Attach or replace the state/frame listeners. */
  bindEvents(events: ViewerEvents): void {
    this.events = events;
  }

  connect(url: string): void {
    this.disconnect();
    this.url = url;
    this.state.status = 'connecting';
    this.state.banner = null;
    this.emitState();
    const socket = this.factory(url);
    socket.binaryType = 'arraybuffer';
    socket.onopen = () => socket.send(encodeHello());
    socket.onmessage = (ev) => this.onMessage(ev.data);
    socket.onclose = () => this.onClose();
    socket.onerror = () => this.onClose();
    this.socket = socket;
  }

  /** Re-establish the last connection and replay the current controls. */
  reconnect(): void {
    if (this.url !== '') {
      this.connect(this.url);
    }
  }

  disconnect(): void {
    const socket = this.socket;
    this.socket = null;
    this.gotHello = false;
    this.throttle.clear();
    this.ackTimestamps = [];
    if (socket !== null) {
      socket.onclose = null;
      socket.onerror = null;
      socket.close();
      this.state.status = 'closed';
      this.emitState();
    }
  }

  setCamera(patch: CameraPatch): void {
    applyCameraPatch(this.state, patch);
    this.pushCamera();
    this.emitState();
  }

  setShCoefficient(index: number, value: number): void {
    if (index < 0 || index > 8) {
      return;
    }
    this.state.sh[index] = clamp(value, -SH_LIMIT, SH_LIMIT);
    this.pushLighting();
    this.emitState();
  }

  /** All nine coefficients change in one message. */
  setPreset(name: string): void {
    const preset = LIGHT_PRESETS[name];
    if (preset === undefined) {
      return;
    }
    this.state.sh = [...preset];
    this.pushLighting();
    this.emitState();
  }

  setOpts(patch: Partial<Pick<ViewerState, 'size' | 'spp' | 'channel' | 'encoding'>>): void {
    Object.assign(this.state, patch);
    this.push({
      type: 'set_opts',
      size: this.state.size,
      spp: this.state.spp,
      channel: this.state.channel,
      encoding: this.state.encoding,
    });
    this.emitState();
  }

  setStream(on: boolean): void {
    this.state.streaming = on;
    this.push({ type: 'stream', on });
    if (on) {
      this.push({ type: 'request_frame' });
    }
    this.emitState();
  }

  requestFrame(): void {
    this.push({ type: 'request_frame' });
  }

  private pushCamera(): void {
    this.push({
      type: 'set_camera',
      yaw: degToRad(this.state.yawDeg),
      pitch: degToRad(this.state.pitchDeg),
      roll: 0,
      radius: this.state.radius,
      focal: this.state.focal,
    });
  }

  private pushLighting(): void {
    this.push({ type: 'set_lighting', sh: [...this.state.sh] });
  }

  private push(control: Control): void {
    this.throttle.push(control.type, encodeControl(control));
    // a non-streaming session only gets frames it asks for
    if (!this.state.streaming && control.type.startsWith('set_')) {
      this.throttle.push('request_frame', encodeControl({ type: 'request_frame' }));
    }
  }

  /** Replay every control after a handshake so the server matches `state`. */
  private syncControls(): void {
    this.pushCamera();
    this.pushLighting();
    this.push({
      type: 'set_opts',
      size: this.state.size,
      spp: this.state.spp,
      channel: this.state.channel,
      encoding: this.state.encoding,
    });
    this.push({ type: 'stream', on: this.state.streaming });
    this.push({ type: 'request_frame' });
  }

  private onMessage(data: string | ArrayBuffer): void {
    try {
      if (typeof data === 'string') {
        this.onReply(parseReply(data));
      } else if (!this.gotHello) {
        this.onHello(decodeHello(data));
      } else {
        this.onFrame(parseFrame(data));
      }
    } catch (err) {
      if (err instanceof ProtocolError) {
        this.state.banner = err.message;
        this.emitState();
      } else {
        throw err;
      }
    }
  }

  private onHello(version: number): void {
    if (version !== PROTOCOL_VERSION) {
      this.state.status = 'error';
      this.state.banner =
        `protocol version mismatch: server speaks ${version}, this viewer speaks ${PROTOCOL_VERSION}`;
      this.emitState();
      const socket = this.socket;
      this.socket = null;
      if (socket !== null) {
        socket.onclose = null;
        socket.close();
      }
      return;
    }
    this.gotHello = true;
    this.state.status = 'connected';
    this.state.banner = null;
    this.syncControls();
    this.emitState();
  }

  private onReply(reply: ReturnType<typeof parseReply>): void {
    if (reply.type === 'error') {
      this.state.banner = reply.msg;
      this.emitState();
      return;
    }
    const sentAt = this.ackTimestamps.shift();
    if (sentAt !== undefined) {
      this.state.ackLatencyMs = this.sched.now() - sentAt;
      this.emitState();
    }
  }

  private onFrame(frame: Frame): void {
    if (frame.frameId < this.state.lastFrameId) {
      return; // stale render overtaken by a newer one
    }
    this.state.lastFrameId = frame.frameId;
    this.state.framesShown += 1;
    const now = this.sched.now();
    if (this.firstFrameAt === null) {
      this.firstFrameAt = now;
    }
    const seconds = (now - this.firstFrameAt) / 1000;
    this.state.fps = seconds > 0 ? (this.state.framesShown - 1) / seconds : 0;
    this.events.onFrame?.(frame);
    this.emitState();
  }

  private onClose(): void {
    if (this.socket === null) {
      return;
    }
    this.socket = null;
    this.gotHello = false;
    this.throttle.clear();
    this.ackTimestamps = [];
    this.state.status = 'closed';
    this.state.banner = 'connection lost';
    this.emitState();
  }

  private emitState(): void {
    this.events.onState?.(this.state);
  }
}
