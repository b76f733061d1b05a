import { describe, expect, it } from 'vitest';

import { ViewerClient } from '../src/client.js';
import type { Frame } from '../src/protocol.js';
import { LIGHT_PRESETS, degToRad } from '../src/state.js';
import { FakeScheduler, MockServer } from './mock.js';

const GAP = 1000 / 30;

/** Client wired to a scripted server, connected but not yet accepted. */
function harness() {
  const sched = new FakeScheduler();
  const server = new MockServer(sched);
  const frames: Frame[] = [];
  const client = new ViewerClient(server.factory, { onFrame: (f) => frames.push(f) }, sched);
  client.connect('ws://render.test');
  return { sched, server, frames, client };
}

/** Accept the connection and let the post-handshake control replay drain. */
function settle(h: ReturnType<typeof harness>): void {
  h.server.open();
  h.sched.advance(GAP * 8);
  h.server.received.length = 0;
}

describe('handshake', () => {
  it('connects, introduces itself, and replays the full control set', () => {
    const { sched, server, client } = harness();
    expect(client.state.status).toBe('connecting');
    server.open();
    expect(server.clientHello).toBe(1);
    expect(client.state.status).toBe('connected');
    sched.advance(GAP * 8);
    const types = server.received.map((r) => r.control.type);
    expect(types).toEqual(['set_camera', 'set_lighting', 'set_opts', 'stream', 'request_frame']);
    expect(server.violations).toEqual([]);
  });

  it('refuses a server speaking another protocol version', () => {
    const { sched, server, client } = harness();
    server.helloVersion = 2;
    server.open();
    sched.advance(GAP * 8);
    expect(client.state.status).toBe('error');
    expect(client.state.banner).toContain('version mismatch');
    expect(client.state.banner).toContain('2');
    expect(server.socket?.readyState).toBe(3);
    // nothing but our hello ever went out
    expect(server.received).toEqual([]);
    expect(server.violations).toEqual([]);
  });

  it('surfaces a lost connection and recovers on reconnect', () => {
    const h = harness();
    settle(h);
    h.server.closeFromServer();
    expect(h.client.state.status).toBe('closed');
    expect(h.client.state.banner).toBe('connection lost');
    h.client.reconnect();
    h.server.open();
    h.sched.advance(GAP * 8);
    expect(h.client.state.status).toBe('connected');
    expect(h.server.violations).toEqual([]);
  });
});

describe('control flow', () => {
  it('clamps UI values and emits only wire-legal messages', () => {
    const h = harness();
    settle(h);
    h.client.setCamera({ yawDeg: 80 });
    h.sched.advance(GAP * 3);
    h.client.setCamera({ pitchDeg: -40, radius: 0.2, focal: 1e9 });
    h.sched.advance(GAP * 3);
    expect(h.client.state.yawDeg).toBe(49);
    expect(h.client.state.pitchDeg).toBe(-26);
    expect(h.client.state.radius).toBe(1.5);
    expect(h.client.state.focal).toBe(2000);
    const cams = h.server.controlsOf('set_camera');
    expect(cams.length).toBeGreaterThanOrEqual(2);
    const last = cams[cams.length - 1].control;
    expect(last.yaw).toBeCloseTo(degToRad(49), 12);
    expect(last.pitch).toBeCloseTo(degToRad(-26), 12);
    expect(last.radius).toBe(1.5);
    expect(last.focal).toBe(2000);
    expect(h.server.violations).toEqual([]);
  });

  it('clamps lighting coefficients to the slider range', () => {
    const h = harness();
    settle(h);
    h.client.setShCoefficient(1, 5);
    h.client.setShCoefficient(4, -7);
    h.sched.advance(GAP * 4);
    expect(h.client.state.sh[1]).toBe(2);
    expect(h.client.state.sh[4]).toBe(-2);
    const lights = h.server.controlsOf('set_lighting');
    const last = lights[lights.length - 1].control.sh as number[];
    expect(last[1]).toBe(2);
    expect(last[4]).toBe(-2);
    expect(h.server.violations).toEqual([]);
  });

  it('holds the global send rate under a slider frenzy, latest value winning', () => {
    const h = harness();
    h.server.open();
    h.sched.advance(GAP * 8); // keep the handshake sends in the log: the cap spans them too
    for (let i = 1; i <= 120; i++) {
      h.client.setCamera({ yawDeg: i * 0.3 });
      h.sched.advance(2);
    }
    h.sched.advance(GAP * 4);
    const at = h.server.received.map((r) => r.at);
    for (let i = 1; i < at.length; i++) {
      expect(at[i] - at[i - 1]).toBeGreaterThanOrEqual(GAP - 1e-6);
    }
    const cams = h.server.controlsOf('set_camera');
    expect(cams.length).toBeGreaterThanOrEqual(2);
    expect(cams.length).toBeLessThanOrEqual(12); // 120 gestures collapse to a handful
    const last = cams[cams.length - 1].control;
    expect(last.yaw).toBeCloseTo(degToRad(36), 12);
    // a non-streaming session chases every change with a frame request
    expect(h.server.controlsOf('request_frame').length).toBeGreaterThanOrEqual(2);
    expect(h.server.violations).toEqual([]);
  });

  it('applies a preset as one atomic lighting message', () => {
    const h = harness();
    settle(h);
    h.client.setPreset('top');
    h.sched.advance(GAP * 3);
    const lights = h.server.controlsOf('set_lighting');
    expect(lights).toHaveLength(1);
    expect(lights[0].control.sh).toEqual([...LIGHT_PRESETS.top]);
    expect(h.client.state.sh).toEqual([...LIGHT_PRESETS.top]);
    expect(h.server.violations).toEqual([]);
  });

  it('replays camera, lighting, options and stream state after a reconnect', () => {
    const h = harness();
    settle(h);
    h.client.setCamera({ yawDeg: 10, radius: 3.3 });
    h.client.setPreset('left-rim');
    h.client.setOpts({ size: 64, spp: 16, channel: 'albedo', encoding: 'png' });
    h.client.setStream(true);
    h.sched.advance(GAP * 10);
    h.server.closeFromServer();
    h.server.received.length = 0;
    h.client.reconnect();
    h.server.open();
    h.sched.advance(GAP * 10);
    const cam = h.server.controlsOf('set_camera')[0].control;
    expect(cam.yaw).toBeCloseTo(degToRad(10), 12);
    expect(cam.radius).toBeCloseTo(3.3, 12);
    const light = h.server.controlsOf('set_lighting')[0].control;
    expect(light.sh).toEqual([...LIGHT_PRESETS['left-rim']]);
    const opts = h.server.controlsOf('set_opts')[0].control;
    expect(opts).toMatchObject({ size: 64, spp: 16, channel: 'albedo', encoding: 'png' });
    expect(h.server.controlsOf('stream')[0].control.on).toBe(true);
    expect(h.server.streaming).toBe(true);
    expect(h.server.violations).toEqual([]);
  });

  it('goes quiet once disconnected', () => {
    const h = harness();
    settle(h);
    h.client.disconnect();
    expect(h.client.state.status).toBe('closed');
    h.client.setCamera({ yawDeg: 5 });
    h.sched.advance(GAP * 4);
    expect(h.server.received).toEqual([]);
    expect(h.server.violations).toEqual([]);
  });
});

describe('replies and frames', () => {
  it('shows server errors in the banner without dropping the connection', () => {
    const h = harness();
    settle(h);
    h.server.sendError('lighting rejected');
    expect(h.client.state.banner).toBe('lighting rejected');
    expect(h.client.state.status).toBe('connected');
  });

  it('measures ack latency from send to reply', () => {
    const h = harness();
    settle(h);
    h.server.autoAck = false;
    h.client.requestFrame();
    h.sched.advance(25);
    h.server.ack(3);
    expect(h.client.state.ackLatencyMs).toBe(25);
  });

  it('never shows a frame older than the one on screen', () => {
    const h = harness();
    settle(h);
    for (const id of [1, 3, 2, 4]) {
      h.server.sendFrame(id);
    }
    expect(h.frames.map((f) => f.frameId)).toEqual([1, 3, 4]);
    expect(h.client.state.lastFrameId).toBe(4);
    expect(h.client.state.framesShown).toBe(3);
    expect(h.frames[0].width).toBe(4);
    expect(h.frames[0].channels).toBe(3);
    expect(h.frames[0].data[0]).toBe(1);
  });

  it('reports fps as frames shown over wall time', () => {
    const h = harness();
    settle(h);
    h.server.sendFrame(1);
    for (const id of [2, 3, 4]) {
      h.sched.advance(500);
      h.server.sendFrame(id);
    }
    expect(h.client.state.framesShown).toBe(4);
    expect(h.client.state.fps).toBeCloseTo(2.0, 10);
  });
});
