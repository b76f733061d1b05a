/** Injectable clock + timer so tests can drive time by hand. */
export interface Scheduler {
  now(): number;
  setTimeout(fn: () => void, ms: number): unknown;
  clearTimeout(handle: unknown): void;
}

export const realScheduler: Scheduler = {
  now: () => Date.now(),
  setTimeout: (fn, ms) => setTimeout(fn, ms),
  clearTimeout: (handle) => clearTimeout(handle as ReturnType<typeof setTimeout>),
};

/**
 * Rate limiter for outbound control messages: at most one send per
 * `minGapMs`, globally. Messages coalesce per key while waiting (latest
 * wins), and keys drain round-robin so a busy camera slider cannot starve
 * a lighting change. An idle limiter sends immediately, so the first
 * message of a gesture is never delayed.
 */
export class ControlThrottle {
  private pending = new Map<string, string>();
  private timer: unknown = null;
  private lastSend = -Infinity;

  constructor(
    private minGapMs: number,
    private emit: (msg: string) => void,
    private sched: Scheduler,
  ) {}

  push(key: string, msg: string): void {
    this.pending.delete(key); // re-insert at the back of the rotation
    this.pending.set(key, msg);
    this.pump();
  }

  /** Drop queued messages and any armed timer (socket went away). */
  clear(): void {
    this.pending.clear();
    if (this.timer !== null) {
      this.sched.clearTimeout(this.timer);
      this.timer = null;
    }
  }

  private pump(): void {
    if (this.timer !== null || this.pending.size === 0) {
      return;
    }
    const wait = this.lastSend + this.minGapMs - this.sched.now();
    if (wait <= 0) {
      this.fire();
    } else {
      this.timer = this.sched.setTimeout(() => {
        this.timer = null;
        this.fire();
      }, wait);
    }
  }

  private fire(): void {
    const next = this.pending.entries().next();
    if (next.done) {
      return;
    }
    const [key, msg] = next.value;
    this.pending.delete(key);
    this.lastSend = this.sched.now();
    this.emit(msg);
    this.pump();
  }
}
