/**
 * WebSocket link with automatic reconnect.
 *
 * The store talks to a Transport, never to a socket, so tests can
 * substitute a scripted fake and the live session script can plug in a
 * node client. Reconnect backoff doubles per failed attempt and resets
 * once a connection delivers its open event.
 */

export interface Transport {
  send(text: string): boolean;
  close(): void;
}

export interface TransportEvents {
  onOpen(): void;
  onMessage(text: string): void;
  /** Fired on close or failure; retryInMs < 0 means no retry planned. */
  onDown(retryInMs: number): void;
}

interface SocketLike {
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
  send(data: string): void;
  close(): void;
}

type SocketCtor = new (url: string) => SocketLike;

export const BACKOFF_BASE_MS = 500;
export const BACKOFF_MAX_MS = 10_000;

export function delayFor(attempt: number): number {
  if (attempt <= 0) return BACKOFF_BASE_MS;
  return Math.min(BACKOFF_BASE_MS * 2 ** attempt, BACKOFF_MAX_MS);
}

export interface WsTransportOptions {
  socketCtor?: SocketCtor;
  setTimer?: (fn: () => void, ms: number) => unknown;
  clearTimer?: (handle: unknown) => void;
}

export class WsTransport implements Transport {
  private sock: SocketLike | null = null;
  private attempt = 0;
  private timer: unknown = null;
  private stopped = false;
  private opened = false;
  private readonly ctor: SocketCtor;
  private readonly setTimer: (fn: () => void, ms: number) => unknown;
  private readonly clearTimer: (handle: unknown) => void;

  constructor(
    private readonly url: string,
    private readonly events: TransportEvents,
    opts: WsTransportOptions = {},
  ) {
    const fallback = (globalThis as { WebSocket?: unknown }).WebSocket;
    const ctor = opts.socketCtor ?? (fallback as SocketCtor | undefined);
    if (!ctor) throw new Error("no WebSocket implementation available");
    this.ctor = ctor;
    this.setTimer = opts.setTimer ?? ((fn, ms) => setTimeout(fn, ms));
    this.clearTimer = opts.clearTimer ?? ((h) => clearTimeout(h as number));
    this.connect();
  }

  private connect(): void {
    if (this.stopped) return;
    this.opened = false;
    let sock: SocketLike;
    try {
      sock = new this.ctor(this.url);
    } catch {
      this.scheduleRetry();
      return;
    }
    this.sock = sock;
    sock.onopen = () => {
      if (this.stopped) return;
      this.opened = true;
      this.attempt = 0;
      this.events.onOpen();
    };
    sock.onmessage = (ev) => {
      if (this.stopped) return;
      if (typeof ev.data === "string") this.events.onMessage(ev.data);
      else if (ev.data != null) this.events.onMessage(String(ev.data));
    };
    sock.onerror = () => {
      // close always follows; the close handler owns the retry
    };
    sock.onclose = () => {
      if (this.sock !== sock) return;
      this.sock = null;
      if (!this.stopped) this.scheduleRetry();
    };
  }

  private scheduleRetry(): void {
    const wait = delayFor(this.attempt);
    this.attempt += 1;
    this.events.onDown(wait);
    this.timer = this.setTimer(() => {
      this.timer = null;
      this.connect();
    }, wait);
  }

  send(text: string): boolean {
    if (!this.sock || !this.opened) return false;
    try {
      this.sock.send(text);
      return true;
    } catch {
      return false;
    }
  }

  close(): void {
    this.stopped = true;
    if (this.timer != null) this.clearTimer(this.timer);
    this.timer = null;
    const sock = this.sock;
    this.sock = null;
    if (sock) {
      sock.onclose = null;
      try {
        sock.close();
      } catch {
        // already dead
      }
    }
    this.events.onDown(-1);
  }
}
