/** WebSocket session: HELLO handshake, frame dispatch into the store,
 * reconnect with exponential backoff. The WebSocket constructor is
 * injectable so tests can run against the `ws` package or a fake.
 */

import {
  PROTOCOL_VERSION,
  encodeFrame,
  helloFrame,
  parseServerFrame,
} from "./protocol.js";
import type { ConsoleStore } from "./state.js";

export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: ((ev: never) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: ((ev: never) => void) | null;
  onerror: ((ev: never) => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

const BACKOFF_INITIAL_MS = 500;
const BACKOFF_MAX_MS = 8000;

export class ConsoleClient {
  private socket: SocketLike | null = null;
  private backoffMs = BACKOFF_INITIAL_MS;
  private reconnectTimer: ReturnType<typeof setTimeout> | null = null;
  private closed = false;

  constructor(
    private readonly url: string,
    private readonly store: ConsoleStore,
    private readonly makeSocket: SocketFactory,
  ) {}

  connect(): void {
    this.closed = false;
    this.store.setStatus("connecting");
    const socket = this.makeSocket(this.url);
    this.socket = socket;
    socket.onopen = () => {
      socket.send(encodeFrame(helloFrame()));
    };
    socket.onmessage = (ev) => {
      const frame = parseServerFrame(String(ev.data));
      if (frame === null) {
        this.store.pushFeed({
          kind: "error",
          time_s: null,
          detail: "malformed frame skipped",
        });
        return;
      }
      if (frame.type === "ERROR" && frame.code === "version-mismatch") {
        this.store.setStatus("version-mismatch");
        this.closed = true; // do not retry a protocol we cannot speak
        socket.close();
        return;
      }
      if (frame.type === "HELLO_ACK" && frame.protocol !== PROTOCOL_VERSION) {
        this.store.setStatus("version-mismatch");
        this.closed = true;
        socket.close();
        return;
      }
      this.backoffMs = BACKOFF_INITIAL_MS; // healthy traffic resets backoff
      this.store.handleFrame(frame);
    };
    socket.onclose = () => this.handleDrop();
    socket.onerror = () => {
      /* onclose follows; nothing else to do */
    };
  }

  private handleDrop(): void {
    this.socket = null;
    if (this.closed) return;
    this.store.setStatus("disconnected");
    const delay = this.backoffMs;
    this.backoffMs = Math.min(this.backoffMs * 2, BACKOFF_MAX_MS);
    this.reconnectTimer = setTimeout(() => this.connect(), delay);
  }

  /** Send a command frame; returns false when not connected. */
  send(frame: unknown): boolean {
    if (this.socket === null || this.store.status !== "connected") {
      this.store.pushFeed({
        kind: "notice",
        time_s: null,
        detail: "not connected; command not sent",
      });
      return false;
    }
    this.socket.send(encodeFrame(frame));
    return true;
  }

  close(): void {
    this.closed = true;
    if (this.reconnectTimer !== null) clearTimeout(this.reconnectTimer);
    this.reconnectTimer = null;
    this.socket?.close();
    this.socket = null;
    this.store.setStatus("disconnected");
  }
}
