/** Single console state store.
 *
 * Network frames and input events all serialize through this store; the
 * renderer reads from it at display refresh. The rendered frame always
 * reflects the latest snapshot: stale (non-newer tick) snapshots are
 * discarded, which also deduplicates frames replayed across a reconnect.
 */

import type { ServerFrame, Snapshot } from "./protocol.js";

export type ConnectionStatus =
  | "disconnected"
  | "connecting"
  | "connected"
  | "version-mismatch";

export interface FeedEntry {
  kind: string;
  time_s: number | null;
  detail: string;
}

const FEED_LIMIT = 50;

export class ConsoleStore {
  status: ConnectionStatus = "disconnected";
  snapshot: Snapshot | null = null;
  scenarios: string[] = [];
  hasToken = false;
  /** Bounded event feed, newest first. */
  feed: FeedEntry[] = [];
  private listeners: Array<() => void> = [];

  subscribe(listener: () => void): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  private notify(): void {
    for (const listener of this.listeners) listener();
  }

  setStatus(status: ConnectionStatus): void {
    if (this.status === status) return;
    this.status = status;
    this.pushFeed({ kind: "connection", time_s: null, detail: status });
    this.notify();
  }

  /** Apply one incoming frame; returns false when it was dropped. */
  handleFrame(frame: ServerFrame): boolean {
    switch (frame.type) {
      case "HELLO_ACK":
        this.scenarios = [...frame.scenarios];
        this.hasToken = frame.token;
        this.setStatus("connected");
        return true;
      case "SNAPSHOT":
        return this.applySnapshot(frame);
      case "ACK":
        if (typeof frame.token === "boolean") this.hasToken = frame.token;
        this.notify();
        return true;
      case "ERROR":
        this.pushFeed({
          kind: "error",
          time_s: null,
          detail: `${frame.code}: ${frame.message}`,
        });
        this.notify();
        return true;
      case "SCENARIO_END":
        this.pushFeed({ kind: "SCENARIO_END", time_s: null, detail: "" });
        this.notify();
        return true;
    }
  }

  /** Accept only strictly newer snapshots; stale frames are discarded. */
  applySnapshot(snapshot: Snapshot): boolean {
    if (this.snapshot !== null && snapshot.tick <= this.snapshot.tick) {
      return false;
    }
    const prevTick = this.snapshot?.tick ?? -1;
    this.snapshot = snapshot;
    for (const event of snapshot.events) {
      if (event.tick > prevTick) {
        this.pushFeed({
          kind: event.kind,
          time_s: event.time_s,
          detail: JSON.stringify(event.data),
        });
      }
    }
    this.notify();
    return true;
  }

  pushFeed(entry: FeedEntry): void {
    this.feed.unshift(entry);
    if (this.feed.length > FEED_LIMIT) this.feed.length = FEED_LIMIT;
  }

  /** Forget the snapshot stream position (e.g. when a new scenario loads). */
  resetStream(): void {
    this.snapshot = null;
    this.notify();
  }
}
