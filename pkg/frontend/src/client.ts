/**
 * HTTP + WebSocket client for the steering service. Transports are
 * injectable so tests can drive the client with fakes; the defaults
 * are window.fetch and the browser WebSocket.
 */

import { GoalAck, parseGoalAck } from "./schema.js";
import { GoalCommandBody } from "./controls.js";

export interface SocketLike {
  onmessage: ((ev: { data: string }) => void) | null;
  onclose: (() => void) | null;
  onerror: (() => void) | null;
  close(): void;
}

export type SocketFactory = (url: string) => SocketLike;
export type FetchLike = (url: string, init?: {
  method?: string;
  headers?: Record<string, string>;
  body?: string;
}) => Promise<{ ok: boolean; status: number; json(): Promise<unknown> }>;

export interface StreamHandlers {
  onMessage: (raw: unknown) => void;
  onClosed: () => void;
}

export interface SessionInfo {
  session: string;
  spec_hash: string;
}

export class RejectedCommand extends Error {
  constructor(public status: number, public reason: string) {
    super(`command rejected (${status}): ${reason}`);
  }
}

/** Talk to one service instance at `base` (e.g. "http://localhost:8008"). */
export class ServiceClient {
  private socket: SocketLike | null = null;

  constructor(
    private base: string,
    private fetchImpl: FetchLike,
    private socketFactory: SocketFactory,
  ) {}

  async createSession(body: Record<string, unknown>): Promise<SessionInfo> {
    const resp = await this.fetchImpl(`${this.base}/session`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!resp.ok) {
      throw new RejectedCommand(resp.status, await reasonOf(resp));
    }
    const raw = await resp.json() as Record<string, unknown>;
    return {
      session: String(raw.session),
      spec_hash: String(raw.spec_hash),
    };
  }

  /** Open the stream socket; raw JSON-decoded payloads go to the
   * handlers. Any prior socket is closed first. */
  openStream(session: string, handlers: StreamHandlers): void {
    this.closeStream();
    const wsBase = this.base.replace(/^http/, "ws");
    const sock = this.socketFactory(`${wsBase}/session/${session}/stream`);
    sock.onmessage = (ev) => {
      let raw: unknown;
      try {
        raw = JSON.parse(ev.data);
      } catch {
        raw = null; // the view model counts nulls as parse errors
      }
      handlers.onMessage(raw);
    };
    sock.onclose = () => handlers.onClosed();
    sock.onerror = () => handlers.onClosed();
    this.socket = sock;
  }

  closeStream(): void {
    if (this.socket !== null) {
      const sock = this.socket;
      this.socket = null;
      sock.onclose = null;
      sock.close();
    }
  }

  /** POST a goal/weight update; resolves with the acknowledgment or
   * throws RejectedCommand with the server's reason. */
  async sendGoal(session: string, body: GoalCommandBody): Promise<GoalAck> {
    const resp = await this.fetchImpl(
      `${this.base}/session/${session}/goal`, {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify(body),
      });
    if (!resp.ok) {
      throw new RejectedCommand(resp.status, await reasonOf(resp));
    }
    return parseGoalAck(await resp.json());
  }

  async setPaused(session: string, paused: boolean): Promise<void> {
    const resp = await this.fetchImpl(
      `${this.base}/session/${session}/${paused ? "pause" : "resume"}`,
      { method: "POST" });
    if (!resp.ok) {
      throw new RejectedCommand(resp.status, await reasonOf(resp));
    }
  }

  async reset(session: string): Promise<void> {
    const resp = await this.fetchImpl(
      `${this.base}/session/${session}/reset`, { method: "POST" });
    if (!resp.ok) {
      throw new RejectedCommand(resp.status, await reasonOf(resp));
    }
  }
}

async function reasonOf(resp: { json(): Promise<unknown> }): Promise<string> {
  try {
    const body = await resp.json() as Record<string, unknown>;
    if (typeof body.detail === "string") {
      return body.detail;
    }
    return JSON.stringify(body.detail ?? body);
  } catch {
    return "unknown error";
  }
}
