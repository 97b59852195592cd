/** Recorded mock server: replays exchanges captured from the real session API.
 *
 * Requests are matched by method+path(+query); bodies must equal the recorded
 * ones (canonical JSON), so the console cannot silently drift from the
 * contract. GET exchanges for the same key are consumed in recorded order.
 */

import type { FetchLike } from "../src/api.js";
import fixturesJson from "./fixtures.json";

export interface Exchange {
  method: string;
  path: string;
  params: Record<string, string> | null;
  body: unknown;
  status: number;
  response: unknown;
}

export interface Fixtures {
  session_id: string;
  ballkick_session_id: string;
  promoted_at: number;
  exchanges: Exchange[];
}

export const fixtures = fixturesJson as unknown as Fixtures;

function canonical(value: unknown): string {
  if (value === null || typeof value !== "object") return JSON.stringify(value);
  if (Array.isArray(value)) return `[${value.map(canonical).join(",")}]`;
  const entries = Object.entries(value as Record<string, unknown>)
    .sort(([a], [b]) => (a < b ? -1 : a > b ? 1 : 0))
    .map(([k, v]) => `${JSON.stringify(k)}:${canonical(v)}`);
  return `{${entries.join(",")}}`;
}

function keyOf(method: string, path: string, params: Record<string, string> | null): string {
  const query = params
    ? Object.entries(params)
        .sort(([a], [b]) => (a < b ? -1 : a > b ? 1 : 0))
        .map(([k, v]) => `${k}=${Number(v)}`)
        .join("&")
    : "";
  return `${method} ${path}${query ? "?" + query : ""}`;
}

function parseUrl(url: string): { path: string; params: Record<string, string> | null } {
  const q = url.indexOf("?");
  if (q < 0) return { path: url, params: null };
  const params: Record<string, string> = {};
  for (const piece of url.slice(q + 1).split("&")) {
    const [k, v] = piece.split("=");
    if (k) params[decodeURIComponent(k)] = decodeURIComponent(v ?? "");
  }
  return { path: url.slice(0, q), params };
}

export interface MockServer {
  fetch: FetchLike;
  /** recorded observation bodies, in order: the operator's lab script */
  observationScript: { outcome: Record<string, string>; situation: Record<string, string> }[];
  /** exchanges not yet replayed (for leak checks in tests) */
  remaining(): number;
}

export function recordedServer(baseUrl = ""): MockServer {
  const queues = new Map<string, Exchange[]>();
  for (const exchange of fixtures.exchanges) {
    const key = keyOf(exchange.method, exchange.path, exchange.params);
    const queue = queues.get(key) ?? [];
    queue.push(exchange);
    queues.set(key, queue);
  }

  const observationScript = fixtures.exchanges
    .filter((e) => e.method === "POST" && e.path.endsWith("/observations") && e.status < 400)
    .map((e) => e.body as { outcome: Record<string, string>; situation: Record<string, string> });

  const mockFetch: FetchLike = (url, init) => {
    const method = init?.method ?? "GET";
    const stripped = url.startsWith(baseUrl) ? url.slice(baseUrl.length) : url;
    const { path, params } = parseUrl(stripped);
    const queue = queues.get(keyOf(method, path, params));
    if (!queue || queue.length === 0) {
      throw new Error(`mock server has no recorded exchange for ${method} ${stripped}`);
    }
    const sent = init?.body === undefined ? undefined : JSON.parse(init.body);
    let exchange: Exchange;
    if (method === "POST" && path === "/sessions") {
      // session creation is matched by body so tests may create in any order
      const idx = queue.findIndex((e) => canonical(e.body) === canonical(sent));
      if (idx < 0) {
        throw new Error(`no recorded session creation matches body ${canonical(sent)}`);
      }
      exchange = queue.splice(idx, 1)[0]!;
    } else {
      exchange = queue.shift()!;
      if (method === "POST" && canonical(sent) !== canonical(exchange.body)) {
        throw new Error(
          `request body for ${method} ${path} differs from the recorded contract:\n` +
            `sent:     ${canonical(sent)}\nrecorded: ${canonical(exchange.body)}`,
        );
      }
    }
    return Promise.resolve({
      status: exchange.status,
      json: () => Promise.resolve(exchange.response),
    });
  };

  return {
    fetch: mockFetch,
    observationScript,
    remaining: () => [...queues.values()].reduce((n, q) => n + q.length, 0),
  };
}
