// Typed client for the backend /v1 API. Every page goes through this
// module, and every call lands in `requestLog`, which the integration
// tests use to assert that each user action maps to exactly one
// documented endpoint.

export interface DirectoryInfo {
  id: number;
  path: string;
  enabled: boolean;
  createdAt?: number;
  imageCount: number;
  progress: number;
}

export interface GeneratorInfo {
  name: string;
  kind: string;
  priority: number;
  enabled: boolean;
  healthy: boolean;
}

export interface GeneratorList {
  revision: number;
  generators: GeneratorInfo[];
}

export interface ResultEntry {
  imageId: number;
  score: number;
  path: string | null;
  url: string;
}

export interface GuideEntry {
  id: string;
  engineName: string;
  seed: number;
  kept: boolean;
  url: string;
}

export interface SourceEntry {
  guideId: string;
  embedderName: string;
  hits: { imageId: number; distance: number }[];
}

export interface QueryResponse {
  results: ResultEntry[];
  guides: GuideEntry[];
  sources: SourceEntry[];
  timings: Record<string, number>;
}

export interface StatusReport {
  apiHealthy: boolean;
  services: Record<string, string>;
  directories: DirectoryInfo[];
  generators: GeneratorInfo[];
  versions: Record<string, string>;
}

export interface QueryOverrides {
  m?: number;
  resolution?: string;
  engines?: string[];
  seed?: number;
}

export class ApiError extends Error {
  status: number;
  detail: unknown;

  constructor(status: number, detail: unknown) {
    super(`API error ${status}`);
    this.status = status;
    this.detail = detail;
  }
}

let base = defaultBase();

function defaultBase(): string {
  const w = globalThis as { NEEDLE_API?: string; location?: Location };
  if (w.NEEDLE_API) return w.NEEDLE_API;
  return "http://127.0.0.1:8461";
}

export function setApiBase(url: string): void {
  base = url.replace(/\/$/, "");
}

export function apiBase(): string {
  return base;
}

export const requestLog: { method: string; path: string }[] = [];

async function call<T>(method: string, path: string, body?: unknown): Promise<T> {
  requestLog.push({ method, path });
  const resp = await fetch(base + path, {
    method,
    headers: body === undefined ? {} : { "Content-Type": "application/json" },
    body: body === undefined ? undefined : JSON.stringify(body),
  });
  if (resp.status === 204) return undefined as T;
  const text = await resp.text();
  let parsed: unknown = text;
  try {
    parsed = text ? JSON.parse(text) : null;
  } catch {
    // health returns plain text
  }
  if (!resp.ok) {
    const detail =
      parsed && typeof parsed === "object" && "detail" in (parsed as object)
        ? (parsed as { detail: unknown }).detail
        : parsed;
    throw new ApiError(resp.status, detail);
  }
  return parsed as T;
}

export const api = {
  health: () => call<string>("GET", "/v1/health"),
  version: () => call<Record<string, string>>("GET", "/v1/version"),
  status: () => call<StatusReport>("GET", "/v1/status"),

  query: (prompt: string, n: number, overrides?: QueryOverrides) =>
    call<QueryResponse>("POST", "/v1/query", {
      prompt,
      n,
      overrides: overrides ?? null,
    }),

  directories: () => call<DirectoryInfo[]>("GET", "/v1/directories"),
  addDirectory: (path: string) =>
    call<DirectoryInfo>("POST", "/v1/directories", { path }),
  setDirectoryEnabled: (id: number, enabled: boolean) =>
    call<DirectoryInfo>("PATCH", `/v1/directories/${id}`, { enabled }),
  removeDirectory: (id: number) =>
    call<void>("DELETE", `/v1/directories/${id}`),

  generators: () => call<GeneratorList>("GET", "/v1/generators"),
  reorderGenerators: (orderedNames: string[], revision: number) =>
    call<{ revision: number }>("PATCH", "/v1/generators", {
      revision,
      orderedNames,
    }),
  setEngineEnabled: (name: string, enabled: boolean, revision: number) =>
    call<{ revision: number }>("PATCH", "/v1/generators", {
      revision,
      perEngine: { [name]: { enabled } },
    }),
};

export function imageUrl(relative: string): string {
  return base + relative;
}
