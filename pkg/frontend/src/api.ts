/** Thin typed client over the trajectory API. The fetch function is
 * injected so tests can replay recorded fixtures with no network. */

import { ApiErrorBody, EnsembleDocument, HealthDocument, PlacedPoint, QueryResponse,
         RiskDocument, SeriesDocument } from "./types";

export class ApiError extends Error {
  constructor(public status: number, public body: ApiErrorBody) {
    super(body.message || `HTTP ${status}`);
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  private controller: AbortController | null = null;

  constructor(private base: string, private fetchFn: FetchLike = fetch) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let resp: Response;
    try {
      resp = await this.fetchFn(this.base + path, init);
    } catch (err) {
      throw new ApiError(0, { code: "network", message: String(err) });
    }
    const text = await resp.text();
    let body: unknown = null;
    try {
      body = text ? JSON.parse(text) : null;
    } catch {
      throw new ApiError(resp.status, { code: "bad_json", message: "unparseable response" });
    }
    if (!resp.ok) {
      throw new ApiError(resp.status, body as ApiErrorBody);
    }
    return body as T;
  }

  health(): Promise<HealthDocument> {
    return this.request<HealthDocument>("/health");
  }

  putSeries(doc: SeriesDocument): Promise<{ id: string }> {
    return this.request<{ id: string }>("/series", { method: "PUT", body: JSON.stringify(doc) });
  }

  ensemble(id: string, params: { fraction: number; k: number; horizon_mult: number;
                                 seed: number }): Promise<EnsembleDocument> {
    const q = new URLSearchParams({
      fraction: String(params.fraction),
      k: String(params.k),
      horizon_mult: String(params.horizon_mult),
      seed: String(params.seed),
    });
    return this.request<EnsembleDocument>(`/series/${id}/ensemble?${q.toString()}`);
  }

  risk(id: string): Promise<RiskDocument> {
    return this.request<RiskDocument>(`/series/${id}/risk`);
  }

  /** At most one query in flight: a new one cancels its predecessor. */
  query(id: string, point: PlacedPoint, k: number, seed: number,
        fraction: number): Promise<QueryResponse> {
    if (this.controller) this.controller.abort();
    this.controller = new AbortController();
    return this.request<QueryResponse>(`/series/${id}/query`, {
      method: "POST",
      body: JSON.stringify({ point, k, seed, fraction }),
      signal: this.controller.signal,
    });
  }
}
