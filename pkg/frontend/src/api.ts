/** Typed client for the prediction service JSON API. */

export interface Preprocessing {
  channels: number;
  height: number;
  width: number;
  scale: string;
}

export interface PredictionReport {
  probabilities: number[];
  label: string;
  label_id: number;
  model_name: string;
  model_hash: string;
  preprocessing: Preprocessing;
}

export interface ModelInfo {
  model_name: string;
  architecture: unknown;
  preprocessing: Preprocessing;
  classes: string[];
  model_hash: string;
}

export interface Health {
  status: string;
  model_hash: string;
}

/** Server errors carry a stable machine-readable code; network failures
 * are surfaced with the synthetic code "network_error". */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    readonly detail: string,
  ) {
    super(`${code}: ${detail}`);
    this.name = "ApiError";
  }

  get isNetworkFailure(): boolean {
    return this.status === 0;
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class CxrApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let res: Response;
    try {
      res = await this.fetchFn(this.baseUrl + path, init);
    } catch (err) {
      throw new ApiError(0, "network_error", String(err));
    }
    if (!res.ok) {
      let code = "http_error";
      let detail = res.statusText;
      try {
        const body = await res.json();
        if (typeof body.error === "string") code = body.error;
        if (typeof body.detail === "string") detail = body.detail;
      } catch {
        // non-JSON error body; keep the defaults
      }
      throw new ApiError(res.status, code, detail);
    }
    return res.json() as Promise<T>;
  }

  predict(image: Blob, contentType = "image/png"): Promise<PredictionReport> {
    return this.request<PredictionReport>("/api/v1/predict", {
      method: "POST",
      headers: { "Content-Type": contentType },
      body: image,
    });
  }

  modelInfo(): Promise<ModelInfo> {
    return this.request<ModelInfo>("/api/v1/model");
  }

  health(): Promise<Health> {
    return this.request<Health>("/api/v1/health");
  }
}
