// Typed client for the /api endpoints of the tagging service.

export interface LabelPrediction {
  label_id: string;
  name: string;
  confidence: number;
  decided: boolean;
}

export interface PredictResponse {
  doc_id: string;
  tactics: LabelPrediction[];
  techniques: LabelPrediction[];
  model_version: string;
}

export interface TaxonomyTactic {
  id: string;
  name: string;
  stix_id: string;
}

export interface TaxonomyTechnique extends TaxonomyTactic {
  tactic_ids: string[];
}

export interface TaxonomyResponse {
  version: string;
  tactics: TaxonomyTactic[];
  techniques: TaxonomyTechnique[];
}

export interface ModelInfo {
  trained_at: string;
  model_version: string;
  taxonomy_version: string;
  postprocessing: { strategy: string; config: Record<string, unknown> };
  cv_scores: unknown;
  retrain_running: boolean;
  last_retrain_error: string | null;
}

export interface FeedbackPayload {
  text: string;
  tactics: string[];
  techniques: string[];
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
    this.name = "ApiError";
  }
}

async function parseError(resp: Response): Promise<ApiError> {
  let detail = resp.statusText;
  try {
    const body = await resp.json();
    if (typeof body.detail === "string") detail = body.detail;
    else if (body.detail) detail = JSON.stringify(body.detail);
  } catch {
    // non-JSON error body; keep the status text
  }
  return new ApiError(resp.status, detail);
}

export class Client {
  constructor(
    private base = "",
    private fetchFn: typeof fetch = (...args) => fetch(...args),
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const resp = await this.fetchFn(this.base + path, {
      method,
      headers: body === undefined ? {} : { "content-type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!resp.ok) throw await parseError(resp);
    return (await resp.json()) as T;
  }

  predict(text: string, title?: string): Promise<PredictResponse> {
    return this.request("POST", "/api/predict", title ? { text, title } : { text });
  }

  feedback(payload: FeedbackPayload): Promise<{ doc_id: string; stored: number }> {
    return this.request("POST", "/api/feedback", payload);
  }

  retrain(): Promise<{ status: string }> {
    return this.request("POST", "/api/retrain");
  }

  model(): Promise<ModelInfo> {
    return this.request("GET", "/api/model");
  }

  taxonomy(): Promise<TaxonomyResponse> {
    return this.request("GET", "/api/taxonomy");
  }
}
