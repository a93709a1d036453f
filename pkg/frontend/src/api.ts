// Typed client for the raypaint HTTP API. All mask/loss math happens
// server-side; this module only moves bytes and JSON.

export interface ApiError {
  code: "bad_request" | "not_found" | "conflict" | "numeric_fault" | "config";
  message: string;
  detail: unknown;
}

export class ApiRequestError extends Error {
  constructor(public status: number, public api: ApiError) {
    super(`${api.code}: ${api.message}`);
  }
}

export type Rect = [number, number, number, number]; // row0, col0, row1, col1

export interface MaskPreview {
  mask_png_b64: string;
  pixel_count: number;
  sim_histogram: number[];
  view: number;
  rect: Rect;
  alpha: number;
}

export interface JobStatus {
  job_id: string;
  phase: "pretrain" | "repaint" | "done" | "failed";
  step: number;
  losses: Record<string, number>;
  preview_view: number;
  error: string;
}

export interface MasksetInfo {
  id: string;
  view: number;
  rect: Rect;
  alpha: number;
}

export interface PromptRegistry {
  prompts: string[];
  palettes: string[];
}

export interface EditRequest {
  maskset_id: string;
  prompt: string;
  bgt: string;
  lambda_unmask?: number;
  lambda_clip?: number;
  steps?: number;
  seed?: number;
  sds?: boolean;
  bgt_in_prompt?: boolean;
  clip?: boolean;
}

async function asApiError(res: Response): Promise<ApiRequestError> {
  let body: ApiError;
  try {
    body = (await res.json()) as ApiError;
  } catch {
    body = { code: "bad_request", message: res.statusText, detail: null };
  }
  return new ApiRequestError(res.status, body);
}

export class Client {
  constructor(
    public baseUrl: string,
    private fetcher: typeof fetch = fetch,
  ) {}

  private async getJson<T>(path: string): Promise<T> {
    const res = await this.fetcher(this.baseUrl + path);
    if (!res.ok) throw await asApiError(res);
    return (await res.json()) as T;
  }

  private async postJson<T>(path: string, body: unknown): Promise<T> {
    const res = await this.fetcher(this.baseUrl + path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!res.ok) throw await asApiError(res);
    return (await res.json()) as T;
  }

  viewUrl(i: number, kind: "rgb" | "feature_pca" | "depth" | "mask"): string {
    return `${this.baseUrl}/views?i=${i}&kind=${kind}`;
  }

  previewMask(view: number, rect: Rect, alpha: number): Promise<MaskPreview> {
    return this.postJson<MaskPreview>("/mask/preview", { view, rect, alpha });
  }

  commitMask(view: number, rect: Rect, alpha: number): Promise<{ maskset_id: string }> {
    return this.postJson<{ maskset_id: string }>("/mask/commit", { view, rect, alpha });
  }

  masksets(): Promise<{ masksets: MasksetInfo[] }> {
    return this.getJson<{ masksets: MasksetInfo[] }>("/masksets");
  }

  prompts(): Promise<PromptRegistry> {
    return this.getJson<PromptRegistry>("/prompts");
  }

  submitEdit(req: EditRequest): Promise<{ job_id: string }> {
    return this.postJson<{ job_id: string }>("/edit", req);
  }

  jobStatus(jobId: string): Promise<JobStatus> {
    return this.getJson<JobStatus>(`/job/${jobId}`);
  }

  jobPreviewUrl(jobId: string): string {
    return `${this.baseUrl}/job/${jobId}/preview`;
  }
}

// Decode the preview's base64 PNG into raw bytes (unchanged; byte-for-byte
// what the server produced, used by the parity test and the overlay).
export function decodeMaskPng(b64: string): Uint8Array {
  if (typeof atob === "function") {
    const bin = atob(b64);
    const out = new Uint8Array(bin.length);
    for (let i = 0; i < bin.length; i++) out[i] = bin.charCodeAt(i);
    return out;
  }
  return new Uint8Array(Buffer.from(b64, "base64"));
}
