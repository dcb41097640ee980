// Thin client over the screening service HTTP API.

import type { ScreeningResponse, SessionVerdict } from "./state.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    message: string,
  ) {
    super(message);
  }
}

export class ApiClient {
  constructor(
    private baseUrl: string,
    private fetchImpl: typeof fetch = fetch,
  ) {}

  private async parseError(response: Response): Promise<never> {
    let message = `service error (${response.status})`;
    try {
      const body = await response.json();
      if (body && typeof body.error === "string") message = body.error;
    } catch {
      // fall through with the generic message
    }
    throw new ApiError(response.status, message);
  }

  async screen(blob: Blob): Promise<ScreeningResponse> {
    const response = await this.fetchImpl(`${this.baseUrl}/v1/screen`, {
      method: "POST",
      headers: { "content-type": "audio/wav" },
      body: blob,
    });
    if (!response.ok) await this.parseError(response);
    return (await response.json()) as ScreeningResponse;
  }

  async screenSession(blobs: Blob[]): Promise<SessionVerdict> {
    const form = new FormData();
    blobs.forEach((blob, i) => form.append("files", blob, `clip${i}.wav`));
    const response = await this.fetchImpl(`${this.baseUrl}/v1/screen/session`, {
      method: "POST",
      body: form,
    });
    if (!response.ok) await this.parseError(response);
    return (await response.json()) as SessionVerdict;
  }

  async health(): Promise<{ status: string }> {
    const response = await this.fetchImpl(`${this.baseUrl}/v1/health`);
    if (!response.ok) await this.parseError(response);
    return (await response.json()) as { status: string };
  }
}
