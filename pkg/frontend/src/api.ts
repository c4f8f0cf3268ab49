// Thin client for the inference service; every failure is reduced to a
// machine-readable code the UI can display verbatim.

import type { PredictResponse } from "./state.js";

export type PredictOutcome =
  | { kind: "ok"; body: PredictResponse }
  | { kind: "error"; code: string; status: number | null };

export type FetchLike = (
  input: string,
  init?: RequestInit,
) => Promise<Response>;

export async function postPredict(
  file: File,
  classes: 2 | 3,
  fetchImpl: FetchLike = fetch,
  baseUrl = "",
): Promise<PredictOutcome> {
  const form = new FormData();
  form.append("image", file, file.name);
  form.append("classes", String(classes));
  let response: Response;
  try {
    response = await fetchImpl(`${baseUrl}/api/predict`, {
      method: "POST",
      body: form,
    });
  } catch {
    return { kind: "error", code: "network_error", status: null };
  }
  if (!response.ok) {
    let code = `http_${response.status}`;
    try {
      const body = await response.json();
      if (body && typeof body.code === "string") code = body.code;
    } catch {
      // non-JSON error body: keep the status-based code
    }
    return { kind: "error", code, status: response.status };
  }
  const body = (await response.json()) as PredictResponse;
  return { kind: "ok", body };
}
