// UI state machine for the three-panel app (input / processing / output).
// Pure transition functions; the controller owns the single mutable copy.

export type Phase = "idle" | "uploading" | "done" | "error";

export interface ClassProb {
  label: string;
  probability: number;
}

export interface PredictResponse {
  classes: ClassProb[];
  bbox: { x: number; y: number; w: number; h: number };
  mask: { dims: [number, number]; rle: number[] };
  degenerate_mask: boolean;
  model_version: string;
}

export interface UiState {
  file: File | null;
  classes: 2 | 3;
  phase: Phase;
  result: PredictResponse | null;
  error: string | null;
}

export const ACCEPTED_EXTENSIONS = [".png", ".jpg", ".jpeg", ".bmp"];
export const ACCEPTED_MIME = ["image/png", "image/jpeg", "image/bmp"];

export function initialState(): UiState {
  return { file: null, classes: 3, phase: "idle", result: null, error: null };
}

export function canRun(state: UiState): boolean {
  return state.file !== null && state.phase !== "uploading";
}

export function isAcceptedImage(name: string, mime: string): boolean {
  const lower = name.toLowerCase();
  if (ACCEPTED_EXTENSIONS.some((ext) => lower.endsWith(ext))) return true;
  return ACCEPTED_MIME.includes(mime);
}

export interface SelectOutcome {
  state: UiState;
  rejected: string | null;
}

/** A valid file replaces any previous one and clears old results; an
 * unsupported type leaves the state untouched and reports why. */
export function selectImage(state: UiState, file: File): SelectOutcome {
  if (!isAcceptedImage(file.name, file.type)) {
    return {
      state,
      rejected: `unsupported file type (accepted: png, jpg, bmp, jpeg)`,
    };
  }
  return {
    state: { ...state, file, phase: "idle", result: null, error: null },
    rejected: null,
  };
}

export function setClasses(state: UiState, classes: 2 | 3): UiState {
  return { ...state, classes };
}

export function startUpload(state: UiState): UiState {
  return { ...state, phase: "uploading", error: null };
}

export function finishSuccess(state: UiState, result: PredictResponse): UiState {
  return { ...state, phase: "done", result, error: null };
}

/** Errors clear any previous result so stale overlays never linger. */
export function finishError(state: UiState, code: string): UiState {
  return { ...state, phase: "error", result: null, error: code };
}

export function reset(): UiState {
  return initialState();
}
