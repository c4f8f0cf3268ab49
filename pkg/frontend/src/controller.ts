// Wires the three panels to the state machine and the API client.
// Browser specifics (fetch, image decoding, canvas contexts, object URLs)
// are injected so component tests can run headless.

import { postPredict, type FetchLike } from "./api.js";
import { drawOverlay, renderProbabilityBars, type Ctx2D } from "./overlay.js";
import {
  canRun, finishError, finishSuccess, initialState, reset, selectImage,
  setClasses, startUpload, type UiState,
} from "./state.js";

export interface LoadedImage {
  source: CanvasImageSource;
  width: number;
  height: number;
}

export interface AppOptions {
  fetchImpl?: FetchLike;
  loadImage?: (file: File) => Promise<LoadedImage>;
  getContext?: (canvas: HTMLCanvasElement) => Ctx2D | null;
  previewUrl?: (file: File) => string;
  maxCanvasWidth?: number;
}

async function defaultLoadImage(file: File): Promise<LoadedImage> {
  const bitmap = await createImageBitmap(file);
  return { source: bitmap, width: bitmap.width, height: bitmap.height };
}

export class App {
  state: UiState = initialState();
  requestSeq = 0;

  private readonly fetchImpl: FetchLike;
  private readonly loadImage: (file: File) => Promise<LoadedImage>;
  private readonly getContext: (c: HTMLCanvasElement) => Ctx2D | null;
  private readonly previewUrl: (file: File) => string;
  private readonly maxCanvasWidth: number;

  constructor(readonly root: HTMLElement, options: AppOptions = {}) {
    this.fetchImpl = options.fetchImpl ?? ((input, init) => fetch(input, init));
    this.loadImage = options.loadImage ?? defaultLoadImage;
    this.getContext = options.getContext
      ?? ((c) => c.getContext("2d") as Ctx2D | null);
    this.previewUrl = options.previewUrl ?? ((f) => URL.createObjectURL(f));
    this.maxCanvasWidth = options.maxCanvasWidth ?? 480;
    this.bind();
    this.render();
  }

  private el<T extends HTMLElement>(selector: string): T {
    const found = this.root.querySelector<T>(selector);
    if (!found) throw new Error(`missing element ${selector}`);
    return found;
  }

  private bind(): void {
    const fileInput = this.el<HTMLInputElement>("#file-input");
    fileInput.addEventListener("change", () => {
      const file = fileInput.files?.[0];
      if (file) this.onFileChosen(file);
      fileInput.value = "";
    });

    const dropzone = this.el<HTMLElement>("#dropzone");
    dropzone.addEventListener("dragover", (event) => {
      event.preventDefault();
      dropzone.classList.add("dragging");
    });
    dropzone.addEventListener("dragleave", () => {
      dropzone.classList.remove("dragging");
    });
    dropzone.addEventListener("drop", (event) => {
      event.preventDefault();
      dropzone.classList.remove("dragging");
      const file = (event as DragEvent).dataTransfer?.files?.[0];
      if (file) this.onFileChosen(file);
    });

    for (const radio of this.root.querySelectorAll<HTMLInputElement>(
        "input[name=classes]")) {
      radio.addEventListener("change", () => {
        if (radio.checked) {
          this.state = setClasses(this.state, Number(radio.value) as 2 | 3);
          this.render();
        }
      });
    }

    this.el<HTMLButtonElement>("#run").addEventListener("click", () => {
      void this.run();
    });
    this.el<HTMLButtonElement>("#reset").addEventListener("click", () => {
      this.doReset();
    });
  }

  onFileChosen(file: File): void {
    const outcome = selectImage(this.state, file);
    this.state = outcome.state;
    this.setNotice(outcome.rejected);
    this.render();
  }

  doReset(): void {
    this.requestSeq += 1; // any in-flight response becomes stale
    this.state = reset();
    this.setNotice(null);
    this.render();
  }

  async run(): Promise<void> {
    const file = this.state.file;
    if (!canRun(this.state) || !file) return;
    const requestId = ++this.requestSeq;
    this.state = startUpload(this.state);
    this.render();
    const outcome = await postPredict(file, this.state.classes,
                                      this.fetchImpl);
    if (requestId !== this.requestSeq) return; // stale: dropped silently
    this.state = outcome.kind === "ok"
      ? finishSuccess(this.state, outcome.body)
      : finishError(this.state, outcome.code);
    await this.render();
  }

  private setNotice(message: string | null): void {
    const notice = this.el<HTMLElement>("#notice");
    notice.textContent = message ?? "";
    notice.hidden = message === null;
  }

  async render(): Promise<void> {
    const state = this.state;
    this.el<HTMLButtonElement>("#run").disabled = !canRun(state);
    this.el<HTMLElement>("#status").textContent = state.phase;

    const preview = this.el<HTMLImageElement>("#preview");
    if (state.file) {
      preview.src = this.previewUrl(state.file);
      preview.hidden = false;
      this.el<HTMLElement>("#file-name").textContent = state.file.name;
    } else {
      preview.removeAttribute("src");
      preview.hidden = true;
      this.el<HTMLElement>("#file-name").textContent = "no image selected";
    }

    for (const radio of this.root.querySelectorAll<HTMLInputElement>(
        "input[name=classes]")) {
      radio.checked = Number(radio.value) === state.classes;
    }

    const banner = this.el<HTMLElement>("#error-banner");
    banner.hidden = state.phase !== "error";
    banner.textContent = state.error ? `request failed: ${state.error}` : "";

    const output = this.el<HTMLElement>("#output-panel");
    output.classList.toggle("has-result", state.phase === "done");
    this.el<HTMLElement>("#degenerate-note").hidden =
      !(state.result?.degenerate_mask ?? false);

    if (state.phase === "done" && state.result && state.file) {
      renderProbabilityBars(this.el<HTMLElement>("#probabilities"),
                            state.result.classes);
      const canvas = this.el<HTMLCanvasElement>("#result-canvas");
      const [h, w] = state.result.mask.dims;
      const scale = Math.min(this.maxCanvasWidth / w, 4); // upscale cap 4x
      canvas.width = Math.round(w * scale);
      canvas.height = Math.round(h * scale);
      const ctx = this.getContext(canvas);
      if (ctx) {
        const image = await this.loadImage(state.file);
        drawOverlay(ctx, image.source, state.result,
                    canvas.width, canvas.height);
      }
    } else {
      this.el<HTMLElement>("#probabilities").innerHTML = "";
    }
  }
}

export function mount(root: HTMLElement, options: AppOptions = {}): App {
  return new App(root, options);
}
