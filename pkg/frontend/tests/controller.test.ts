// Component tests for the three-panel flow against a mocked API.

import { readFileSync } from "node:fs";
import { join } from "node:path";
import { beforeEach, describe, expect, it, vi } from "vitest";

import { App, type LoadedImage } from "../src/controller.js";
import { decodeRle } from "../src/rle.js";
import { maskBoundary, type Ctx2D } from "../src/overlay.js";
import { initialState, type PredictResponse } from "../src/state.js";

// the real page markup (vitest runs from the frontend directory)
const PAGE = readFileSync(join(process.cwd(), "index.html"), "utf-8");

// 10x10 mask: lesion on rows 2..5, cols 3..7 (bbox x=3,y=2,w=5,h=4)
const MASK_RLE = [23, 5, 5, 5, 5, 5, 5, 5, 42];
const RESPONSE: PredictResponse = {
  classes: [
    { label: "Nev", probability: 0.38 },
    { label: "Mel", probability: 0.62 },
  ],
  bbox: { x: 3, y: 2, w: 5, h: 4 },
  mask: { dims: [10, 10], rle: MASK_RLE },
  degenerate_mask: false,
  model_version: "feedcafe",
};

interface RecordedCall {
  op: string;
  args: number[];
}

function recordingContext(): { ctx: Ctx2D; calls: RecordedCall[] } {
  const calls: RecordedCall[] = [];
  const ctx = {
    strokeStyle: "" as string,
    fillStyle: "" as string,
    lineWidth: 0,
    drawImage: (_img: CanvasImageSource, ...args: number[]) =>
      void calls.push({ op: "drawImage", args }),
    strokeRect: (...args: number[]) =>
      void calls.push({ op: "strokeRect", args }),
    fillRect: (...args: number[]) =>
      void calls.push({ op: "fillRect", args }),
  };
  return { ctx: ctx as unknown as Ctx2D, calls };
}

function jsonResponse(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), { status });
}

function pngFile(name = "lesion.png"): File {
  return new File([new Uint8Array([137, 80, 78, 71])], name,
                  { type: "image/png" });
}

const fakeImage: LoadedImage = {
  source: {} as CanvasImageSource,
  width: 10,
  height: 10,
};

function mountApp(fetchImpl: (url: string, init?: RequestInit) => Promise<Response>) {
  const bodyHtml = PAGE.slice(PAGE.indexOf("<main"),
                              PAGE.indexOf("</main>") + "</main>".length);
  document.body.innerHTML = bodyHtml;
  const recorder = recordingContext();
  const app = new App(document.getElementById("app") as HTMLElement, {
    fetchImpl,
    loadImage: async () => fakeImage,
    getContext: () => recorder.ctx,
    previewUrl: () => "blob:preview",
    maxCanvasWidth: 40, // 10px-wide test image -> display factor 4
  });
  return { app, recorder };
}

function el<T extends HTMLElement>(selector: string): T {
  return document.querySelector(selector) as T;
}

beforeEach(() => {
  document.body.innerHTML = "";
});

describe("three-panel flow", () => {
  it("select -> run -> annotated result with bbox, contour and bars", async () => {
    const fetchImpl = vi.fn(async () => jsonResponse(200, RESPONSE));
    const { app, recorder } = mountApp(fetchImpl);

    expect(el<HTMLButtonElement>("#run").disabled).toBe(true);
    app.onFileChosen(pngFile());
    await app.render();
    expect(el<HTMLButtonElement>("#run").disabled).toBe(false);
    expect(el("#file-name").textContent).toBe("lesion.png");
    expect(el<HTMLImageElement>("#preview").hidden).toBe(false);

    await app.run();
    expect(fetchImpl).toHaveBeenCalledTimes(1);
    expect(app.state.phase).toBe("done");
    expect(el("#status").textContent).toBe("done");

    // bounding box at response coordinates times the display factor (4x)
    const rects = recorder.calls.filter((c) => c.op === "strokeRect");
    expect(rects).toHaveLength(1);
    expect(rects[0].args).toEqual([3 * 4, 2 * 4, 5 * 4, 4 * 4]);

    // contour: one fill per boundary pixel of the decoded mask
    const mask = decodeRle(MASK_RLE, 10, 10);
    const boundary = maskBoundary(mask, 10, 10);
    const fills = recorder.calls.filter((c) => c.op === "fillRect");
    expect(fills).toHaveLength(boundary.length);

    // probability bars sorted descending, labelled with percentages
    const labels = Array.from(
      document.querySelectorAll("#probabilities .prob-label"),
      (n) => n.textContent);
    expect(labels).toEqual(["Mel 62.0%", "Nev 38.0%"]);
    const widths = Array.from(
      document.querySelectorAll<HTMLElement>("#probabilities .prob-fill"),
      (n) => parseFloat(n.style.width));
    expect(widths[0] + widths[1]).toBeCloseTo(100, 5);
  });

  it("only one request per run click; run disabled while uploading", async () => {
    let resolve!: (r: Response) => void;
    const pending = new Promise<Response>((res) => (resolve = res));
    const fetchImpl = vi.fn(() => pending);
    const { app } = mountApp(fetchImpl);
    app.onFileChosen(pngFile());
    const running = app.run();
    expect(app.state.phase).toBe("uploading");
    await app.render();
    expect(el<HTMLButtonElement>("#run").disabled).toBe(true);
    await app.run(); // ignored: still uploading
    expect(fetchImpl).toHaveBeenCalledTimes(1);
    resolve(jsonResponse(200, RESPONSE));
    await running;
    expect(app.state.phase).toBe("done");
  });

  it("shows the machine-readable error code and clears the old result", async () => {
    const fetchImpl = vi
      .fn()
      .mockResolvedValueOnce(jsonResponse(200, RESPONSE))
      .mockResolvedValueOnce(jsonResponse(400, { code: "bad_class_count" }));
    const { app } = mountApp(fetchImpl);
    app.onFileChosen(pngFile());
    await app.run();
    expect(app.state.result).not.toBeNull();
    await app.run();
    expect(app.state.phase).toBe("error");
    expect(app.state.result).toBeNull();
    const banner = el("#error-banner");
    expect(banner.hidden).toBe(false);
    expect(banner.textContent).toContain("bad_class_count");
    expect(document.querySelectorAll("#probabilities .prob-row")).toHaveLength(0);
  });

  it("network failure is a retriable error phase", async () => {
    const fetchImpl = vi
      .fn()
      .mockRejectedValueOnce(new TypeError("offline"))
      .mockResolvedValueOnce(jsonResponse(200, RESPONSE));
    const { app } = mountApp(fetchImpl);
    app.onFileChosen(pngFile());
    await app.run();
    expect(app.state.phase).toBe("error");
    expect(app.state.error).toBe("network_error");
    expect(el<HTMLButtonElement>("#run").disabled).toBe(false);
    await app.run();
    expect(app.state.phase).toBe("done");
  });

  it("reset returns to the initial state from any phase", async () => {
    const fetchImpl = vi.fn(async () => jsonResponse(200, RESPONSE));
    const { app } = mountApp(fetchImpl);
    app.onFileChosen(pngFile());
    await app.run();
    expect(app.state.phase).toBe("done");
    app.doReset();
    expect(app.state).toEqual(initialState());
    expect(el<HTMLButtonElement>("#run").disabled).toBe(true);
    expect(el("#file-name").textContent).toBe("no image selected");
    expect(el<HTMLImageElement>("#preview").hidden).toBe(true);
  });

  it("responses landing after reset are discarded by request id", async () => {
    let resolve!: (r: Response) => void;
    const pending = new Promise<Response>((res) => (resolve = res));
    const fetchImpl = vi.fn(() => pending);
    const { app } = mountApp(fetchImpl);
    app.onFileChosen(pngFile());
    const running = app.run();
    app.doReset();
    resolve(jsonResponse(200, RESPONSE));
    await running;
    expect(app.state).toEqual(initialState());
  });

  it("rejects unsupported files inline without changing state", async () => {
    const fetchImpl = vi.fn(async () => jsonResponse(200, RESPONSE));
    const { app } = mountApp(fetchImpl);
    const before = structuredClone(app.state);
    app.onFileChosen(new File(["x"], "notes.txt", { type: "text/plain" }));
    await app.render();
    expect(app.state).toEqual(before);
    const notice = el("#notice");
    expect(notice.hidden).toBe(false);
    expect(notice.textContent).toContain("unsupported");
    expect(el<HTMLButtonElement>("#run").disabled).toBe(true);
  });

  it("dropping a second image replaces the first", async () => {
    const fetchImpl = vi.fn(async () => jsonResponse(200, RESPONSE));
    const { app } = mountApp(fetchImpl);
    app.onFileChosen(pngFile("first.png"));
    await app.run();
    app.onFileChosen(pngFile("second.png"));
    await app.render();
    expect(app.state.file?.name).toBe("second.png");
    expect(app.state.result).toBeNull();
    expect(el("#file-name").textContent).toBe("second.png");
  });

  it("flags degenerate masks in the output panel", async () => {
    const degenerate = { ...RESPONSE, degenerate_mask: true };
    const fetchImpl = vi.fn(async () => jsonResponse(200, degenerate));
    const { app } = mountApp(fetchImpl);
    app.onFileChosen(pngFile());
    await app.run();
    expect(el("#degenerate-note").hidden).toBe(false);
  });

  it("class selector switches the posted class count", async () => {
    const posted: string[] = [];
    const fetchImpl = vi.fn(async (_url: string, init?: RequestInit) => {
      posted.push((init?.body as FormData).get("classes") as string);
      return jsonResponse(200, RESPONSE);
    });
    const { app } = mountApp(fetchImpl);
    app.onFileChosen(pngFile());
    const radio2 = document.querySelector<HTMLInputElement>(
      "input[name=classes][value='2']")!;
    radio2.checked = true;
    radio2.dispatchEvent(new Event("change"));
    expect(app.state.classes).toBe(2);
    await app.run();
    expect(posted).toEqual(["2"]);
  });
});
