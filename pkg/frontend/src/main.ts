// mask-studio: browse views, drag a patch, tune alpha with live preview,
// commit a mask set, launch an edit job, and watch its previews.

import { ApiRequestError, Client, decodeMaskPng, type JobStatus, type MaskPreview, type Rect } from "./api.js";
import { latestWins } from "./debounce.js";
import { drawOverlay, drawSparkline, maskBitmapFromPng } from "./overlay.js";
import { isTerminal, pollJob } from "./poll.js";
import { normalizeDrag, type Point } from "./rect.js";
import * as session from "./session.js";

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
};

const state = {
  session: session.newSession(""),
  zoom: 6,
  imageSize: 64,
  viewBitmap: null as ImageBitmap | null,
  maskBitmap: null as ImageBitmap | null,
  dragStart: null as Point | null,
  lastPreview: null as MaskPreview | null,
  losses: [] as number[],
  viewKind: "rgb" as "rgb" | "feature_pca" | "depth",
};

const client = new Client(window.location.origin);

function toast(msg: string): void {
  const el = $("toast");
  el.textContent = msg;
  el.classList.add("show");
  setTimeout(() => el.classList.remove("show"), 4000);
}

function describeError(e: unknown): string {
  if (e instanceof ApiRequestError) return `${e.api.code}: ${e.api.message}`;
  return String(e);
}

async function loadView(): Promise<void> {
  const url = client.viewUrl(state.session.view, state.viewKind);
  const res = await fetch(url);
  if (!res.ok) {
    toast(describeError(new ApiRequestError(res.status, await res.json())));
    return;
  }
  const blob = await res.blob();
  state.viewBitmap = await createImageBitmap(blob);
  state.imageSize = state.viewBitmap.width;
  redraw();
}

function canvasCtx(): CanvasRenderingContext2D {
  const canvas = $("view-canvas") as unknown as HTMLCanvasElement;
  const size = state.imageSize * state.zoom;
  if (canvas.width !== size) {
    canvas.width = size;
    canvas.height = size;
  }
  const ctx = canvas.getContext("2d");
  if (!ctx) throw new Error("no 2d context");
  return ctx;
}

function redraw(): void {
  if (!state.viewBitmap) return;
  drawOverlay(canvasCtx(), state.viewBitmap, state.maskBitmap,
              state.session.rect, state.zoom);
}

const schedulePreview = latestWins(
  (view: number, rect: Rect, alpha: number) => client.previewMask(view, rect, alpha),
  async (preview) => {
    state.lastPreview = preview;
    state.maskBitmap = await maskBitmapFromPng(decodeMaskPng(preview.mask_png_b64));
    $("pixel-count").textContent = `${preview.pixel_count} px selected`;
    redraw();
  },
  150, // debounce: stays comfortably under 4 requests/s
  (e) => toast(describeError(e)),
);

function requestPreview(): void {
  const { rect, alpha, view } = state.session;
  if (rect) schedulePreview(view, rect, alpha);
}

// ---- patch selection ----

function pointerPoint(ev: PointerEvent): Point {
  const rect = (ev.target as HTMLElement).getBoundingClientRect();
  return { x: ev.clientX - rect.left, y: ev.clientY - rect.top };
}

function wireCanvas(): void {
  const canvas = $("view-canvas") as unknown as HTMLCanvasElement;
  canvas.addEventListener("pointerdown", (ev) => {
    state.dragStart = pointerPoint(ev);
    canvas.setPointerCapture(ev.pointerId);
  });
  canvas.addEventListener("pointermove", (ev) => {
    if (!state.dragStart) return;
    const rect = normalizeDrag(state.dragStart, pointerPoint(ev), state.zoom,
                               state.imageSize, state.imageSize);
    if (rect) {
      state.session = session.setRect(state.session, rect);
      redraw();
    }
  });
  canvas.addEventListener("pointerup", (ev) => {
    if (!state.dragStart) return;
    const rect = normalizeDrag(state.dragStart, pointerPoint(ev), state.zoom,
                               state.imageSize, state.imageSize);
    state.dragStart = null;
    if (!rect) {
      toast("drag a rectangle to select a patch");
      return;
    }
    state.session = session.setRect(state.session, rect);
    $("rect-label").textContent = `rect ${rect.join(",")}`;
    redraw();
    requestPreview();
  });
}

// ---- controls ----

function wireControls(): void {
  const alpha = $("alpha") as unknown as HTMLInputElement;
  alpha.addEventListener("input", () => {
    state.session = session.setAlpha(state.session, parseFloat(alpha.value));
    $("alpha-label").textContent = `alpha = ${alpha.value}`;
    requestPreview();
  });
  $("prev-view").addEventListener("click", () => switchView(-1));
  $("next-view").addEventListener("click", () => switchView(1));
  ($("view-kind") as unknown as HTMLSelectElement).addEventListener("change", (ev) => {
    state.viewKind = (ev.target as HTMLSelectElement).value as typeof state.viewKind;
    void loadView();
  });
  $("commit").addEventListener("click", () => void commitMask());
  $("launch").addEventListener("click", () => void launchJob());
  const slider = $("compare") as unknown as HTMLInputElement;
  slider.addEventListener("input", () => {
    $("after-wrap").style.width = `${slider.value}%`;
  });
}

function switchView(delta: number): void {
  state.session = session.selectView(state.session, Math.max(0, state.session.view + delta));
  $("view-label").textContent = `view ${state.session.view}`;
  state.maskBitmap = null;
  void loadView().then(() => requestPreview());
}

async function commitMask(): Promise<void> {
  const { rect, alpha, view } = state.session;
  if (!rect) {
    toast("select a patch first");
    return;
  }
  try {
    const { maskset_id } = await client.commitMask(view, rect, alpha);
    state.session = session.committed(state.session, maskset_id);
    $("maskset-label").textContent = `maskset ${maskset_id}`;
    ($("launch") as unknown as HTMLButtonElement).disabled = false;
  } catch (e) {
    toast(describeError(e));
  }
}

// ---- edit job ----

async function populatePrompts(): Promise<void> {
  try {
    const reg = await client.prompts();
    const promptSel = $("prompt") as unknown as HTMLSelectElement;
    const bgtSel = $("bgt") as unknown as HTMLSelectElement;
    promptSel.innerHTML = "";
    bgtSel.innerHTML = "";
    for (const p of reg.prompts) {
      promptSel.add(new Option(p, p));
    }
    for (const p of reg.palettes) {
      bgtSel.add(new Option(p, p));
    }
  } catch (e) {
    toast(describeError(e));
  }
}

async function launchJob(): Promise<void> {
  if (!session.canLaunch(state.session)) {
    toast("commit a maskset first (or wait for the running job)");
    return;
  }
  const launchBtn = $("launch") as unknown as HTMLButtonElement;
  launchBtn.disabled = true;
  const req = {
    maskset_id: state.session.masksetId as string,
    prompt: ($("prompt") as unknown as HTMLSelectElement).value,
    bgt: ($("bgt") as unknown as HTMLSelectElement).value,
    lambda_unmask: parseFloat(($("lambda-unmask") as unknown as HTMLInputElement).value),
    lambda_clip: parseFloat(($("lambda-clip") as unknown as HTMLInputElement).value),
    steps: parseInt(($("steps") as unknown as HTMLInputElement).value, 10),
  };
  try {
    const { job_id } = await client.submitEdit(req);
    state.session = session.jobStarted(state.session, job_id);
    state.losses = [];
    $("before-img").setAttribute("src", client.viewUrl(state.session.view, "rgb"));
    await pollJob(() => client.jobStatus(job_id), {
      intervalMs: 1000,
      onUpdate: (s: JobStatus) => {
        $("job-label").textContent = `job ${s.job_id}: ${s.phase} step ${s.step}`;
        const loss = s.losses["unmask"] ?? s.losses["sds_grad_norm"];
        if (loss !== undefined) {
          state.losses.push(loss);
          drawSparkline(($("sparkline") as unknown as HTMLCanvasElement)
            .getContext("2d") as CanvasRenderingContext2D, state.losses);
        }
        if (!isTerminal(s.phase)) {
          $("after-img").setAttribute(
            "src", `${client.jobPreviewUrl(s.job_id)}?t=${Date.now()}`);
        }
      },
    });
    $("after-img").setAttribute(
      "src", `${client.jobPreviewUrl(state.session.jobId as string)}?t=${Date.now()}`);
    toast("edit finished");
  } catch (e) {
    toast(describeError(e));   // failed jobs surface their ApiError detail
  } finally {
    state.session = { ...state.session, jobId: null };
    launchBtn.disabled = !session.canLaunch(state.session);
  }
}

async function start(): Promise<void> {
  wireCanvas();
  wireControls();
  await populatePrompts();
  await loadView();
}

if (typeof document !== "undefined") {
  void start();
}
