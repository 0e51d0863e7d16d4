/**
 * DOM wiring: connect form, canvas rendering, keyboard shortcuts.
 *
 * Keys while reviewing: A = accept, R = reject, O = cycle overlay opacity.
 */

import { CandidatePayload, ReviewClient } from "./api.js";
import { classColor } from "./overlay.js";
import { LoopState, ReviewLoop } from "./state.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function pngUrl(base64: string): string {
  return `data:image/png;base64,${base64}`;
}

async function drawCandidate(
  canvas: HTMLCanvasElement,
  candidate: CandidatePayload,
  opacity: number,
): Promise<void> {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const overlay = new Image();
  const base = candidate.image_png_base64 ? new Image() : null;
  const loaded = (img: HTMLImageElement) =>
    new Promise<void>((resolve, reject) => {
      img.onload = () => resolve();
      img.onerror = () => reject(new Error("image decode failed"));
    });
  overlay.src = pngUrl(candidate.overlay_png_base64);
  const waits = [loaded(overlay)];
  if (base) {
    base.src = pngUrl(candidate.image_png_base64 as string);
    waits.push(loaded(base));
  }
  await Promise.all(waits);
  const width = (base ?? overlay).naturalWidth;
  const height = (base ?? overlay).naturalHeight;
  canvas.width = width;
  canvas.height = height;
  ctx.imageSmoothingEnabled = false;
  ctx.clearRect(0, 0, width, height);
  if (base) ctx.drawImage(base, 0, 0);
  ctx.globalAlpha = opacity;
  ctx.drawImage(overlay, 0, 0);
  ctx.globalAlpha = 1;
}

function render(state: LoopState, classes: string[]): void {
  const status = el<HTMLDivElement>("status");
  const detail = el<HTMLDivElement>("detail");
  const banner = el<HTMLDivElement>("banner");
  const summaryBox = el<HTMLDivElement>("summary");
  const canvas = el<HTMLCanvasElement>("view");

  banner.hidden = state.phase !== "error";
  if (state.phase === "error") banner.textContent = `${state.error} — press Enter to retry`;

  summaryBox.hidden = state.phase !== "done";
  if (state.phase === "done" && state.summary) {
    summaryBox.textContent =
      `Session complete: ${state.summary.accepted.length} accepted, ` +
      `${state.summary.rejected.length} rejected, ` +
      `${state.summary.undecided.length} undecided.`;
  }

  if (state.candidate) {
    const c = state.candidate;
    status.textContent =
      `Candidate ${c.queue_position + 1} / ${c.queue_total}` +
      ` — decided ${state.decidedCount} (${state.acceptedCount}✓ ${state.rejectedCount}✗)`;
    const labelName = c.image_label_name ?? "unlabeled";
    const color = c.image_label ? classColor(c.image_label) : "#888";
    detail.innerHTML =
      `<span class="swatch" style="background:${color}"></span>` +
      `label <b>${labelName}</b>` +
      ` · confidence ${c.confidence_mean.toFixed(2)}` +
      ` · area ${c.foreground_area}px` +
      (c.consistent_with_image_label ? "" : ' · <b class="flag">label mismatch</b>') +
      ` · overlay ${Math.round(state.overlayOpacity * 100)}%`;
    void drawCandidate(canvas, c, state.overlayOpacity);
  } else if (state.phase === "loading" || state.phase === "submitting") {
    status.textContent = "…";
  } else if (state.phase === "done") {
    status.textContent = "Queue exhausted.";
    detail.textContent = classes.length ? `classes: ${classes.slice(1).join(", ")}` : "";
  }
}

function start(): void {
  const form = el<HTMLFormElement>("connect");
  form.addEventListener("submit", async (event) => {
    event.preventDefault();
    const endpoint = el<HTMLInputElement>("endpoint").value;
    const token = el<HTMLInputElement>("token").value || undefined;
    const reviewer = el<HTMLInputElement>("reviewer").value || "anonymous";
    const recursion = Number(el<HTMLInputElement>("recursion").value || "0");

    const client = new ReviewClient({ baseUrl: endpoint, token });
    let classes: string[] = [];
    try {
      const session = await client.openSession(recursion);
      classes = session.classes;
      el<HTMLDivElement>("connect-error").textContent = "";
      form.hidden = true;
      const loop = new ReviewLoop(client, session.session_id, reviewer, (state) =>
        render(state, classes),
      );
      document.addEventListener("keydown", (key) => {
        if (key.key === "a" || key.key === "A") void loop.decide("accept");
        else if (key.key === "r" || key.key === "R") void loop.decide("reject");
        else if (key.key === "o" || key.key === "O") loop.toggleOverlay();
        else if (key.key === "Enter") void loop.retry();
      });
      el<HTMLButtonElement>("accept").addEventListener("click", () => void loop.decide("accept"));
      el<HTMLButtonElement>("reject").addEventListener("click", () => void loop.decide("reject"));
      el<HTMLButtonElement>("overlay").addEventListener("click", () => loop.toggleOverlay());
      await loop.start();
    } catch (err) {
      el<HTMLDivElement>("connect-error").textContent = String(
        err instanceof Error ? err.message : err,
      );
    }
  });
}

document.addEventListener("DOMContentLoaded", start);
