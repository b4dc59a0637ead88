/** DOM wiring: file picker + drag-drop upload, result rendering, session
 * history, model info panel. One request in flight at a time. */

import { ApiError, CxrApiClient } from "./api.js";
import {
  renderError,
  renderHistory,
  renderModelInfo,
  renderReport,
  renderRetry,
  renderUnavailableBanner,
  type SessionEntry,
} from "./render.js";
import { appendEntry, fileSizeOk, MAX_UPLOAD_BYTES, uploadContentType } from "./session.js";

const api = new CxrApiClient("");

let history: SessionEntry[] = [];
let busy = false;
let lastFile: File | null = null;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function setBusy(value: boolean): void {
  busy = value;
  el<HTMLInputElement>("file-input").disabled = value;
  el("dropzone").classList.toggle("busy", value);
}

function showResult(html: string): void {
  el("result").innerHTML = html;
}

function refreshHistory(): void {
  el("history").innerHTML = renderHistory(history);
}

async function submit(file: File): Promise<void> {
  if (busy) return;
  if (!fileSizeOk(file.size)) {
    showResult(renderError(
      "body_too_large",
      `file is ${file.size} bytes; the limit is ${MAX_UPLOAD_BYTES}`,
    ));
    return;
  }
  lastFile = file;
  setBusy(true);
  showResult(`<p class="muted">Scoring&hellip;</p>`);
  try {
    const report = await api.predict(file, uploadContentType(file.type));
    const thumbnail = URL.createObjectURL(file);
    history = appendEntry(history, thumbnail, report);
    showResult(renderReport(report));
    refreshHistory();
  } catch (err) {
    if (err instanceof ApiError) {
      const retry = err.isNetworkFailure ? renderRetry() : "";
      showResult(renderError(err.code, err.detail) + retry);
      const button = el("result").querySelector<HTMLButtonElement>(".retry");
      if (button && lastFile) {
        button.addEventListener("click", () => void submit(lastFile as File));
      }
    } else {
      showResult(renderError("unexpected", String(err)));
    }
  } finally {
    setBusy(false);
  }
}

async function loadModelInfo(): Promise<void> {
  try {
    const health = await api.health();
    const info = await api.modelInfo();
    let html = renderModelInfo(info);
    if (health.model_hash !== info.model_hash) {
      html += renderError(
        "hash_mismatch",
        "health and model endpoints disagree on the model hash",
      );
    }
    el("model-info").innerHTML = html;
  } catch {
    el("model-info").innerHTML = renderUnavailableBanner();
  }
}

export function init(): void {
  const input = el<HTMLInputElement>("file-input");
  input.addEventListener("change", () => {
    const file = input.files?.[0];
    if (file) void submit(file);
    input.value = "";
  });

  const zone = el("dropzone");
  zone.addEventListener("dragover", (ev) => {
    ev.preventDefault();
    zone.classList.add("dragging");
  });
  zone.addEventListener("dragleave", () => zone.classList.remove("dragging"));
  zone.addEventListener("drop", (ev) => {
    ev.preventDefault();
    zone.classList.remove("dragging");
    const file = ev.dataTransfer?.files?.[0];
    if (file) void submit(file);
  });
  zone.addEventListener("click", () => input.click());

  refreshHistory();
  void loadModelInfo();
}

if (typeof document !== "undefined") {
  document.addEventListener("DOMContentLoaded", init);
}
