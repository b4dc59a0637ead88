/** Session-local state: nothing persists across reloads, nothing leaves
 * the page except the upload itself. */

import type { PredictionReport } from "./api.js";
import type { SessionEntry } from "./render.js";

/** Mirrors the server's default request-body cap. */
export const MAX_UPLOAD_BYTES = 10 * 1024 * 1024;

export function fileSizeOk(bytes: number): boolean {
  return bytes > 0 && bytes <= MAX_UPLOAD_BYTES;
}

/** Newest first; returns a new array (state stays replaceable). */
export function appendEntry(
  history: SessionEntry[],
  thumbnail: string,
  report: PredictionReport,
  timestamp: Date = new Date(),
): SessionEntry[] {
  return [{ thumbnail, report, timestamp }, ...history];
}

const ACCEPTED_TYPES = new Set(["image/png", "image/jpeg"]);

/** The server decides ultimately; this only picks the content type to
 * send, defaulting unknown pickers' blobs to PNG. */
export function uploadContentType(fileType: string): string {
  return ACCEPTED_TYPES.has(fileType) ? fileType : "image/png";
}
