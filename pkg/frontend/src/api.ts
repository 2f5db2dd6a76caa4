// Thin fetch wrappers over the annotation service JSON API.

import type { DonePayload, Submission, Task } from "./types.js";

const TOKEN_KEY = "annotator_token";

export async function getSession(): Promise<string> {
  const stored = window.localStorage.getItem(TOKEN_KEY);
  if (stored) {
    return stored;
  }
  const response = await fetch("/api/session");
  if (!response.ok) {
    throw new Error(`session request failed: ${response.status}`);
  }
  const body = (await response.json()) as { annotator_id: string };
  window.localStorage.setItem(TOKEN_KEY, body.annotator_id);
  return body.annotator_id;
}

export async function fetchTask(
  type: "grounding" | "ranking",
  annotatorId: string,
): Promise<Task | DonePayload> {
  const params = new URLSearchParams({ type, annotator_id: annotatorId });
  const response = await fetch(`/api/task?${params}`);
  if (!response.ok) {
    throw new Error(`task request failed: ${response.status}`);
  }
  return (await response.json()) as Task | DonePayload;
}

export async function submitAnnotation(submission: Submission): Promise<void> {
  const response = await fetch("/api/annotation", {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify(submission),
  });
  if (!response.ok) {
    const detail = await response.text();
    throw new Error(`submission rejected (${response.status}): ${detail}`);
  }
}

export async function fetchProgress(): Promise<Record<string, unknown>> {
  const response = await fetch("/api/progress");
  if (!response.ok) {
    throw new Error(`progress request failed: ${response.status}`);
  }
  return (await response.json()) as Record<string, unknown>;
}
