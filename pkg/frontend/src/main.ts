// Single-page annotation app: a grounding-rating view and an
// abstraction-ranking view over the service API.  The UI is blind: it only
// ever shows caption text, never degrees or caption provenance.

import { fetchProgress, fetchTask, getSession, submitAnnotation } from "./api.js";
import { GroundingState, RankingState } from "./state.js";
import {
  RATING_DESCRIPTIONS,
  type GroundingTask,
  type RankingTask,
  type Task,
} from "./types.js";

type TaskType = "grounding" | "ranking";

const root = document.getElementById("app") as HTMLElement;
let annotatorId = "";
let activeType: TaskType = "grounding";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) {
    node.className = className;
  }
  if (text !== undefined) {
    node.textContent = text;
  }
  return node;
}

function renderImage(uri: string): HTMLElement {
  const frame = el("div", "image-frame");
  const img = el("img");
  img.alt = "image to annotate";
  img.src = uri;
  img.addEventListener("error", () => {
    frame.textContent = "";
    const placeholder = el("div", "image-placeholder", "Image failed to load.");
    const retry = el("button", "retry", "Retry");
    retry.addEventListener("click", () => {
      frame.textContent = "";
      frame.append(renderImage(uri));
    });
    placeholder.append(el("br"), retry);
    frame.append(placeholder);
  });
  frame.append(img);
  return frame;
}

function renderChrome(): HTMLElement {
  const bar = el("nav", "chrome");
  (["grounding", "ranking"] as TaskType[]).forEach((type) => {
    const button = el("button", type === activeType ? "tab active" : "tab");
    button.textContent = type === "grounding" ? "Rate grounding" : "Rank abstraction";
    button.addEventListener("click", () => {
      activeType = type;
      void loadNext();
    });
    bar.append(button);
  });
  const progress = el("button", "tab", "Progress");
  progress.addEventListener("click", () => void showProgress());
  bar.append(progress);
  return bar;
}

function renderGrounding(task: GroundingTask): HTMLElement {
  const state = new GroundingState();
  const view = el("section", "task grounding");
  view.append(
    el("h2", undefined, "How visually grounded is this caption?"),
    renderImage(task.image_uri),
    el("blockquote", "caption", task.caption),
  );

  const submit = el("button", "submit", "Submit rating");
  submit.disabled = !state.canSubmit();

  const options = el("div", "options");
  RATING_DESCRIPTIONS.forEach(({ value, text }) => {
    const label = el("label", "option");
    const input = el("input");
    input.type = "radio";
    input.name = "rating";
    input.value = String(value);
    input.addEventListener("change", () => {
      state.select(value);
      submit.disabled = !state.canSubmit();
    });
    label.append(input, el("span", undefined, `${value}: ${text}`));
    options.append(label);
  });
  view.append(options);

  submit.addEventListener("click", () => {
    void submitAndAdvance({ task_id: task.task_id, ...state.payload() });
  });
  view.append(submit);
  return view;
}

function renderRanking(task: RankingTask): HTMLElement {
  const state = new RankingState(task.captions.length);
  const view = el("section", "task ranking");
  view.append(
    el("h2", undefined, "Rank the six captions in order of increasing abstraction"),
    el("p", "hint", "Top = least abstract (rank 1), bottom = most abstract (rank 6). Drag cards or use the arrows."),
    renderImage(task.image_uri),
  );

  const list = el("ol", "rank-list");

  function redraw(): void {
    list.textContent = "";
    state.positions.forEach((slot, position) => {
      const item = el("li", "rank-item");
      item.draggable = true;
      item.dataset.position = String(position);
      item.addEventListener("dragstart", (event) => {
        event.dataTransfer?.setData("text/plain", String(position));
      });
      item.addEventListener("dragover", (event) => event.preventDefault());
      item.addEventListener("drop", (event) => {
        event.preventDefault();
        const from = Number(event.dataTransfer?.getData("text/plain"));
        if (Number.isInteger(from)) {
          state.moveTo(from, position);
          redraw();
        }
      });

      const up = el("button", "arrow", "↑");
      up.disabled = position === 0;
      up.setAttribute("aria-label", "move caption up");
      up.addEventListener("click", () => {
        state.moveUp(position);
        redraw();
      });
      const down = el("button", "arrow", "↓");
      down.disabled = position === state.positions.length - 1;
      down.setAttribute("aria-label", "move caption down");
      down.addEventListener("click", () => {
        state.moveDown(position);
        redraw();
      });

      item.append(
        el("span", "rank-number", String(position + 1)),
        el("span", "rank-text", task.captions[slot]),
        up,
        down,
      );
      list.append(item);
    });
  }

  redraw();
  view.append(list);

  const submit = el("button", "submit", "Submit ranking");
  submit.disabled = !state.canSubmit();
  submit.addEventListener("click", () => {
    void submitAndAdvance({ task_id: task.task_id, ...state.payload() });
  });
  view.append(submit);
  return view;
}

async function submitAndAdvance(
  payload: { task_id: string; rating?: number; ranking?: number[] },
): Promise<void> {
  try {
    await submitAnnotation({ annotator_id: annotatorId, ...payload });
  } catch (error) {
    showError(String(error));
    return;
  }
  await loadNext();
}

function showError(message: string): void {
  const banner = el("div", "error", message);
  const retry = el("button", "retry", "Continue");
  retry.addEventListener("click", () => void loadNext());
  banner.append(el("br"), retry);
  root.textContent = "";
  root.append(renderChrome(), banner);
}

async function showProgress(): Promise<void> {
  const progress = await fetchProgress();
  const view = el("section", "task progress");
  view.append(el("h2", undefined, "Progress"));
  const pre = el("pre");
  pre.textContent = JSON.stringify(progress, null, 2);
  view.append(pre);
  root.textContent = "";
  root.append(renderChrome(), view);
}

async function loadNext(): Promise<void> {
  const payload = await fetchTask(activeType, annotatorId);
  root.textContent = "";
  root.append(renderChrome());
  if ("done" in payload && payload.done) {
    root.append(
      el("section", "task done",
         "No more tasks of this kind for you. Thank you!"),
    );
    return;
  }
  const task = payload as Task;
  root.append(task.type === "grounding" ? renderGrounding(task) : renderRanking(task));
}

async function start(): Promise<void> {
  annotatorId = await getSession();
  await loadNext();
}

void start();
