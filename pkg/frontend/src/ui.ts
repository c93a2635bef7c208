// DOM rendering. No planning logic lives here: everything shown comes
// from the API or the event stream, and the controls only emit actions.

import type { SessionView } from "./types.js";
import { REMINDER_CATEGORIES, TERMINAL_STATUSES } from "./types.js";

export type StartHandler = (fields: {
  user: string;
  task: string;
  observationRef: string;
  sceneLabel: string;
}) => void;

export type FeedbackHandlers = {
  onApprove: () => void;
  onAbandon: () => void;
  onCorrective: (text: string, category: string) => void;
};

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  ...children: (Node | string)[]
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) {
    node.setAttribute(key, value);
  }
  node.append(...children);
  return node;
}

export function renderError(root: HTMLElement, message: string, onRetry?: () => void): void {
  const existing = root.querySelector("[data-testid=error-banner]");
  existing?.remove();
  const banner = el(
    "div",
    { class: "error-banner", "data-testid": "error-banner" },
    el("span", {}, message),
  );
  if (onRetry) {
    const retry = el("button", { "data-testid": "error-retry" }, "Retry");
    retry.addEventListener("click", () => {
      banner.remove();
      onRetry();
    });
    banner.append(retry);
  }
  root.prepend(banner);
}

export function renderStartForm(root: HTMLElement, onStart: StartHandler): void {
  root.textContent = "";
  const form = el("form", { class: "start-form", "data-testid": "start-form" });
  const user = el("input", { name: "user", placeholder: "User id", "data-testid": "input-user" });
  const task = el("input", { name: "task", placeholder: "Task description", "data-testid": "input-task" });
  const image = el("input", {
    name: "observation",
    placeholder: "Observation image path or URL",
    "data-testid": "input-observation",
  });
  const scene = el("input", { name: "scene", placeholder: "Scene label (optional)", "data-testid": "input-scene" });
  const submit = el("button", { type: "submit", "data-testid": "start-submit" }, "Start session");
  const validation = el("p", { class: "field-error", "data-testid": "form-validation" });
  form.append(
    el("h1", {}, "Start a planning session"),
    user, task, image, scene, validation, submit,
  );
  form.addEventListener("submit", (ev) => {
    ev.preventDefault();
    if (!user.value.trim() || !task.value.trim() || !image.value.trim()) {
      validation.textContent = "User, task, and observation image are required.";
      return;
    }
    validation.textContent = "";
    onStart({
      user: user.value.trim(),
      task: task.value.trim(),
      observationRef: image.value.trim(),
      sceneLabel: scene.value.trim(),
    });
  });
  root.append(form);
}

function categoryBadge(category: string): HTMLElement {
  return el("span", { class: `badge cat-${category}`, "data-testid": "category-badge" },
    category.replaceAll("_", " "));
}

export function renderSession(root: HTMLElement, view: SessionView, handlers: FeedbackHandlers): void {
  root.textContent = "";
  const terminal = TERMINAL_STATUSES.has(view.status);
  const degraded = view.connection === "degraded";
  const readOnly = terminal || degraded;

  const page = el("div", { class: "session", "data-testid": "session-page" });
  page.append(
    el(
      "header",
      {},
      el("h1", {}, `${view.user}: ${view.task}`),
      el("span", { class: `badge status-${view.status}`, "data-testid": "status-badge" }, view.status),
    ),
  );

  if (degraded) {
    page.append(
      el(
        "div",
        { class: "degraded-banner", "data-testid": "degraded-banner" },
        "Connection lost, reconnecting. Controls are read-only.",
      ),
    );
  }

  if (view.cues.length) {
    const list = el("ul", { class: "cues", "data-testid": "cue-list" });
    for (const cue of view.cues) {
      list.append(el("li", {}, categoryBadge(cue.category), ` ${cue.text}`));
    }
    page.append(el("section", {}, el("h2", {}, "Cues"), list));
  }

  const casesSection = el("section", { "data-testid": "cases-panel" }, el("h2", {}, "Cases"));
  const caseRows = view.casePool.length ? view.casePool : view.selectedCases;
  if (caseRows.length) {
    const list = el("ul", { class: "cases" });
    for (const c of caseRows) {
      const selected = view.selectedCases.some((s) => s.case_id === c.case_id);
      list.append(
        el(
          "li",
          { "data-case-id": c.case_id, "data-testid": "case-row" },
          el("code", {}, c.case_id),
          ` ${c.task} `,
          el("span", { class: "priority", "data-testid": "case-priority" }, c.priority.toFixed(3)),
          el("span", { class: "uses" }, ` uses: ${c.usage_count}`),
          selected ? el("span", { class: "badge selected" }, "in prompt") : "",
        ),
      );
    }
    casesSection.append(list);
  } else {
    casesSection.append(el("p", { class: "empty" }, "No cases retrieved."));
  }
  page.append(casesSection);

  const roundsSection = el("section", {}, el("h2", {}, "Rounds"));
  for (const round of view.rounds) {
    const steps = el("ol", { class: "plan" });
    round.plan.forEach((line, idx) => {
      const violations = round.violations.filter((v) => v.step === idx + 1);
      const item = el("li", { "data-testid": "plan-step" }, el("code", {}, line));
      for (const violation of violations) {
        item.append(
          el(
            "span",
            { class: "badge violation", "data-testid": "violation-badge", title: violation.message },
            violation.rule,
          ),
        );
      }
      steps.append(item);
    });
    roundsSection.append(
      el(
        "article",
        { class: "round", "data-round": String(round.round), "data-testid": "round" },
        el("h3", {}, `Round ${round.round}${round.autoRepair ? " (auto repair)" : ""}`),
        steps,
      ),
    );
  }
  page.append(roundsSection);

  const transcript = el("ul", { class: "dialogue", "data-testid": "dialogue" });
  for (const turn of view.dialogue) {
    transcript.append(
      el(
        "li",
        { class: `turn ${turn.speaker}${turn.optimistic ? " optimistic" : ""}` },
        el("strong", {}, turn.speaker === "user" ? "You" : "Robot"),
        `: ${turn.content}`,
      ),
    );
  }
  page.append(el("section", {}, el("h2", {}, "Dialogue"), transcript));

  const controls = el("div", { class: "controls", "data-testid": "controls" });
  const textBox = el("textarea", {
    placeholder: "Corrective reminder for the next round",
    "data-testid": "corrective-text",
  });
  const category = el("select", { "data-testid": "corrective-category" });
  for (const value of REMINDER_CATEGORIES) {
    category.append(el("option", { value }, value.replaceAll("_", " ")));
  }
  const send = el("button", { "data-testid": "send-corrective" }, "Send reminder");
  const approve = el("button", { class: "approve", "data-testid": "approve" }, "Approve");
  const abandon = el("button", { class: "abandon", "data-testid": "abandon" }, "Abandon");
  for (const control of [textBox, category, send, approve, abandon]) {
    if (readOnly) control.setAttribute("disabled", "disabled");
  }
  send.addEventListener("click", () => {
    const text = textBox.value.trim();
    if (!text) return;
    textBox.value = "";
    handlers.onCorrective(text, category.value);
  });
  approve.addEventListener("click", handlers.onApprove);
  abandon.addEventListener("click", handlers.onAbandon);
  controls.append(textBox, category, send, approve, abandon);
  page.append(controls);

  root.append(page);
}
