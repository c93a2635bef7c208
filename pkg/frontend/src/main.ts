import { ApiClient, ApiError } from "./api.js";
import { EventStream } from "./sse.js";
import { SessionStore } from "./store.js";
import { renderError, renderSession, renderStartForm } from "./ui.js";
import { TERMINAL_STATUSES } from "./types.js";

export type AppHandle = {
  api: ApiClient;
  current: () => { store: SessionStore; stream: EventStream } | null;
};

export type AppOptions = {
  baseUrl: string;
  fetchFn?: typeof fetch;
  retryMs?: number;
};

export function mountApp(root: HTMLElement, opts: AppOptions): AppHandle {
  const api = new ApiClient(opts.baseUrl, opts.fetchFn);
  let live: { store: SessionStore; stream: EventStream } | null = null;

  function showForm(): void {
    renderStartForm(root, (fields) => {
      void startSession(fields);
    });
  }

  async function refreshFromServer(store: SessionStore, sessionId: string): Promise<void> {
    try {
      store.applySummary(await api.getSession(sessionId));
      store.setCasePool(await api.cases());
    } catch (err) {
      renderError(root, String(err));
    }
  }

  async function startSession(fields: {
    user: string;
    task: string;
    observationRef: string;
    sceneLabel: string;
  }): Promise<void> {
    let sessionId: string;
    try {
      const created = await api.startSession({
        user: fields.user,
        task: fields.task,
        observation_ref: fields.observationRef,
        scene_label: fields.sceneLabel || undefined,
      });
      sessionId = created.session_id;
    } catch (err) {
      const detail = err instanceof ApiError ? err.message : "Service unreachable.";
      renderError(root, detail, () => showForm());
      return;
    }
    await openSession(sessionId);
  }

  async function openSession(sessionId: string): Promise<void> {
    const summary = await api.getSession(sessionId);
    const store = new SessionStore(summary);
    const stream = new EventStream(
      api.eventsUrl(sessionId),
      {
        onEvent: (ev) => {
          store.applyEvent(ev);
          const data = ev.data as { type?: string };
          if (data?.type === "terminal") {
            void refreshFromServer(store, sessionId);
          }
        },
        onDegrade: () => store.setConnection("degraded"),
        onReconnect: () => {
          store.setConnection("live");
          void refreshFromServer(store, sessionId);
        },
      },
      { fetchFn: opts.fetchFn, retryMs: opts.retryMs },
    );
    live = { store, stream };

    const handlers = {
      onApprove: () => void sendFeedback({ action: "approve" }),
      onAbandon: () => void sendFeedback({ action: "abandon" }),
      onCorrective: (text: string, category: string) => {
        store.echoUserTurn(text, category);
        void sendFeedback({ action: "corrective", text, category });
      },
    };

    async function sendFeedback(body: {
      action: string;
      text?: string;
      category?: string;
    }): Promise<void> {
      try {
        const updated = await api.feedback(sessionId, {
          ...body,
          round_token: `${sessionId}-${store.view.rounds.length}-${body.action}`,
        });
        store.applySummary(updated);
        if (TERMINAL_STATUSES.has(updated.status)) {
          store.setCasePool(await api.cases());
        }
      } catch (err) {
        if (err instanceof ApiError && err.status === 409) {
          renderError(root, "Session already closed.");
          await refreshFromServer(store, sessionId);
        } else {
          renderError(root, String(err));
        }
      }
    }

    store.subscribe((view) => renderSession(root, view, handlers));
    void store.setCasePool(await api.cases());
    void stream.start();
  }

  showForm();
  return { api, current: () => live };
}

declare global {
  interface Window {
    __alignbotHandle?: AppHandle;
  }
}

// Browser bootstrap: mount on #app when it already exists at load time
// (tests import this module into an empty document and mount manually);
// the API base comes from ?api=... with a local default.
if (typeof document !== "undefined" && document.getElementById("app") !== null) {
  const params = new URLSearchParams(window.location.search);
  const base = params.get("api") ?? "http://127.0.0.1:8400";
  window.__alignbotHandle = mountApp(document.getElementById("app")!, { baseUrl: base });
}
