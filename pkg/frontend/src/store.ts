// Client-side session state. Every displayed number originates from the
// API; the only local mutation is the optimistic echo of the user's own
// dialogue entry while the server round is in flight.

import type {
  CaseView,
  Connection,
  RoundView,
  SessionSummary,
  SessionView,
} from "./types.js";
import type { StreamEvent } from "./sse.js";

const PLAN_LINE = /^\s*\d+[.)]\s*(.+)$/;

export function planLinesFromResponse(response: string): string[] {
  const lines: string[] = [];
  for (const raw of response.split("\n")) {
    const match = PLAN_LINE.exec(raw);
    if (match) lines.push(match[1]);
  }
  return lines;
}

export class SessionStore {
  view: SessionView;
  private listeners = new Set<(view: SessionView) => void>();

  constructor(summary: SessionSummary) {
    this.view = {
      sessionId: summary.session_id,
      status: summary.status,
      user: summary.user,
      task: summary.task,
      cues: summary.cues,
      selectedCases: summary.selected_cases,
      casePool: [],
      rounds: summary.rounds.map((r) => ({
        round: r.round,
        plan: r.plan,
        violations: r.violations,
        autoRepair: r.auto_repair,
      })),
      dialogue: summary.dialogue.map((t) => ({ ...t })),
      connection: "live",
    };
  }

  subscribe(listener: (view: SessionView) => void): () => void {
    this.listeners.add(listener);
    listener(this.view);
    return () => this.listeners.delete(listener);
  }

  private emit(): void {
    for (const listener of this.listeners) listener(this.view);
  }

  applySummary(summary: SessionSummary): void {
    const optimistic = this.view.dialogue.filter((t) => t.optimistic);
    this.view.status = summary.status;
    this.view.cues = summary.cues;
    this.view.selectedCases = summary.selected_cases;
    this.view.rounds = summary.rounds.map((r) => ({
      round: r.round,
      plan: r.plan,
      violations: r.violations,
      autoRepair: r.auto_repair,
    }));
    this.view.dialogue = summary.dialogue.map((t) => ({ ...t }));
    // any echo the server already knows about is no longer optimistic
    for (const echo of optimistic) {
      if (!this.view.dialogue.some((t) => t.speaker === "user" && t.content === echo.content)) {
        this.view.dialogue.push(echo);
      }
    }
    this.emit();
  }

  setCasePool(cases: CaseView[]): void {
    this.view.casePool = cases;
    this.emit();
  }

  setConnection(connection: Connection): void {
    if (this.view.connection !== connection) {
      this.view.connection = connection;
      this.emit();
    }
  }

  echoUserTurn(content: string, category: string): void {
    this.view.dialogue.push({ speaker: "user", content, category, optimistic: true });
    this.emit();
  }

  applyEvent(ev: StreamEvent): void {
    const data = ev.data as Record<string, unknown>;
    if (!data || typeof data !== "object") return;
    const type = data["type"];
    if (type === "round") {
      const round = data["round"] as number;
      if (this.view.rounds.some((r) => r.round === round)) return; // replay
      const view: RoundView = {
        round,
        plan: planLinesFromResponse(String(data["response"] ?? "")),
        violations: (data["violations"] as RoundView["violations"]) ?? [],
        autoRepair: Boolean(data["auto_repair"]),
      };
      this.view.rounds.push(view);
      this.view.rounds.sort((a, b) => a.round - b.round);
      this.view.status = "awaiting_user";
      this.emit();
    } else if (type === "feedback") {
      const content = String(data["text"] ?? "");
      if (content) {
        const echoed = this.view.dialogue.find(
          (t) => t.optimistic && t.content === content,
        );
        if (echoed) {
          delete echoed.optimistic;
        } else {
          this.view.dialogue.push({
            speaker: "user",
            content,
            category: (data["category"] as string) ?? null,
          });
        }
        this.emit();
      }
    } else if (type === "terminal") {
      this.view.status = String(data["status"]);
      this.emit();
    }
  }
}
