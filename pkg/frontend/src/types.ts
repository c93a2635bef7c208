export type CueView = {
  text: string;
  category: string;
  tagged: boolean;
};

export type CaseView = {
  case_id: string;
  task: string;
  priority: number;
  usage_count: number;
};

export type ViolationView = {
  step: number;
  rule: string;
  message: string;
};

export type RoundView = {
  round: number;
  plan: string[];
  violations: ViolationView[];
  autoRepair: boolean;
};

export type TurnView = {
  speaker: string;
  content: string;
  category?: string | null;
  optimistic?: boolean;
};

export type SessionSummary = {
  session_id: string;
  status: string;
  user: string;
  task: string;
  observation_ref: string;
  cues: CueView[];
  selected_cases: CaseView[];
  rounds: {
    round: number;
    plan: string[];
    violations: ViolationView[];
    auto_repair: boolean;
    rejected_lines: string[];
  }[];
  dialogue: { speaker: string; content: string; category: string | null }[];
  record_id: string | null;
};

export type Connection = "live" | "degraded";

export type SessionView = {
  sessionId: string;
  status: string;
  user: string;
  task: string;
  cues: CueView[];
  selectedCases: CaseView[];
  casePool: CaseView[];
  rounds: RoundView[];
  dialogue: TurnView[];
  connection: Connection;
};

export const TERMINAL_STATUSES = new Set(["approved", "failed", "abandoned"]);

export const REMINDER_CATEGORIES = [
  "corrective_guidance",
  "personalized_preference",
  "contextual_assistance",
] as const;
