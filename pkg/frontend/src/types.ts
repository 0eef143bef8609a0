export type Role = "speaker" | "listener";

export interface TurnLabels {
  cs: string;
  emo: string;
  strategy: string;
}

export interface TranscriptEntry {
  role: Role;
  text: string;
  labels?: TurnLabels;
  timestamp: number;
}

export interface ChatTurnResult {
  session_id: string;
  response_text: string;
  cs: string;
  emo: string;
  strategy: string;
  latency_ms: number;
  seed: number;
}

export interface LabelInfo {
  name: string;
  description: string;
}

export interface Taxonomies {
  cs: LabelInfo[];
  emotion: LabelInfo[];
  strategy: LabelInfo[];
}

export interface GenerationOverrides {
  temperature?: number;
  top_k?: number;
  top_p?: number;
  max_new_tokens?: number;
  seed?: number;
}

export interface SessionState {
  sessionId: string;
  entries: TranscriptEntry[];
  pending: boolean;
  error: string | null;
  /** messages typed while a request is in flight, sent in order */
  queue: string[];
  overrides: GenerationOverrides;
}

export type FetchLike = typeof fetch;
