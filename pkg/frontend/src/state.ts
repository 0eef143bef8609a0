import { ApiError, postChat } from "./api.js";
import type { FetchLike, SessionState, Taxonomies, TranscriptEntry } from "./types.js";

const SESSION_KEY = "csd-session-id";

export function randomSessionId(): string {
  const bytes = new Uint8Array(16);
  if (typeof crypto !== "undefined" && crypto.getRandomValues) {
    crypto.getRandomValues(bytes);
  } else {
    for (let i = 0; i < bytes.length; i++) bytes[i] = Math.floor(Math.random() * 256);
  }
  return Array.from(bytes, (b) => b.toString(16).padStart(2, "0")).join("");
}

/** Session id persisted in localStorage so a refresh resumes the conversation. */
export function loadOrCreateSessionId(storage?: Storage): string {
  const store = storage ?? (typeof localStorage !== "undefined" ? localStorage : undefined);
  if (!store) return randomSessionId();
  const existing = store.getItem(SESSION_KEY);
  if (existing) return existing;
  const fresh = randomSessionId();
  store.setItem(SESSION_KEY, fresh);
  return fresh;
}

export function initialState(sessionId: string): SessionState {
  return {
    sessionId,
    entries: [],
    pending: false,
    error: null,
    queue: [],
    overrides: {},
  };
}

/**
 * Send one message: append the user entry immediately and the listener entry
 * on response. On failure the transcript is left exactly as it was and the
 * message text is surfaced for retry.
 *
 * Returns a new state; the input state is never mutated.
 */
export async function sendMessage(
  state: SessionState,
  text: string,
  fetchImpl: FetchLike = fetch,
  now: () => number = Date.now,
): Promise<SessionState> {
  const trimmed = text.trim();
  if (trimmed === "") return state;
  if (state.pending) {
    // single in-flight request; queue for later
    return { ...state, queue: [...state.queue, trimmed] };
  }
  try {
    const result = await postChat(state.sessionId, trimmed, state.overrides, fetchImpl);
    const userEntry: TranscriptEntry = { role: "speaker", text: trimmed, timestamp: now() };
    const botEntry: TranscriptEntry = {
      role: "listener",
      text: result.response_text,
      labels: { cs: result.cs, emo: result.emo, strategy: result.strategy },
      timestamp: now(),
    };
    return { ...state, entries: [...state.entries, userEntry, botEntry], error: null };
  } catch (err) {
    const message = err instanceof ApiError ? err.message : "service unreachable";
    return { ...state, error: message };
  }
}

/** Pop the next queued message, if any; pair with sendMessage to drain. */
export function takeQueued(state: SessionState): [string | null, SessionState] {
  if (state.queue.length === 0) return [null, state];
  const [head, ...rest] = state.queue;
  return [head, { ...state, queue: rest }];
}

// ---------------------------------------------------------------------------
// view models (pure functions of state; snapshot-testable)

export interface BadgeView {
  taxonomy: "cs" | "emotion" | "strategy";
  label: string;
  /** false when the label is not in the known taxonomy -> neutral styling */
  known: boolean;
  tooltip: string;
}

export interface BubbleView {
  key: string;
  role: "speaker" | "listener";
  align: "right" | "left";
  text: string;
  badges: BadgeView[];
}

export interface TranscriptView {
  empty: boolean;
  emptyPrompt: string;
  bubbles: BubbleView[];
}

function makeBadge(
  taxonomy: BadgeView["taxonomy"],
  label: string,
  taxonomies: Taxonomies,
): BadgeView {
  const info = taxonomies[taxonomy].find((l) => l.name === label);
  return {
    taxonomy,
    label,
    known: info !== undefined,
    tooltip: info ? info.description : "",
  };
}

export function renderTranscript(
  entries: TranscriptEntry[],
  taxonomies: Taxonomies,
): TranscriptView {
  const bubbles = entries.map((entry, i): BubbleView => {
    const badges = entry.labels
      ? [
          makeBadge("cs", entry.labels.cs, taxonomies),
          makeBadge("emotion", entry.labels.emo, taxonomies),
          makeBadge("strategy", entry.labels.strategy, taxonomies),
        ]
      : [];
    return {
      key: `${i}-${entry.timestamp}`,
      role: entry.role,
      align: entry.role === "speaker" ? "right" : "left",
      text: entry.text,
      badges,
    };
  });
  return {
    empty: bubbles.length === 0,
    emptyPrompt: "Say hello to start the conversation.",
    bubbles,
  };
}

export interface LegendView {
  cs: BadgeView[];
  emotion: BadgeView[];
  strategy: BadgeView[];
}

export function renderLegend(taxonomies: Taxonomies): LegendView {
  return {
    cs: taxonomies.cs.map((l) => makeBadge("cs", l.name, taxonomies)),
    emotion: taxonomies.emotion.map((l) => makeBadge("emotion", l.name, taxonomies)),
    strategy: taxonomies.strategy.map((l) => makeBadge("strategy", l.name, taxonomies)),
  };
}
