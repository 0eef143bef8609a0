import type { ChatTurnResult, FetchLike, GenerationOverrides, Taxonomies } from "./types.js";

/** Bundled copy of the label taxonomies, used when the service is offline. */
export const STATIC_TAXONOMIES: Taxonomies = {
  cs: [
    { name: "None", description: "Neutral small talk with no targeted stimulation." },
    { name: "Inquiry", description: "Asks the elder a question to prompt recall or sharing." },
    { name: "Respect", description: "Polite, courteous phrasing directed at the elder." },
    { name: "Reminiscence", description: "Invites memories of earlier life and personal history." },
    { name: "Expression", description: "Encourages the elder to put thoughts into words." },
    { name: "Enjoyment", description: "Brings fun or shared pleasure into the conversation." },
    { name: "Comfort", description: "Reassures and soothes the elder." },
  ],
  emotion: [
    { name: "None", description: "No marked emotion." },
    { name: "Disgust", description: "Aversion or distaste." },
    { name: "Sadness", description: "Low mood, sorrow." },
    { name: "Fear", description: "Worry or fright." },
    { name: "Surprise", description: "Unexpectedness." },
    { name: "Like", description: "Fondness or approval." },
    { name: "Happiness", description: "Joy or contentment." },
    { name: "Anger", description: "Irritation or rage." },
  ],
  strategy: [
    { name: "None", description: "No explicit support strategy." },
    { name: "Question", description: "Asks for details to understand the situation." },
    { name: "Reflection of feelings", description: "Mirrors the speaker's emotional state." },
    { name: "Self-disclosure", description: "Shares a comparable personal experience." },
    { name: "Providing suggestions", description: "Offers concrete advice." },
    { name: "Information", description: "Supplies factual information." },
    { name: "Others", description: "Any other supportive move." },
  ],
};

export class ApiError extends Error {
  constructor(
    message: string,
    public readonly status: number,
  ) {
    super(message);
  }
}

export async function checkHealth(fetchImpl: FetchLike = fetch): Promise<boolean> {
  try {
    const res = await fetchImpl("/api/health");
    if (!res.ok) return false;
    const body = await res.json();
    return body.status === "ok";
  } catch {
    return false;
  }
}

/** GET /api/labels with a static fallback when the service is unreachable. */
export async function loadTaxonomies(fetchImpl: FetchLike = fetch): Promise<Taxonomies> {
  try {
    const res = await fetchImpl("/api/labels");
    if (!res.ok) return STATIC_TAXONOMIES;
    const body = (await res.json()) as Taxonomies;
    if (!body.cs || !body.emotion || !body.strategy) return STATIC_TAXONOMIES;
    return body;
  } catch {
    return STATIC_TAXONOMIES;
  }
}

export async function postChat(
  sessionId: string,
  message: string,
  overrides: GenerationOverrides,
  fetchImpl: FetchLike = fetch,
): Promise<ChatTurnResult> {
  const params = Object.fromEntries(
    Object.entries(overrides).filter(([, v]) => v !== undefined && v !== null),
  );
  const body: Record<string, unknown> = { session_id: sessionId, message };
  if (Object.keys(params).length > 0) body.params = params;
  const res = await fetchImpl("/api/chat", {
    method: "POST",
    headers: { "content-type": "application/json" },
    body: JSON.stringify(body),
  });
  if (!res.ok) {
    let detail = `request failed (${res.status})`;
    try {
      const err = await res.json();
      if (err && err.error) detail = String(err.error);
    } catch {
      /* non-JSON error body */
    }
    throw new ApiError(detail, res.status);
  }
  return (await res.json()) as ChatTurnResult;
}

export async function deleteSession(
  sessionId: string,
  fetchImpl: FetchLike = fetch,
): Promise<void> {
  await fetchImpl(`/api/session/${encodeURIComponent(sessionId)}`, { method: "DELETE" });
}
