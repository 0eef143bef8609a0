import { checkHealth, deleteSession, loadTaxonomies } from "./api.js";
import {
  initialState,
  loadOrCreateSessionId,
  renderLegend,
  renderTranscript,
  sendMessage,
  takeQueued,
} from "./state.js";
import type { SessionState, Taxonomies } from "./types.js";

let state: SessionState = initialState(loadOrCreateSessionId());
let taxonomies: Taxonomies;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function badgeClass(taxonomy: string, known: boolean): string {
  return known ? `badge badge-${taxonomy}` : "badge badge-neutral";
}

function render() {
  const view = renderTranscript(state.entries, taxonomies);
  const transcript = el<HTMLDivElement>("transcript");
  transcript.innerHTML = "";
  if (view.empty) {
    const p = document.createElement("p");
    p.className = "empty-state";
    p.textContent = view.emptyPrompt;
    transcript.appendChild(p);
  }
  for (const bubble of view.bubbles) {
    const row = document.createElement("div");
    row.className = `bubble-row align-${bubble.align}`;
    const div = document.createElement("div");
    div.className = `bubble bubble-${bubble.role}`;
    div.dataset.key = bubble.key;
    const text = document.createElement("span");
    text.textContent = bubble.text;
    div.appendChild(text);
    if (bubble.badges.length > 0) {
      const badges = document.createElement("div");
      badges.className = "badges";
      for (const badge of bubble.badges) {
        const b = document.createElement("span");
        b.className = badgeClass(badge.taxonomy, badge.known);
        b.textContent = badge.label;
        if (badge.tooltip) b.title = badge.tooltip;
        badges.appendChild(b);
      }
      div.appendChild(badges);
    }
    row.appendChild(div);
    transcript.appendChild(row);
  }
  transcript.scrollTop = transcript.scrollHeight;

  const banner = el<HTMLDivElement>("error-banner");
  banner.hidden = state.error === null;
  banner.textContent = state.error ?? "";

  el<HTMLButtonElement>("send").disabled = state.pending;
}

function renderLegendPanel() {
  const legend = renderLegend(taxonomies);
  const host = el<HTMLDivElement>("legend");
  host.innerHTML = "";
  for (const [taxonomy, badges] of Object.entries(legend)) {
    const group = document.createElement("div");
    group.className = "legend-group";
    const title = document.createElement("h4");
    title.textContent = taxonomy;
    group.appendChild(title);
    for (const badge of badges) {
      const b = document.createElement("span");
      b.className = badgeClass(badge.taxonomy, badge.known);
      b.textContent = badge.label;
      b.title = badge.tooltip;
      group.appendChild(b);
    }
    host.appendChild(group);
  }
}

function readOverrides() {
  const seedRaw = el<HTMLInputElement>("seed").value.trim();
  const tempRaw = el<HTMLInputElement>("temperature").value.trim();
  state.overrides = {
    seed: seedRaw === "" ? undefined : Number(seedRaw),
    temperature: tempRaw === "" ? undefined : Number(tempRaw),
  };
}

async function submit() {
  const input = el<HTMLInputElement>("message");
  const text = input.value;
  if (text.trim() === "" || state.pending) return;
  readOverrides();
  state = { ...state, pending: true };
  render();
  input.value = "";
  let next = await sendMessage({ ...state, pending: false }, text);
  if (next.error !== null) {
    // no input is lost on failure
    input.value = text;
  }
  state = { ...next, pending: false };
  render();
  // drain anything queued while we were busy
  let [queued, drained] = takeQueued(state);
  while (queued !== null) {
    state = { ...drained, pending: true };
    render();
    const after = await sendMessage({ ...state, pending: false }, queued);
    state = { ...after, pending: false };
    render();
    [queued, drained] = takeQueued(state);
  }
}

async function refreshHealth() {
  const ok = await checkHealth();
  const dot = el<HTMLSpanElement>("health");
  dot.className = ok ? "health health-ok" : "health health-down";
  dot.title = ok ? "service reachable" : "service unreachable";
}

async function boot() {
  taxonomies = await loadTaxonomies();
  renderLegendPanel();
  render();
  await refreshHealth();
  setInterval(refreshHealth, 10_000);

  el<HTMLFormElement>("composer").addEventListener("submit", (e) => {
    e.preventDefault();
    void submit();
  });
  el<HTMLButtonElement>("reset").addEventListener("click", () => {
    void deleteSession(state.sessionId);
    localStorage.removeItem("csd-session-id");
    state = initialState(loadOrCreateSessionId());
    render();
  });
  el<HTMLButtonElement>("toggle-advanced").addEventListener("click", () => {
    const panel = el<HTMLDivElement>("advanced");
    panel.hidden = !panel.hidden;
  });
}

void boot();
