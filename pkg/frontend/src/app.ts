// Browser wiring: fixture picker, schematic query view with detection
// overlays, per-object tabs, gallery grid, judge badges, and back/forward.
// All state transitions live in session.ts; all network access in api.ts.

import { ApiClient } from "./api.js";
import { badgeClass, badgeFor, indexRatings } from "./badges.js";
import { rectStyle, scaleBox, type ViewGeometry } from "./overlay.js";
import { Session, followUpRequest } from "./session.js";
import type { GalleryResultItem, JudgeRatingRow, SearchRequest } from "./types.js";

const DISPLAY_WIDTH = 420;

const api = new ApiClient("");
const session = new Session();
let ratingsIndex: Map<string, JudgeRatingRow> | null = null;

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function byId(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node;
}

async function submitQuery(request: SearchRequest): Promise<void> {
  const status = byId("status");
  status.textContent = "searching…";
  const outcome = await api.search(request);
  if (outcome.kind === "stale") return; // a newer query superseded this one
  if (outcome.kind === "error") {
    status.textContent = `search failed (${outcome.status}): ${outcome.message}`;
    if (outcome.retryable) {
      const retry = el("button", "retry", "retry");
      retry.onclick = () => void submitQuery(request);
      status.append(" ", retry);
    }
    return;
  }
  status.textContent = outcome.fromCache ? "served from cache" : "ok";
  session.pushQuery(request, outcome.gallery);
  render();
}

function renderQueryPanel(): void {
  const entry = session.current;
  const panel = byId("query-panel");
  panel.innerHTML = "";
  if (!entry) {
    panel.append(el("p", "hint", "Pick a query fixture to start."));
    return;
  }
  const { width, height } = entry.request;
  const view: ViewGeometry = {
    naturalWidth: width,
    naturalHeight: height,
    displayedWidth: DISPLAY_WIDTH,
    displayedHeight: (height / width) * DISPLAY_WIDTH,
  };
  const stage = el("div", "stage");
  stage.style.cssText = `width:${view.displayedWidth}px;height:${view.displayedHeight}px`;
  for (const object of entry.gallery.objects) {
    const rect = scaleBox(object.box, view);
    const overlay = el("div",
      object.rank === entry.selectedObjectRank ? "overlay selected" : "overlay");
    overlay.style.cssText += rectStyle(rect);
    overlay.title = `object ${object.rank} (${object.broad_class ?? "?"})`;
    overlay.onclick = () => {
      session.selectObject(object.rank === entry.selectedObjectRank ? null : object.rank);
      render();
    };
    stage.append(overlay);
  }
  panel.append(el("h3", undefined, entry.gallery.query_image_id), stage);
  if (entry.gallery.reason) {
    panel.append(el("p", "empty-state", `no results: ${entry.gallery.reason}`));
  }
}

function renderTabs(): void {
  const entry = session.current;
  const tabs = byId("tabs");
  tabs.innerHTML = "";
  if (!entry) return;
  const all = el("button", entry.selectedObjectRank === null ? "tab active" : "tab", "All");
  all.onclick = () => {
    session.selectObject(null);
    render();
  };
  tabs.append(all);
  for (const object of entry.gallery.objects) {
    const label = `${object.rank}: ${object.broad_class ?? "(no class)"}`;
    const tab = el("button",
      object.rank === entry.selectedObjectRank ? "tab active" : "tab", label);
    tab.onclick = () => {
      session.selectObject(object.rank);
      render();
    };
    tabs.append(tab);
  }
}

function renderGallery(): void {
  const entry = session.current;
  const grid = byId("gallery");
  grid.innerHTML = "";
  if (!entry) return;
  const items = session.visibleResults();
  if (!items.length) {
    grid.append(el("p", "empty-state", "no results for this view"));
    return;
  }
  const showBadges = entry.judgeRunId !== null && ratingsIndex !== null;
  items.forEach((item: GalleryResultItem, position: number) => {
    const card = el("div", "card");
    const thumb = el("div", "thumb", item.image_id);
    thumb.onclick = () => void submitQuery(followUpRequest(item));
    card.append(
      thumb,
      el("div", "card-title", item.product_id),
      el("div", "card-sub", `${item.category} -> ${item.broad_class}`),
      el("div", "card-score", `score ${item.score.toFixed(3)} (obj ${item.source_object_rank})`),
    );
    if (showBadges && entry.selectedObjectRank === null && ratingsIndex) {
      const badge = badgeFor(ratingsIndex, entry.gallery.query_image_id, position);
      if (badge) {
        const node = el("span", badgeClass(badge), `R${badge.relevance} S${badge.similarity}`);
        node.title = badge.tooltip;
        card.append(node);
      }
    }
    grid.append(card);
  });
}

function renderNav(): void {
  (byId("back") as HTMLButtonElement).disabled = !session.canGoBack;
  (byId("forward") as HTMLButtonElement).disabled = !session.canGoForward;
  const toggle = byId("judge-toggle") as HTMLButtonElement;
  const entry = session.current;
  toggle.disabled = !entry || ratingsIndex === null;
  toggle.title = ratingsIndex === null ? "load a run id first" : "";
  toggle.textContent = entry?.judgeRunId ? "hide judge scores" : "show judge scores";
}

function render(): void {
  renderQueryPanel();
  renderTabs();
  renderGallery();
  renderNav();
}

function wire(): void {
  const fixtureInput = byId("fixture-file") as HTMLInputElement;
  fixtureInput.onchange = async () => {
    const file = fixtureInput.files?.[0];
    if (!file) return;
    const request = JSON.parse(await file.text()) as SearchRequest;
    await submitQuery(request);
  };
  byId("back").onclick = () => {
    session.back(); // restored from history, no network
    render();
  };
  byId("forward").onclick = () => {
    session.forward();
    render();
  };
  byId("judge-load").onclick = async () => {
    const runId = (byId("run-id") as HTMLInputElement).value.trim();
    if (!runId) return;
    const report = await api.report(runId);
    if (!report || !report.ratings) {
      byId("status").textContent = `no ratings found for run ${runId}`;
      ratingsIndex = null;
    } else {
      ratingsIndex = indexRatings(report.ratings);
      byId("status").textContent = `loaded ${report.ratings.length} ratings`;
    }
    render();
  };
  byId("judge-toggle").onclick = () => {
    const runId = (byId("run-id") as HTMLInputElement).value.trim();
    session.toggleJudgeOverlay(runId || null);
    render();
  };
  render();
}

document.addEventListener("DOMContentLoaded", wire);
