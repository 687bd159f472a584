// Session state: a back/forward history of query entries, each remembering
// its gallery, selected object, and judge-overlay toggle. Navigation restores
// entries from memory; the backend is only consulted for brand-new queries.

import type { GalleryResponse, GalleryResultItem, SearchRequest } from "./types.js";

export interface SessionEntry {
  request: SearchRequest;
  gallery: GalleryResponse;
  selectedObjectRank: number | null;
  judgeRunId: string | null;
}

export class Session {
  private history: SessionEntry[] = [];
  private cursor = -1;

  get current(): SessionEntry | null {
    return this.cursor >= 0 ? this.history[this.cursor] ?? null : null;
  }

  get canGoBack(): boolean {
    return this.cursor > 0;
  }

  get canGoForward(): boolean {
    return this.cursor < this.history.length - 1;
  }

  get length(): number {
    return this.history.length;
  }

  pushQuery(request: SearchRequest, gallery: GalleryResponse): SessionEntry {
    const entry: SessionEntry = {
      request,
      gallery,
      selectedObjectRank: null,
      judgeRunId: this.current?.judgeRunId ?? null,
    };
    this.history = this.history.slice(0, this.cursor + 1);
    this.history.push(entry);
    this.cursor = this.history.length - 1;
    return entry;
  }

  selectObject(rank: number | null): SessionEntry {
    const entry = this.current;
    if (!entry) throw new Error("no active query");
    if (rank !== null && !entry.gallery.objects.some((o) => o.rank === rank)) {
      throw new Error(`no detected object with rank ${rank}`);
    }
    entry.selectedObjectRank = rank;
    return entry;
  }

  toggleJudgeOverlay(runId: string | null): SessionEntry {
    const entry = this.current;
    if (!entry) throw new Error("no active query");
    entry.judgeRunId = entry.judgeRunId === runId ? null : runId;
    return entry;
  }

  back(): SessionEntry | null {
    if (!this.canGoBack) return null;
    this.cursor--;
    return this.current;
  }

  forward(): SessionEntry | null {
    if (!this.canGoForward) return null;
    this.cursor++;
    return this.current;
  }

  /** Results to render: the selected object's ranked list, or the merged gallery. */
  visibleResults(): GalleryResultItem[] {
    const entry = this.current;
    if (!entry) return [];
    if (entry.selectedObjectRank === null) return entry.gallery.merged;
    const object = entry.gallery.objects.find(
      (o) => o.rank === entry.selectedObjectRank,
    );
    return object ? object.results : [];
  }
}

/** The follow-up query issued when a user clicks a result image: the product
 * image becomes the whole query (single full-frame object). */
export function followUpRequest(
  item: GalleryResultItem,
  size = 640,
): SearchRequest {
  return {
    image_id: `followup-${item.image_id}`,
    width: size,
    height: size,
    objects: [
      {
        box: [0, 0, size, size],
        confidence: 1.0,
        descriptor: { category: item.category, instance_id: item.image_id },
      },
    ],
  };
}
