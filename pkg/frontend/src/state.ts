/**
 * Queue store: the single source of client state.
 *
 * Every field here is a copy of a service response. The store never reorders
 * the queue, never rewrites listings, and never flips an item's status on
 * its own: after a resolution it refetches the item and the queue so the UI
 * always shows service truth. A stale or surprising view is reconciled by
 * refetch, not by local edits.
 */

import {
  ApiError,
  Decision,
  ItemDetail,
  QueueStatus,
  QueueSummary,
  TriageApiLike,
} from "./api.js";

export interface Banner {
  kind: "info" | "error";
  text: string;
}

export interface AppState {
  filter: QueueStatus;
  items: QueueSummary[];
  selected: ItemDetail | null;
  resolving: boolean;
  banner: Banner | null;
  analystId: string;
}

export type Listener = (state: AppState) => void;

export class QueueStore {
  state: AppState = {
    filter: "pending",
    items: [],
    selected: null,
    resolving: false,
    banner: null,
    analystId: "analyst",
  };

  private listeners: Listener[] = [];

  constructor(private api: TriageApiLike) {}

  subscribe(fn: Listener): () => void {
    this.listeners.push(fn);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== fn);
    };
  }

  private emit(): void {
    for (const fn of this.listeners) fn(this.state);
  }

  setAnalystId(id: string): void {
    if (id.trim() !== "") this.state = { ...this.state, analystId: id.trim() };
  }

  async refresh(): Promise<void> {
    try {
      const response = await this.api.queue(this.state.filter);
      // quiet poll: identical queue means nothing to re-render
      if (JSON.stringify(response.items) === JSON.stringify(this.state.items)) return;
      this.state = { ...this.state, items: response.items };
    } catch (err) {
      this.state = { ...this.state, banner: bannerFor(err) };
    }
    this.emit();
  }

  async setFilter(filter: QueueStatus): Promise<void> {
    this.state = { ...this.state, filter };
    this.emit();
    await this.refresh();
  }

  async open(itemId: number): Promise<void> {
    try {
      const detail = await this.api.item(itemId);
      this.state = { ...this.state, selected: detail, banner: null };
    } catch (err) {
      this.state = { ...this.state, banner: bannerFor(err) };
    }
    this.emit();
  }

  close(): void {
    this.state = { ...this.state, selected: null };
    this.emit();
  }

  /**
   * Resolve the open item. At most one resolve request is in flight at a
   * time: a double click finds `resolving` already set and does nothing.
   * The status shown afterwards comes from the refetched item, never from
   * an optimistic local transition.
   */
  async resolve(decision: Decision): Promise<void> {
    const selected = this.state.selected;
    if (selected === null || this.state.resolving) return;
    this.state = { ...this.state, resolving: true, banner: null };
    this.emit();
    let outcome: Banner;
    try {
      await this.api.resolve(selected.item_id, decision, this.state.analystId);
      outcome = { kind: "info", text: `item ${selected.item_id}: ${decision} recorded` };
    } catch (err) {
      // AlreadyResolved (409) is shown, not retried; the refetch below
      // brings in whatever state the service actually has
      outcome = bannerFor(err);
    }
    this.state = { ...this.state, resolving: false };
    await this.open(selected.item_id);
    await this.refresh();
    this.state = { ...this.state, banner: outcome };
    this.emit();
  }

  /** Poll the queue; returns a stop function. */
  startPolling(intervalMs: number): () => void {
    const timer = setInterval(() => {
      void this.refresh();
    }, intervalMs);
    return () => clearInterval(timer);
  }
}

function bannerFor(err: unknown): Banner {
  if (err instanceof ApiError) {
    return { kind: "error", text: `service refused: ${err.detail}` };
  }
  return { kind: "error", text: `service unreachable: ${String(err)}` };
}
