/**
 * DOM rendering. Pure functions from state to elements; all payload text
 * goes through textContent (never innerHTML), so listings reach the screen
 * byte for byte and nothing from the service is interpreted as markup.
 */

import { QueueStatus } from "./api.js";
import { alignListings, AlignedRow } from "./diff.js";
import { AppState } from "./state.js";

export interface Handlers {
  onSelect(itemId: number): void;
  onFilter(filter: QueueStatus): void;
  onResolve(decision: "confirm" | "reject"): void;
  onClose(): void;
  onAnalystId(id: string): void;
}

const FILTERS: QueueStatus[] = ["pending", "confirmed", "rejected", "all"];

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

export function renderBanner(state: AppState): HTMLElement {
  const box = el("div", "banner");
  if (state.banner !== null) {
    box.classList.add(state.banner.kind);
    box.textContent = state.banner.text;
  }
  return box;
}

export function renderQueue(state: AppState, handlers: Handlers): HTMLElement {
  const pane = el("section", "queue-pane");

  const bar = el("div", "queue-bar");
  const select = el("select", "filter");
  for (const f of FILTERS) {
    const opt = el("option", undefined, f);
    opt.value = f;
    opt.selected = f === state.filter;
    select.append(opt);
  }
  select.addEventListener("change", () => {
    handlers.onFilter(select.value as QueueStatus);
  });
  bar.append(el("span", "queue-title", "Review queue"), select);
  pane.append(bar);

  if (state.items.length === 0) {
    pane.append(el("p", "empty", "Queue is empty."));
    return pane;
  }

  const table = el("table", "queue");
  const head = el("tr");
  for (const h of ["item", "sample", "Ω", "family", "anchor", "status"]) {
    head.append(el("th", undefined, h));
  }
  table.append(head);
  // rows in payload order: the service decides the queue order, not the UI
  for (const item of state.items) {
    const row = el("tr", "queue-row");
    row.dataset.itemId = String(item.item_id);
    if (state.selected?.item_id === item.item_id) row.classList.add("open");
    row.append(
      el("td", undefined, String(item.item_id)),
      el("td", "sample", item.sample_id),
      el("td", undefined, item.omega.toFixed(3)),
      el("td", undefined, item.family ?? "-"),
      el("td", undefined, item.anchor_name ?? "-"),
      el("td", `status status-${item.status}`, item.status),
    );
    row.addEventListener("click", () => handlers.onSelect(item.item_id));
    table.append(row);
  }
  pane.append(table);
  return pane;
}

/** One listing cell; match rows get the mnemonic wrapped for highlighting. */
function listingCell(side: "left" | "right", line: string | null, kind: AlignedRow["kind"]): HTMLElement {
  if (line === null) {
    return el("td", `asm-gap ${side}`);
  }
  const cell = el("td", `asm-line ${side} row-${kind}`);
  if (kind === "match") {
    const m = line.match(/^(\s*)(\S+)([\s\S]*)$/);
    if (m) {
      cell.append(m[1], el("span", "mn", m[2]), m[3]);
      return cell;
    }
  }
  cell.textContent = line;
  return cell;
}

export function renderEvidence(state: AppState, handlers: Handlers): HTMLElement {
  const pane = el("section", "evidence-pane");
  const detail = state.selected;
  if (detail === null) {
    pane.append(el("p", "empty", "Select a queue item to review its evidence."));
    return pane;
  }

  const verdict = detail.verdict;
  const head = el("div", "evidence-head");
  head.append(
    el("h2", undefined, detail.verdict.sample_id),
    el("span", `status status-${detail.status}`, detail.status),
    el("span", "meta", `family ${verdict.c_best ?? "?"}`),
    el("span", "meta", `Ω ${verdict.omega.toFixed(3)}`),
    el("span", "meta",
       `proof entry ${verdict.proof_entry_id ?? "?"} sim ${verdict.proof_sim?.toFixed(4) ?? "?"}`),
  );
  const closeBtn = el("button", "close", "close");
  closeBtn.addEventListener("click", () => handlers.onClose());
  head.append(closeBtn);
  pane.append(head);

  const listings = el("table", "listings");
  const titles = el("tr");
  titles.append(
    el("th", undefined, `anchor: ${verdict.anchor_name ?? "?"}`),
    el("th", undefined, "proof"),
  );
  listings.append(titles);
  for (const row of alignListings(detail.anchor_text, detail.proof_text)) {
    const tr = el("tr", `aligned ${row.kind}`);
    tr.append(listingCell("left", row.left, row.kind), listingCell("right", row.right, row.kind));
    listings.append(tr);
  }
  pane.append(listings);

  const explanation = el("div", "explanation");
  explanation.append(el("h3", undefined,
                        `explanation (${detail.explanation.generator})`));
  explanation.append(el("pre", "explanation-text", detail.explanation.text));
  if (detail.explanation.unverified_claims) {
    explanation.append(el("p", "caveat",
                          "generated text; claims not machine-checked"));
  }
  pane.append(explanation);

  const actions = el("div", "actions");
  if (detail.status === "pending") {
    const confirm = el("button", "confirm", "Confirm");
    confirm.disabled = state.resolving;
    confirm.addEventListener("click", () => handlers.onResolve("confirm"));
    const reject = el("button", "reject", "Reject");
    reject.disabled = state.resolving;
    reject.addEventListener("click", () => handlers.onResolve("reject"));
    actions.append(confirm, reject);
  } else {
    actions.append(el("span", "resolved-note",
                      `${detail.status} by ${detail.resolved_by ?? "?"} at ${detail.resolved_at ?? "?"}`));
  }
  pane.append(actions);
  return pane;
}

export function renderApp(root: HTMLElement, state: AppState, handlers: Handlers): void {
  root.replaceChildren();

  const top = el("header", "top");
  top.append(el("h1", undefined, "asmrag triage"));
  const analyst = el("input", "analyst-id");
  analyst.placeholder = "analyst id";
  analyst.value = state.analystId;
  analyst.addEventListener("change", () => handlers.onAnalystId(analyst.value));
  top.append(analyst);
  root.append(top);

  root.append(renderBanner(state));

  const main = el("main", "split");
  main.append(renderQueue(state, handlers), renderEvidence(state, handlers));
  root.append(main);
}
