/** Bootstrap: wire the store to the DOM and start the queue poll. */

import { QueueStatus, TriageApi } from "./api.js";
import { QueueStore } from "./state.js";
import { renderApp } from "./ui.js";

const POLL_MS = 3000;

function start(): void {
  const root = document.getElementById("app");
  if (root === null) throw new Error("missing #app container");

  const store = new QueueStore(new TriageApi(""));
  const handlers = {
    onSelect: (itemId: number) => void store.open(itemId),
    onFilter: (filter: QueueStatus) => void store.setFilter(filter),
    onResolve: (decision: "confirm" | "reject") => void store.resolve(decision),
    onClose: () => store.close(),
    onAnalystId: (id: string) => store.setAnalystId(id),
  };

  store.subscribe((state) => renderApp(root, state, handlers));
  renderApp(root, store.state, handlers);
  void store.refresh();
  store.startPolling(POLL_MS);
}

start();
