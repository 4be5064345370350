import raw from "./fixtures.json";
import { ItemDetail, KbStats, QueueResponse } from "../src/api.js";

// Payloads recorded verbatim from a live triage service; tests treat them as
// the wire truth the UI must reproduce.
interface Fixtures {
  queue: QueueResponse;
  queueAfter: QueueResponse;
  detailPending: ItemDetail;
  detailResolved: ItemDetail;
  kbStats: KbStats;
}

export const FIXTURES = raw as unknown as Fixtures;
