/**
 * Scripted full-session round trip over a 10-candidate queue: the loop's
 * submitted verdicts, the service's closing summary and a replay of the
 * decision log must all agree, and no request may carry mask data.
 */

import { describe, expect, it } from "vitest";

import { ReviewClient, Verdict } from "../src/api.js";
import { ReviewLoop } from "../src/state.js";
import { makeQueue, MockService } from "./mock_service.js";

describe("scripted review session", () => {
  it("round-trips 10 candidates and reconciles all three records", async () => {
    const script = new Map<string, Verdict>(
      Array.from({ length: 10 }, (_, i) => [
        `s${i}`,
        i % 3 === 0 ? "reject" : "accept",
      ]),
    );
    const service = new MockService(makeQueue(10));
    const client = new ReviewClient({ baseUrl: "http://mock", fetchFn: service.fetch });
    const states: string[] = [];
    const loop = new ReviewLoop(client, service.sessionId, "scripted", (s) =>
      states.push(s.phase),
    );

    await loop.start();
    while (loop.state.phase === "reviewing") {
      const sampleId = loop.state.candidate!.sample_id;
      await loop.decide(script.get(sampleId)!);
    }

    expect(loop.state.phase).toBe("done");
    expect(loop.state.decidedCount).toBe(10);

    // UI summary equals the service's close_session output
    const expectedAccepted = [...script.entries()]
      .filter(([, verdict]) => verdict === "accept")
      .map(([id]) => id);
    const expectedRejected = [...script.entries()]
      .filter(([, verdict]) => verdict === "reject")
      .map(([id]) => id);
    expect(loop.state.summary?.accepted.sort()).toEqual(expectedAccepted.sort());
    expect(loop.state.summary?.rejected.sort()).toEqual(expectedRejected.sort());
    expect(loop.state.summary?.undecided).toEqual([]);
    expect(loop.state.acceptedCount).toBe(expectedAccepted.length);
    expect(loop.state.rejectedCount).toBe(expectedRejected.length);

    // decision-log replay reconstructs the scripted session exactly
    const replayed = new Map(service.log.map((entry) => [entry.sample_id, entry.verdict]));
    expect(replayed).toEqual(script);
    // order of the append-only log follows the queue
    expect(service.log.map((entry) => entry.sample_id)).toEqual(
      Array.from({ length: 10 }, (_, i) => `s${i}`),
    );

    // the UI never sends mask modifications: verdict fields only
    const allowed = new Set(["sample_id", "verdict", "reviewer", "note", "recursion_index"]);
    for (const request of service.requests) {
      if (request.body === undefined) continue;
      for (const key of Object.keys(request.body as object)) {
        expect(allowed.has(key)).toBe(true);
      }
    }

    // every candidate the loop displayed came from fetch_next in queue order
    const fetches = service.requests.filter((r) => r.path.endsWith("/next"));
    expect(fetches.length).toBeGreaterThanOrEqual(10);
  });
});
