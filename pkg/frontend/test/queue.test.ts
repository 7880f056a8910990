import { describe, expect, it } from "vitest";

import { ReviewQueue } from "../src/queue.js";
import { FakeService, makeRecord } from "./fake_service.js";

async function loadedQueue(n = 4) {
  const service = new FakeService(Array.from({ length: n }, (_, i) => makeRecord(i)));
  const queue = new ReviewQueue(service, "tester");
  await queue.load();
  return { service, queue };
}

describe("ReviewQueue", () => {
  it("loads the pending queue with counts and position", async () => {
    const { queue } = await loadedQueue(3);
    const view = queue.view();
    expect(view.total).toBe(3);
    expect(view.position).toBe(1);
    expect(view.counts).toEqual({ pending: 3, accepted: 0, rejected: 0 });
    expect(view.current?.synth_id).toBe(makeRecord(0).synth_id);
    expect(view.done).toBe(false);
  });

  it("accept advances the queue and decrements the pending count", async () => {
    const { service, queue } = await loadedQueue(3);
    const first = queue.current()!;
    const ok = await queue.submit("accepted");
    expect(ok).toBe(true);
    const view = queue.view();
    expect(view.position).toBe(2);
    expect(view.counts.pending).toBe(2);
    expect(view.counts.accepted).toBe(1);
    expect(queue.statusOf(first)).toBe("accepted");
    expect(service.log).toEqual([{ synthId: first.synth_id, decision: "accepted" }]);
  });

  it("never shows a verdict the server has not acknowledged", async () => {
    const { service, queue } = await loadedQueue(2);
    const first = queue.current()!;
    service.holdPosts = true;
    const submission = queue.submit("accepted"); // in flight
    // Optimistic advance happened, but the record's status is still the
    // server-acknowledged one.
    expect(queue.view().position).toBe(2);
    expect(queue.statusOf(first)).toBe("pending");
    expect(queue.view().submissions[0].state).toBe("saving");
    service.releaseHeldPosts();
    await submission;
    expect(queue.statusOf(first)).toBe("accepted");
    expect(queue.view().submissions[0].state).toBe("confirmed");
  });

  it("rolls back and surfaces the error when the server refuses", async () => {
    const { service, queue } = await loadedQueue(2);
    const first = queue.current()!;
    service.failureMode = "http-404";
    const ok = await queue.submit("rejected");
    expect(ok).toBe(false);
    const view = queue.view();
    expect(view.current?.synth_id).toBe(first.synth_id); // rolled back
    expect(view.lastError).toContain("unknown synth_id");
    expect(view.submissions[0].state).toBe("failed");
    expect(queue.statusOf(first)).toBe("pending");
    expect(service.log).toEqual([]);
  });

  it("parks writes in a visible retry queue on network failure", async () => {
    const { service, queue } = await loadedQueue(2);
    const first = queue.current()!;
    service.failureMode = "network";
    const ok = await queue.submit("accepted");
    expect(ok).toBe(false);
    let view = queue.view();
    expect(view.position).toBe(2); // reviewer keeps moving
    expect(view.submissions[0].state).toBe("queued-retry");
    expect(queue.statusOf(first)).toBe("pending");

    service.failureMode = "none";
    const retried = await queue.retryQueued();
    expect(retried).toBe(true);
    view = queue.view();
    expect(view.submissions[0].state).toBe("confirmed");
    expect(queue.statusOf(first)).toBe("accepted");
    expect(service.log).toEqual([{ synthId: first.synth_id, decision: "accepted" }]);
  });

  it("undo re-posts the inverse and the record returns to the pending view", async () => {
    const { service, queue } = await loadedQueue(3);
    const first = queue.current()!;
    await queue.submit("accepted");
    expect(queue.view().current?.synth_id).not.toBe(first.synth_id);

    const undone = await queue.undo();
    expect(undone).toBe(true);
    expect(service.log).toEqual([
      { synthId: first.synth_id, decision: "accepted" },
      { synthId: first.synth_id, decision: "pending" },
    ]);
    const view = queue.view();
    expect(view.current?.synth_id).toBe(first.synth_id); // back in front
    expect(view.counts).toEqual({ pending: 3, accepted: 0, rejected: 0 });
    expect(queue.statusOf(first)).toBe("pending");
    expect(view.canUndo).toBe(false);
  });

  it("queue statuses always match a replay of the service log", async () => {
    const { service, queue } = await loadedQueue(5);
    await queue.submit("accepted");
    await queue.submit("rejected");
    queue.skip();
    await queue.submit("accepted");
    await queue.undo();
    const replay = service.replayStatuses();
    for (const record of service.records) {
      expect(queue.statusOf(record)).toBe(replay.get(record.synth_id));
    }
  });

  it("skip advances without posting", async () => {
    const { service, queue } = await loadedQueue(2);
    queue.skip();
    expect(queue.view().position).toBe(2);
    expect(service.log).toEqual([]);
  });

  it("reaches a completion view with counts", async () => {
    const { queue } = await loadedQueue(2);
    await queue.submit("accepted");
    await queue.submit("rejected");
    const view = queue.view();
    expect(view.done).toBe(true);
    expect(view.current).toBeNull();
    expect(view.counts).toEqual({ pending: 0, accepted: 1, rejected: 1 });
  });

  it("empty queue is immediately done", async () => {
    const { queue } = await loadedQueue(0);
    expect(queue.view().done).toBe(true);
    expect(await queue.submit("accepted")).toBe(false);
    expect(await queue.undo()).toBe(false);
  });
});
