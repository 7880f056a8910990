/** Review-session state machine: optimistic advance with server reconciliation.
 *
 * The server stays the only source of truth for verdicts: a record's
 * displayed status is the fetched one until the service acknowledges a
 * change.  Submitting advances the queue immediately; a rejected write rolls
 * the queue back to the record, a network failure parks the write in a
 * visible retry queue, and undo re-posts the inverse (a "pending" reset).
 */

import { ApiError } from "./api.js";
import type { ReviewClient } from "./api.js";
import type { Decision, PairRecord, PairsPage, VerdictStatus } from "./types.js";

export type SubmissionState = "saving" | "confirmed" | "failed" | "queued-retry";

export interface Submission {
  synthId: string;
  decision: Decision;
  state: SubmissionState;
  error?: string;
}

export interface QueueView {
  current: PairRecord | null;
  position: number;
  total: number;
  filter: VerdictStatus;
  counts: Record<VerdictStatus, number>;
  done: boolean;
  submissions: Submission[];
  lastError: string | null;
  canUndo: boolean;
}

const ZERO_COUNTS: Record<VerdictStatus, number> = {
  pending: 0,
  accepted: 0,
  rejected: 0,
};

export class ReviewQueue {
  private records: PairRecord[] = [];
  private index = 0;
  private counts: Record<VerdictStatus, number> = { ...ZERO_COUNTS };
  private confirmed = new Map<string, VerdictStatus>();
  private submissions: Submission[] = [];
  private undoStack: { synthId: string; decision: Decision }[] = [];
  private lastError: string | null = null;
  private listeners: (() => void)[] = [];

  constructor(
    private readonly api: ReviewClient,
    private readonly reviewer: string,
    readonly filter: VerdictStatus = "pending",
  ) {}

  onChange(listener: () => void): void {
    this.listeners.push(listener);
  }

  private notify(): void {
    for (const listener of this.listeners) listener();
  }

  async load(): Promise<void> {
    const page: PairsPage = await this.api.listAllPairs(this.filter);
    this.records = page.records;
    this.counts = { ...ZERO_COUNTS, ...page.counts };
    this.index = 0;
    this.confirmed.clear();
    this.submissions = [];
    this.undoStack = [];
    this.lastError = null;
    this.notify();
  }

  /** Server-acknowledged status; optimistic decisions are never shown here. */
  statusOf(record: PairRecord): VerdictStatus {
    return this.confirmed.get(record.synth_id) ?? record.status;
  }

  current(): PairRecord | null {
    return this.index < this.records.length ? this.records[this.index] : null;
  }

  view(): QueueView {
    return {
      current: this.current(),
      position: Math.min(this.index + 1, this.records.length),
      total: this.records.length,
      filter: this.filter,
      counts: { ...this.counts },
      done: this.index >= this.records.length,
      submissions: this.submissions.map((s) => ({ ...s })),
      lastError: this.lastError,
      canUndo: this.undoStack.length > 0,
    };
  }

  private submissionFor(synthId: string, decision: Decision): Submission {
    const submission: Submission = { synthId, decision, state: "saving" };
    this.submissions.push(submission);
    return submission;
  }

  private applyCountChange(from: VerdictStatus, to: VerdictStatus): void {
    this.counts[from] -= 1;
    this.counts[to] += 1;
  }

  /** Post a verdict for the current record, advancing optimistically. */
  async submit(decision: "accepted" | "rejected"): Promise<boolean> {
    const record = this.current();
    if (record === null) return false;
    const submission = this.submissionFor(record.synth_id, decision);
    const previous = this.statusOf(record);
    this.index += 1; // optimistic advance
    this.lastError = null;
    this.notify();
    try {
      await this.api.postVerdict(record.synth_id, decision, this.reviewer);
    } catch (err) {
      if (err instanceof ApiError) {
        // The server refused: roll the queue back to the record.
        submission.state = "failed";
        submission.error = err.message;
        this.lastError = `verdict rejected by server: ${err.message}`;
        this.index -= 1;
      } else {
        // Network trouble: keep going, retry later, keep it visible.
        submission.state = "queued-retry";
        submission.error = String(err instanceof Error ? err.message : err);
        this.lastError = null;
      }
      this.notify();
      return false;
    }
    submission.state = "confirmed";
    this.confirmed.set(record.synth_id, decision);
    this.applyCountChange(previous, decision);
    this.undoStack.push({ synthId: record.synth_id, decision });
    this.notify();
    return true;
  }

  /** Advance without recording a verdict. */
  skip(): void {
    if (this.current() === null) return;
    this.index += 1;
    this.notify();
  }

  /** Re-post the inverse of the last confirmed verdict (a pending reset). */
  async undo(): Promise<boolean> {
    const last = this.undoStack.pop();
    if (last === undefined) return false;
    try {
      await this.api.postVerdict(last.synthId, "pending", this.reviewer);
    } catch (err) {
      this.undoStack.push(last);
      this.lastError = `undo failed: ${String(err instanceof Error ? err.message : err)}`;
      this.notify();
      return false;
    }
    const wasConfirmed = this.confirmed.get(last.synthId);
    this.confirmed.set(last.synthId, "pending");
    if (wasConfirmed !== undefined) {
      this.applyCountChange(wasConfirmed, "pending");
    }
    this.submissions.push({
      synthId: last.synthId,
      decision: "pending",
      state: "confirmed",
    });
    // Bring the record back in front of the reviewer.
    const at = this.records.findIndex((r) => r.synth_id === last.synthId);
    if (at >= 0 && at < this.index) {
      const [record] = this.records.splice(at, 1);
      this.index -= 1;
      this.records.splice(this.index, 0, record);
    }
    this.lastError = null;
    this.notify();
    return true;
  }

  /** Replay writes parked by network failures. */
  async retryQueued(): Promise<boolean> {
    const queued = this.submissions.filter((s) => s.state === "queued-retry");
    let allOk = true;
    for (const submission of queued) {
      try {
        await this.api.postVerdict(submission.synthId, submission.decision, this.reviewer);
      } catch (err) {
        submission.error = String(err instanceof Error ? err.message : err);
        allOk = false;
        continue;
      }
      submission.state = "confirmed";
      const record = this.records.find((r) => r.synth_id === submission.synthId);
      const previous = record ? this.statusOf(record) : "pending";
      this.confirmed.set(submission.synthId, submission.decision as VerdictStatus);
      this.applyCountChange(previous, submission.decision as VerdictStatus);
      this.undoStack.push({ synthId: submission.synthId, decision: submission.decision });
    }
    this.notify();
    return allOk;
  }
}
