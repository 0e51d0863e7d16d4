/**
 * Review loop state machine, independent of the DOM.
 *
 * One candidate is active at a time. A verdict is submitted and the loop
 * advances only on the service's acknowledgment; a failed submission parks
 * the verdict so a retry can resend it without the reviewer re-deciding.
 * Queue exhaustion closes the session and surfaces the service's summary.
 */

import {
  ApiError,
  CandidatePayload,
  ReviewClient,
  SessionSummary,
  Verdict,
} from "./api.js";
import { nextOpacity, OPACITY_PRESETS } from "./overlay.js";

export type Phase =
  | "idle"
  | "loading"
  | "reviewing"
  | "submitting"
  | "done"
  | "error";

export interface LoopState {
  phase: Phase;
  candidate: CandidatePayload | null;
  decidedCount: number;
  acceptedCount: number;
  rejectedCount: number;
  queueTotal: number;
  overlayOpacity: number;
  /** verdict kept across a failed submission so retry can resend it */
  pendingVerdict: Verdict | null;
  error: string | null;
  summary: SessionSummary | null;
}

export class ReviewLoop {
  state: LoopState = {
    phase: "idle",
    candidate: null,
    decidedCount: 0,
    acceptedCount: 0,
    rejectedCount: 0,
    queueTotal: 0,
    overlayOpacity: OPACITY_PRESETS[2],
    pendingVerdict: null,
    error: null,
    summary: null,
  };

  constructor(
    private readonly client: ReviewClient,
    private readonly sessionId: string,
    private readonly reviewer: string,
    private readonly onChange: (state: LoopState) => void = () => {},
  ) {}

  private update(partial: Partial<LoopState>): void {
    this.state = { ...this.state, ...partial };
    this.onChange(this.state);
  }

  async start(): Promise<void> {
    this.update({ phase: "loading" });
    await this.advance();
  }

  private async advance(): Promise<void> {
    try {
      const next = await this.client.next(this.sessionId);
      if (next.done) {
        const summary = await this.client.close(this.sessionId);
        this.update({ phase: "done", candidate: null, summary, queueTotal: next.queue_total });
        return;
      }
      this.update({
        phase: "reviewing",
        candidate: next,
        queueTotal: next.queue_total,
        pendingVerdict: null,
        error: null,
      });
    } catch (err) {
      this.fail(err);
    }
  }

  /** Submit a verdict for the displayed candidate; advances only on ack. */
  async decide(verdict: Verdict): Promise<void> {
    if (this.state.phase !== "reviewing" || !this.state.candidate) return;
    const candidate = this.state.candidate;
    this.update({ phase: "submitting", pendingVerdict: verdict });
    try {
      await this.client.submit(this.sessionId, {
        sample_id: candidate.sample_id,
        verdict,
        reviewer: this.reviewer,
      });
      this.update({
        decidedCount: this.state.decidedCount + 1,
        acceptedCount: this.state.acceptedCount + (verdict === "accept" ? 1 : 0),
        rejectedCount: this.state.rejectedCount + (verdict === "reject" ? 1 : 0),
        pendingVerdict: null,
      });
      await this.advance();
    } catch (err) {
      this.fail(err);
    }
  }

  /** Re-run whatever failed: a parked verdict first, otherwise the fetch. */
  async retry(): Promise<void> {
    if (this.state.phase !== "error") return;
    const verdict = this.state.pendingVerdict;
    if (verdict && this.state.candidate) {
      this.update({ phase: "reviewing", error: null });
      await this.decide(verdict);
    } else {
      this.update({ phase: "loading", error: null });
      await this.advance();
    }
  }

  toggleOverlay(): void {
    this.update({ overlayOpacity: nextOpacity(this.state.overlayOpacity) });
  }

  private fail(err: unknown): void {
    const message =
      err instanceof ApiError
        ? err.message // service detail, verbatim
        : `network error: ${err instanceof Error ? err.message : String(err)}`;
    this.update({ phase: "error", error: message });
  }
}
