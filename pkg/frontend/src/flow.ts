/** Vote-flow state machine: fetch a matchup, collect one vote, advance.
 *
 * The flow holds at most one in-flight request at a time. A vote that fails
 * on the network is retained (matchup and chosen outcome) and re-submitted
 * when the user retries, so no vote is lost to a flaky connection.
 */

import { ApiError } from "./api.js";
import type { ArenaApi, Outcome, UiMatchup } from "./api.js";

export type VoteState =
  | { kind: "loading" }
  | { kind: "voting"; matchup: UiMatchup }
  | { kind: "submitting"; matchup: UiMatchup; outcome: Outcome }
  | { kind: "retry-submit"; matchup: UiMatchup; outcome: Outcome }
  | { kind: "retry-fetch" }
  | { kind: "empty" };

export type FlowListener = (state: VoteState, sessionVotes: number) => void;

export class VoteFlow {
  private state: VoteState = { kind: "loading" };
  private votesCast = 0;
  // Bumped whenever the flow is (re)started; stale async completions from a
  // previous rater or restart compare epochs and drop their result.
  private epoch = 0;

  constructor(
    private readonly api: ArenaApi,
    private rater: string,
    private readonly listener: FlowListener,
  ) {}

  get current(): VoteState {
    return this.state;
  }

  get sessionVotes(): number {
    return this.votesCast;
  }

  get raterName(): string {
    return this.rater;
  }

  async start(): Promise<void> {
    this.epoch += 1;
    await this.fetchNext();
  }

  /** Switch rater identity and restart. The session counter is kept. */
  async setRater(name: string): Promise<void> {
    this.rater = name;
    await this.start();
  }

  /** Submit a vote for the displayed matchup. Ignored unless one is shown,
   * which is what makes a double-click issue exactly one request. */
  async vote(outcome: Outcome): Promise<void> {
    if (this.state.kind !== "voting") {
      return;
    }
    await this.submit(this.state.matchup, outcome);
  }

  /** Re-attempt whatever failed: the retained vote, or the matchup fetch. */
  async retry(): Promise<void> {
    const state = this.state;
    if (state.kind === "retry-submit") {
      await this.submit(state.matchup, state.outcome);
    } else if (state.kind === "retry-fetch") {
      await this.fetchNext();
    }
  }

  private emit(state: VoteState): void {
    this.state = state;
    this.listener(state, this.votesCast);
  }

  private async fetchNext(): Promise<void> {
    this.emit({ kind: "loading" });
    const epoch = this.epoch;
    let matchup: UiMatchup | null;
    try {
      matchup = await this.api.nextMatchup(this.rater);
    } catch {
      if (epoch === this.epoch) {
        this.emit({ kind: "retry-fetch" });
      }
      return;
    }
    if (epoch !== this.epoch) {
      return;
    }
    this.emit(matchup === null ? { kind: "empty" } : { kind: "voting", matchup });
  }

  private async submit(matchup: UiMatchup, outcome: Outcome): Promise<void> {
    this.emit({ kind: "submitting", matchup, outcome });
    const epoch = this.epoch;
    try {
      await this.api.submitVote(matchup.matchup_id, outcome, this.rater);
    } catch (err) {
      if (epoch !== this.epoch) {
        return;
      }
      if (err instanceof ApiError && err.status === 409) {
        // Already recorded server-side: the earlier response was lost in
        // transit. Count it and move on rather than double-submitting.
      } else if (err instanceof ApiError && err.status === 404) {
        // The service no longer knows this matchup (restart). The vote
        // cannot ever succeed; fetch a fresh pair instead of looping.
        await this.fetchNext();
        return;
      } else {
        this.emit({ kind: "retry-submit", matchup, outcome });
        return;
      }
    }
    if (epoch !== this.epoch) {
      return;
    }
    this.votesCast += 1;
    await this.fetchNext();
  }
}
