/** Shared test doubles: a scriptable fake of the arena API. */

import type { ArenaApi, LeaderboardEntry, Outcome, UiMatchup } from "../src/api.js";

export function matchup(id: string, overrides: Partial<UiMatchup> = {}): UiMatchup {
  return {
    matchup_id: id,
    scenario_id: "scen-00",
    left_image_url: `/images/${id}-left.png`,
    right_image_url: `/images/${id}-right.png`,
    instruction_text: "Park a car on the right side ahead of the ego vehicle.",
    ...overrides,
  };
}

export function entry(overrides: Partial<LeaderboardEntry> & { model: string }): LeaderboardEntry {
  return {
    rating: 1000,
    ci_low: 990,
    ci_high: 1010,
    votes: 0,
    rank: null,
    ...overrides,
  };
}

export interface Deferred {
  promise: Promise<void>;
  resolve: () => void;
  reject: (err: Error) => void;
}

export function deferred(): Deferred {
  let resolve!: () => void;
  let reject!: (err: Error) => void;
  const promise = new Promise<void>((res, rej) => {
    resolve = res;
    reject = rej;
  });
  return { promise, resolve, reject };
}

/** Settle pending microtasks and timers queued by view callbacks. */
export function flush(): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, 0));
}

type NextResult = UiMatchup | null | Error;

export class FakeApi implements ArenaApi {
  /** Script of nextMatchup results; an exhausted script keeps returning null. */
  nextResults: NextResult[] = [];
  /** Script of submitVote results; null means success. */
  voteResults: Array<Error | null> = [];
  /** When set, submitVote parks on this promise before settling. */
  voteGate: Promise<void> | null = null;

  nextCalls: string[] = [];
  voteCalls: Array<{ matchupId: string; outcome: Outcome; rater: string }> = [];
  leaderboardEntries: LeaderboardEntry[] = [];
  leaderboardError: Error | null = null;
  leaderboardCalls = 0;

  async nextMatchup(rater: string): Promise<UiMatchup | null> {
    this.nextCalls.push(rater);
    const result = this.nextResults.length > 0 ? this.nextResults.shift()! : null;
    if (result instanceof Error) {
      throw result;
    }
    return result;
  }

  async submitVote(matchupId: string, outcome: Outcome, rater: string): Promise<void> {
    this.voteCalls.push({ matchupId, outcome, rater });
    if (this.voteGate !== null) {
      await this.voteGate;
    }
    const result = this.voteResults.length > 0 ? this.voteResults.shift()! : null;
    if (result instanceof Error) {
      throw result;
    }
  }

  async leaderboard(): Promise<LeaderboardEntry[]> {
    this.leaderboardCalls += 1;
    if (this.leaderboardError !== null) {
      throw this.leaderboardError;
    }
    return this.leaderboardEntries;
  }
}
