/** Typed client for the arena service HTTP API. */

export type Outcome = "LEFT" | "RIGHT" | "TIE";

/** One blinded pair as served by the backend. Carries no model identifiers. */
export interface UiMatchup {
  matchup_id: string;
  scenario_id: string;
  left_image_url: string;
  right_image_url: string;
  instruction_text: string;
}

export interface LeaderboardEntry {
  model: string;
  rating: number;
  ci_low: number;
  ci_high: number;
  votes: number;
  rank: number | null;
}

/** HTTP-level failure: the service answered, but not with success. */
export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
    this.name = "ApiError";
  }
}

/** Narrow interface the views depend on, so tests can substitute fakes. */
export interface ArenaApi {
  nextMatchup(rater: string): Promise<UiMatchup | null>;
  submitVote(matchupId: string, outcome: Outcome, rater: string): Promise<void>;
  leaderboard(): Promise<LeaderboardEntry[]>;
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ArenaClient implements ArenaApi {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: FetchLike = (input, init) => globalThis.fetch(input, init),
  ) {}

  /** Next blinded pair for this rater, or null when the service has none (204). */
  async nextMatchup(rater: string): Promise<UiMatchup | null> {
    const url = `${this.baseUrl}/api/matchup?rater=${encodeURIComponent(rater)}`;
    const res = await this.fetchFn(url);
    if (res.status === 204) {
      return null;
    }
    if (!res.ok) {
      throw new ApiError(res.status, await errorDetail(res));
    }
    return (await res.json()) as UiMatchup;
  }

  async submitVote(matchupId: string, outcome: Outcome, rater: string): Promise<void> {
    const res = await this.fetchFn(`${this.baseUrl}/api/vote`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ matchup_id: matchupId, outcome, rater }),
    });
    if (!res.ok) {
      throw new ApiError(res.status, await errorDetail(res));
    }
  }

  async leaderboard(): Promise<LeaderboardEntry[]> {
    const res = await this.fetchFn(`${this.baseUrl}/api/leaderboard`);
    if (!res.ok) {
      throw new ApiError(res.status, await errorDetail(res));
    }
    const body = (await res.json()) as { entries: LeaderboardEntry[] };
    return body.entries;
  }
}

async function errorDetail(res: Response): Promise<string> {
  try {
    const body = (await res.json()) as { detail?: unknown };
    if (typeof body.detail === "string") {
      return body.detail;
    }
  } catch {
    // non-JSON error body; fall through to the status line
  }
  return `request failed with status ${res.status}`;
}
