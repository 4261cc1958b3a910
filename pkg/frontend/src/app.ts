/** Single-page app shell: hash routing between the vote and leaderboard
 * views, rater identity handling, and service wiring.
 */

import { ArenaClient } from "./api.js";
import { VoteFlow } from "./flow.js";
import { VoteView } from "./vote-view.js";
import { LeaderboardView } from "./leaderboard-view.js";

const RATER_STORAGE_KEY = "arena-rater";

function storedRater(): string {
  const saved = window.localStorage.getItem(RATER_STORAGE_KEY);
  if (saved !== null && saved.trim() !== "") {
    return saved;
  }
  const generated = `rater-${Math.random().toString(36).slice(2, 8)}`;
  window.localStorage.setItem(RATER_STORAGE_KEY, generated);
  return generated;
}

export function bootstrap(appRoot: HTMLElement): void {
  const doc = appRoot.ownerDocument;
  appRoot.innerHTML = `
    <header class="topbar">
      <h1>Scenario Arena</h1>
      <nav>
        <a href="#vote" class="nav-vote">Vote</a>
        <a href="#leaderboard" class="nav-leaderboard">Leaderboard</a>
      </nav>
      <label class="rater-label">Rater
        <input type="text" class="rater-input" spellcheck="false">
      </label>
    </header>
    <main class="view-host"></main>
  `;
  const host = appRoot.querySelector<HTMLElement>(".view-host");
  const raterInput = appRoot.querySelector<HTMLInputElement>(".rater-input");
  if (host === null || raterInput === null) {
    throw new Error("app skeleton incomplete");
  }

  const api = new ArenaClient("");
  const voteView = { current: null as VoteView | null };
  const flow = new VoteFlow(api, storedRater(), (state, votes) => {
    voteView.current?.render(state, votes);
  });
  voteView.current = new VoteView(flow, doc);
  const leaderboardView = new LeaderboardView(api, doc);
  raterInput.value = flow.raterName;
  raterInput.addEventListener("change", () => {
    const name = raterInput.value.trim();
    if (name === "") {
      raterInput.value = flow.raterName;
      return;
    }
    window.localStorage.setItem(RATER_STORAGE_KEY, name);
    void flow.setRater(name);
  });

  let active: "vote" | "leaderboard" | null = null;
  const route = (): void => {
    const next = window.location.hash === "#leaderboard" ? "leaderboard" : "vote";
    if (next === active) {
      return;
    }
    if (active === "vote") {
      voteView.current?.unmount();
    } else if (active === "leaderboard") {
      leaderboardView.unmount();
    }
    active = next;
    if (next === "vote") {
      voteView.current?.mount(host);
      voteView.current?.render(flow.current, flow.sessionVotes);
    } else {
      leaderboardView.mount(host);
    }
  };

  window.addEventListener("hashchange", route);
  route();
  void flow.start();
}

const appRoot = document.getElementById("app");
if (appRoot !== null) {
  bootstrap(appRoot);
}
