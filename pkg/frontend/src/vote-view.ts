/** Voting view: instruction text above two equal-size blinded images,
 * Left / Tie / Right buttons with arrow-key shortcuts, session counter,
 * and a retry banner for network failures.
 */

import type { Outcome } from "./api.js";
import type { VoteFlow, VoteState } from "./flow.js";

const KEY_OUTCOMES: Record<string, Outcome> = {
  ArrowLeft: "LEFT",
  ArrowDown: "TIE",
  ArrowRight: "RIGHT",
};

export class VoteView {
  readonly root: HTMLElement;
  private readonly instruction: HTMLElement;
  private readonly pair: HTMLElement;
  private readonly leftImage: HTMLImageElement;
  private readonly rightImage: HTMLImageElement;
  private readonly buttons: HTMLButtonElement[];
  private readonly counter: HTMLElement;
  private readonly banner: HTMLElement;
  private readonly bannerText: HTMLElement;
  private readonly emptyNote: HTMLElement;
  private readonly loadingNote: HTMLElement;
  private readonly keyHandler: (event: KeyboardEvent) => void;
  private mounted = false;

  constructor(private readonly flow: VoteFlow, doc: Document = document) {
    this.root = doc.createElement("section");
    this.root.className = "vote-view";
    this.root.innerHTML = `
      <p class="instruction"></p>
      <div class="pair">
        <img class="side-image left" alt="left scenario">
        <img class="side-image right" alt="right scenario">
      </div>
      <div class="controls">
        <button type="button" data-outcome="LEFT">Left <kbd>&larr;</kbd></button>
        <button type="button" data-outcome="TIE">Tie <kbd>&darr;</kbd></button>
        <button type="button" data-outcome="RIGHT">Right <kbd>&rarr;</kbd></button>
      </div>
      <p class="session-counter">Votes this session: 0</p>
      <p class="loading-note">Loading&hellip;</p>
      <p class="empty-note hidden">No match-ups available.</p>
      <div class="retry-banner hidden" role="alert">
        <span class="retry-text"></span>
        <button type="button" class="retry-button">Retry</button>
      </div>
    `;
    this.instruction = this.query(".instruction");
    this.pair = this.query(".pair");
    this.leftImage = this.query<HTMLImageElement>(".side-image.left");
    this.rightImage = this.query<HTMLImageElement>(".side-image.right");
    this.buttons = Array.from(this.root.querySelectorAll<HTMLButtonElement>("button[data-outcome]"));
    this.counter = this.query(".session-counter");
    this.banner = this.query(".retry-banner");
    this.bannerText = this.query(".retry-text");
    this.emptyNote = this.query(".empty-note");
    this.loadingNote = this.query(".loading-note");

    for (const button of this.buttons) {
      button.addEventListener("click", () => {
        void this.flow.vote(button.dataset["outcome"] as Outcome);
      });
    }
    this.query<HTMLButtonElement>(".retry-button").addEventListener("click", () => {
      void this.flow.retry();
    });
    this.keyHandler = (event) => this.onKey(event);
  }

  /** Attach to a container and start listening for arrow keys. */
  mount(container: HTMLElement): void {
    container.appendChild(this.root);
    this.root.ownerDocument.addEventListener("keydown", this.keyHandler);
    this.mounted = true;
  }

  unmount(): void {
    this.root.ownerDocument.removeEventListener("keydown", this.keyHandler);
    this.root.remove();
    this.mounted = false;
  }

  render(state: VoteState, sessionVotes: number): void {
    this.counter.textContent = `Votes this session: ${sessionVotes}`;
    const showPair = state.kind === "voting" || state.kind === "submitting" || state.kind === "retry-submit";
    this.pair.classList.toggle("hidden", !showPair);
    this.loadingNote.classList.toggle("hidden", state.kind !== "loading");
    this.emptyNote.classList.toggle("hidden", state.kind !== "empty");

    if (showPair) {
      const matchup = state.matchup;
      this.instruction.textContent = matchup.instruction_text;
      this.leftImage.src = matchup.left_image_url;
      this.rightImage.src = matchup.right_image_url;
    } else {
      this.instruction.textContent = "";
      this.leftImage.removeAttribute("src");
      this.rightImage.removeAttribute("src");
    }

    const votable = state.kind === "voting";
    for (const button of this.buttons) {
      button.disabled = !votable;
    }

    if (state.kind === "retry-submit") {
      this.bannerText.textContent = "Network error. Your vote was kept and has not been submitted.";
      this.banner.classList.remove("hidden");
    } else if (state.kind === "retry-fetch") {
      this.bannerText.textContent = "Network error. Could not load the next match-up.";
      this.banner.classList.remove("hidden");
    } else {
      this.banner.classList.add("hidden");
    }
  }

  private onKey(event: KeyboardEvent): void {
    if (!this.mounted) {
      return;
    }
    const target = event.target as HTMLElement | null;
    if (target && (target.tagName === "INPUT" || target.tagName === "TEXTAREA")) {
      return;
    }
    const outcome = KEY_OUTCOMES[event.key];
    if (outcome === undefined) {
      return;
    }
    event.preventDefault();
    void this.flow.vote(outcome);
  }

  private query<T extends HTMLElement = HTMLElement>(selector: string): T {
    const node = this.root.querySelector<T>(selector);
    if (node === null) {
      throw new Error(`missing element: ${selector}`);
    }
    return node;
  }
}
