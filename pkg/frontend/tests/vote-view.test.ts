import { beforeEach, describe, expect, it } from "vitest";

import { VoteFlow } from "../src/flow.js";
import { VoteView } from "../src/vote-view.js";
import { FakeApi, deferred, flush, matchup } from "./helpers.js";

// Known model identifiers in the test universe; none may ever reach the DOM.
const MODEL_NAMES = ["atlas-7b", "borealis-13b", "cygnus-34b"];

function setup(api: FakeApi) {
  document.body.innerHTML = "";
  let view: VoteView | null = null;
  const flow = new VoteFlow(api, "tester", (state, votes) => view?.render(state, votes));
  view = new VoteView(flow, document);
  view.mount(document.body);
  void flow.start();
  return { flow, view };
}

function buttons(): HTMLButtonElement[] {
  return Array.from(document.querySelectorAll<HTMLButtonElement>("button[data-outcome]"));
}

function pressKey(key: string, target: EventTarget = document): void {
  target.dispatchEvent(new KeyboardEvent("keydown", { key, bubbles: true, cancelable: true }));
}

beforeEach(() => {
  document.body.innerHTML = "";
});

describe("voting display", () => {
  it("shows the instruction above both blinded images", async () => {
    const api = new FakeApi();
    api.nextResults = [matchup("m-1", { instruction_text: "Add a parked car." })];
    setup(api);
    await flush();

    const instruction = document.querySelector(".instruction");
    expect(instruction?.textContent).toBe("Add a parked car.");
    const left = document.querySelector<HTMLImageElement>(".side-image.left");
    const right = document.querySelector<HTMLImageElement>(".side-image.right");
    expect(left?.getAttribute("src")).toBe("/images/m-1-left.png");
    expect(right?.getAttribute("src")).toBe("/images/m-1-right.png");
    for (const button of buttons()) {
      expect(button.disabled).toBe(false);
    }
  });

  it("never places model identifiers in the voting DOM", async () => {
    const api = new FakeApi();
    api.nextResults = [matchup("m-1")];
    setup(api);
    await flush();

    const html = document.body.innerHTML;
    for (const name of MODEL_NAMES) {
      expect(html).not.toContain(name);
    }
  });

  it("shows the empty state when no matchups remain", async () => {
    const api = new FakeApi();
    api.nextResults = [null];
    setup(api);
    await flush();

    const note = document.querySelector(".empty-note");
    expect(note?.classList.contains("hidden")).toBe(false);
    expect(note?.textContent).toContain("No match-ups available");
    expect(document.querySelector(".pair")?.classList.contains("hidden")).toBe(true);
  });
});

describe("casting votes", () => {
  it("clicking Left submits LEFT and advances the counter", async () => {
    const api = new FakeApi();
    api.nextResults = [matchup("m-1"), matchup("m-2")];
    setup(api);
    await flush();

    buttons()[0]?.click();
    await flush();

    expect(api.voteCalls).toEqual([{ matchupId: "m-1", outcome: "LEFT", rater: "tester" }]);
    expect(document.querySelector(".session-counter")?.textContent).toBe("Votes this session: 1");
    const left = document.querySelector<HTMLImageElement>(".side-image.left");
    expect(left?.getAttribute("src")).toBe("/images/m-2-left.png");
  });

  it("disables the buttons while a vote is in flight", async () => {
    const api = new FakeApi();
    api.nextResults = [matchup("m-1"), matchup("m-2")];
    const gate = deferred();
    api.voteGate = gate.promise;
    setup(api);
    await flush();

    buttons()[1]?.click();
    for (const button of buttons()) {
      expect(button.disabled).toBe(true);
    }
    gate.resolve();
    await flush();
  });

  it("a double-click issues exactly one request", async () => {
    const api = new FakeApi();
    api.nextResults = [matchup("m-1"), matchup("m-2")];
    const gate = deferred();
    api.voteGate = gate.promise;
    setup(api);
    await flush();

    buttons()[2]?.click();
    buttons()[2]?.click();
    gate.resolve();
    await flush();

    expect(api.voteCalls).toHaveLength(1);
  });

  it("maps the arrow keys to Left, Tie, and Right", async () => {
    const api = new FakeApi();
    api.nextResults = [matchup("m-1"), matchup("m-2"), matchup("m-3"), matchup("m-4")];
    setup(api);
    await flush();

    pressKey("ArrowLeft");
    await flush();
    pressKey("ArrowDown");
    await flush();
    pressKey("ArrowRight");
    await flush();

    expect(api.voteCalls.map((call) => call.outcome)).toEqual(["LEFT", "TIE", "RIGHT"]);
  });

  it("ignores arrow keys while typing in an input", async () => {
    const api = new FakeApi();
    api.nextResults = [matchup("m-1")];
    setup(api);
    await flush();
    const input = document.createElement("input");
    document.body.appendChild(input);

    pressKey("ArrowLeft", input);
    await flush();

    expect(api.voteCalls).toHaveLength(0);
  });

  it("stops reacting to keys after unmount", async () => {
    const api = new FakeApi();
    api.nextResults = [matchup("m-1")];
    const { view } = setup(api);
    await flush();

    view.unmount();
    pressKey("ArrowLeft");
    await flush();

    expect(api.voteCalls).toHaveLength(0);
  });
});

describe("network failure", () => {
  it("shows a retry banner and keeps the unsubmitted vote", async () => {
    const api = new FakeApi();
    api.nextResults = [matchup("m-1"), matchup("m-2")];
    api.voteResults = [new TypeError("offline"), null];
    setup(api);
    await flush();

    buttons()[1]?.click();
    await flush();

    const banner = document.querySelector(".retry-banner");
    expect(banner?.classList.contains("hidden")).toBe(false);
    expect(banner?.textContent).toContain("has not been submitted");

    document.querySelector<HTMLButtonElement>(".retry-button")?.click();
    await flush();

    expect(api.voteCalls).toEqual([
      { matchupId: "m-1", outcome: "TIE", rater: "tester" },
      { matchupId: "m-1", outcome: "TIE", rater: "tester" },
    ]);
    expect(document.querySelector(".retry-banner")?.classList.contains("hidden")).toBe(true);
    expect(document.querySelector(".session-counter")?.textContent).toBe("Votes this session: 1");
  });

  it("offers a retry when the matchup fetch itself fails", async () => {
    const api = new FakeApi();
    api.nextResults = [new TypeError("offline"), matchup("m-1")];
    setup(api);
    await flush();

    const banner = document.querySelector(".retry-banner");
    expect(banner?.classList.contains("hidden")).toBe(false);
    expect(banner?.textContent).toContain("Could not load");

    document.querySelector<HTMLButtonElement>(".retry-button")?.click();
    await flush();

    expect(document.querySelector(".retry-banner")?.classList.contains("hidden")).toBe(true);
    const left = document.querySelector<HTMLImageElement>(".side-image.left");
    expect(left?.getAttribute("src")).toBe("/images/m-1-left.png");
  });
});
