/** Leaderboard view: rank, model, rating, 95% CI, and vote count per model,
 * sorted by rating descending, refreshed manually.
 */

import type { ArenaApi, LeaderboardEntry } from "./api.js";

export class LeaderboardView {
  readonly root: HTMLElement;
  private readonly tbody: HTMLTableSectionElement;
  private readonly errorNote: HTMLElement;
  private refreshing = false;

  constructor(private readonly api: ArenaApi, doc: Document = document) {
    this.root = doc.createElement("section");
    this.root.className = "leaderboard-view";
    this.root.innerHTML = `
      <div class="leaderboard-bar">
        <button type="button" class="refresh-button">Refresh</button>
      </div>
      <p class="error-note hidden">Could not reach the arena service.</p>
      <table class="leaderboard">
        <thead>
          <tr><th>Rank</th><th>Model</th><th>Rating</th><th>95% CI</th><th>Votes</th></tr>
        </thead>
        <tbody></tbody>
      </table>
    `;
    const tbody = this.root.querySelector<HTMLTableSectionElement>("tbody");
    const errorNote = this.root.querySelector<HTMLElement>(".error-note");
    const refresh = this.root.querySelector<HTMLButtonElement>(".refresh-button");
    if (tbody === null || errorNote === null || refresh === null) {
      throw new Error("leaderboard skeleton incomplete");
    }
    this.tbody = tbody;
    this.errorNote = errorNote;
    refresh.addEventListener("click", () => {
      void this.refresh();
    });
  }

  mount(container: HTMLElement): void {
    container.appendChild(this.root);
    void this.refresh();
  }

  unmount(): void {
    this.root.remove();
  }

  async refresh(): Promise<void> {
    if (this.refreshing) {
      return;
    }
    this.refreshing = true;
    try {
      const entries = await this.api.leaderboard();
      this.renderEntries(entries);
      this.errorNote.classList.add("hidden");
    } catch {
      this.tbody.replaceChildren();
      this.errorNote.classList.remove("hidden");
    } finally {
      this.refreshing = false;
    }
  }

  private renderEntries(entries: LeaderboardEntry[]): void {
    const doc = this.root.ownerDocument;
    const ordered = [...entries].sort(
      (a, b) => b.rating - a.rating || a.model.localeCompare(b.model),
    );
    const rows = ordered.map((entry) => {
      const row = doc.createElement("tr");
      appendCell(row, entry.rank === null ? "" : String(entry.rank));
      appendCell(row, entry.model).classList.add("model-name");
      appendCell(row, entry.rating.toFixed(1));
      appendCell(row, `[${entry.ci_low.toFixed(1)}, ${entry.ci_high.toFixed(1)}]`);
      appendCell(row, String(entry.votes));
      return row;
    });
    this.tbody.replaceChildren(...rows);
  }
}

function appendCell(row: HTMLTableRowElement, text: string): HTMLTableCellElement {
  const cell = row.ownerDocument.createElement("td");
  cell.textContent = text;
  row.appendChild(cell);
  return cell;
}
