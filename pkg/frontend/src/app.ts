/**
 * Single-page shell: record list on the left, editor + regeneration panel
 * for the selected record. No router; selection is plain state.
 */

import { CurationApi } from "./api.js";
import { RecordEditor } from "./editor.js";
import { RegenerationPanel } from "./regen.js";
import type { RecordPayload, RecordSummary } from "./types.js";

export class CurationApp {
  private listPane: HTMLElement;
  private editorPane: HTMLElement;
  private regenPane: HTMLElement;
  private editor: RecordEditor | null = null;
  private panel: RegenerationPanel | null = null;
  private current: RecordPayload | null = null;

  constructor(
    private root: HTMLElement,
    private api: CurationApi,
  ) {
    this.root.textContent = "";
    this.listPane = document.createElement("nav");
    this.listPane.className = "record-list";
    this.editorPane = document.createElement("main");
    this.editorPane.className = "editor-pane";
    this.regenPane = document.createElement("aside");
    this.regenPane.className = "regen-pane";
    this.root.append(this.listPane, this.editorPane, this.regenPane);
  }

  async start(): Promise<void> {
    await this.refreshList();
  }

  async refreshList(filter?: { state?: string; category?: string }): Promise<void> {
    const summaries = await this.api.listRecords(filter);
    this.renderList(summaries);
  }

  private renderList(summaries: RecordSummary[]): void {
    this.listPane.textContent = "";
    const heading = document.createElement("h2");
    heading.textContent = "Concepts";
    this.listPane.appendChild(heading);
    const list = document.createElement("ul");
    for (const summary of summaries) {
      const item = document.createElement("li");
      const button = document.createElement("button");
      button.className = "record-link";
      button.dataset.key = summary.key;
      const marker = summary.state === "approved" ? "✓" : summary.violation_count ? "!" : "·";
      button.textContent =
        `${marker} ${summary.target}` +
        (summary.disambiguation ? ` (${summary.disambiguation})` : "") +
        ` — rev ${summary.revision}`;
      button.addEventListener("click", () => void this.open(summary.key));
      item.appendChild(button);
      list.appendChild(item);
    }
    this.listPane.appendChild(list);
  }

  async open(key: string): Promise<void> {
    const payload = await this.api.getRecord(key);
    this.current = payload;
    this.editor = new RecordEditor(this.editorPane, this.api, payload, {
      onRecordChanged: (updated) => {
        this.current = updated;
        void this.refreshList();
      },
    });
    this.editor.render();
    void this.editor.loadDistances();

    this.panel = new RegenerationPanel(this.regenPane, this.api, {
      getRecord: () => {
        if (!this.current) throw new Error("no record open");
        return this.current;
      },
      onRecordChanged: (updated) => {
        this.current = updated;
        this.editor?.setPayload(updated);
        this.editor?.render();
        void this.refreshList();
      },
    });
    this.panel.render();
  }
}
