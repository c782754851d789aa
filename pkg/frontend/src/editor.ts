/**
 * Record editor: per-entry text and certainty editing, inline validation
 * badges, non-monotone ordering warnings, reorder arrows, approval gating,
 * and revision-conflict handling. Every mutation is an EditCommand carrying
 * the revision the expert was looking at; a stale revision produces a
 * conflict banner instead of a silent overwrite.
 */

import { ConflictError, CurationApi } from "./api.js";
import { swapEntries } from "./diff.js";
import type {
  ConceptEntry,
  ConceptRecord,
  DistanceRow,
  RecordPayload,
} from "./types.js";
import { CERTAINTY_LABELS, entryPath } from "./types.js";
import { approvalBlockers, nonMonotoneIndices, normalizeText } from "./validation.js";

export interface EditorCallbacks {
  onRecordChanged?: (payload: RecordPayload) => void;
}

type Side = "corefs" | "retains";
type Split = "train" | "test";

const LIST_TITLES: Array<[Side, Split, string]> = [
  ["corefs", "train", "Corefs — train (10)"],
  ["corefs", "test", "Corefs — test (5)"],
  ["retains", "train", "Retains — train (10)"],
  ["retains", "test", "Retains — test (5)"],
];

export class RecordEditor {
  private payload: RecordPayload;
  private distances = new Map<string, DistanceRow>();
  private conflict: { server: number; local: number } | null = null;
  private busy = false;

  constructor(
    private container: HTMLElement,
    private api: CurationApi,
    payload: RecordPayload,
    private callbacks: EditorCallbacks = {},
  ) {
    this.payload = payload;
  }

  get record(): ConceptRecord {
    return this.payload.record;
  }

  get key(): string {
    return this.payload.key;
  }

  /** Adopt a payload refreshed elsewhere (e.g. the regeneration panel). */
  setPayload(payload: RecordPayload): void {
    this.payload = payload;
    this.conflict = null;
  }

  async loadDistances(): Promise<void> {
    const rows = await this.api.distances(this.key);
    this.distances.clear();
    if (rows) {
      for (const row of rows) this.distances.set(normalizeText(row.text), row);
    }
    this.render();
  }

  /** Run one command against the service, refreshing or flagging conflict. */
  private async submit(commands: ReturnType<typeof swapEntries>): Promise<void> {
    if (this.busy || commands.length === 0) return;
    this.busy = true;
    try {
      const updated = await this.api.applyEdits(this.key, commands);
      if (updated) {
        this.payload = updated;
        this.conflict = null;
        this.callbacks.onRecordChanged?.(updated);
      }
    } catch (error) {
      if (error instanceof ConflictError) {
        const fresh = await this.api.getRecord(this.key);
        this.conflict = {
          server: fresh.record.revision,
          local: this.record.revision,
        };
      } else {
        throw error;
      }
    } finally {
      this.busy = false;
      this.render();
    }
  }

  setCertainty(side: Side, split: Split, index: number, value: string): Promise<void> {
    return this.submit([
      {
        operation: "set_certainty",
        base_revision: this.record.revision,
        path: entryPath(side, split, index),
        value,
      },
    ]);
  }

  setText(side: Side, split: Split, index: number, value: string): Promise<void> {
    return this.submit([
      {
        operation: "set_text",
        base_revision: this.record.revision,
        path: entryPath(side, split, index),
        value,
      },
    ]);
  }

  deleteEntry(side: Side, split: Split, index: number): Promise<void> {
    return this.submit([
      {
        operation: "delete_entry",
        base_revision: this.record.revision,
        path: entryPath(side, split, index),
      },
    ]);
  }

  addEntry(side: Side, split: Split, text: string, certainty: string): Promise<void> {
    // the service appends to a named list; only train lists accept adds here
    return this.submit([
      {
        operation: "add_entry",
        base_revision: this.record.revision,
        path: entryPath(side, split),
        value: { text, certainty },
      },
    ]);
  }

  moveEntry(side: Side, split: Split, index: number, delta: -1 | 1): Promise<void> {
    return this.submit(swapEntries(this.record, side, split, index, index + delta));
  }

  async approve(): Promise<void> {
    if (approvalBlockers(this.record).length > 0) return; // button is disabled anyway
    this.busy = true;
    try {
      const updated = await this.api.approve(this.key, this.record.revision);
      this.payload = updated;
      this.conflict = null;
      this.callbacks.onRecordChanged?.(updated);
    } catch (error) {
      if (error instanceof ConflictError) {
        const fresh = await this.api.getRecord(this.key);
        this.conflict = { server: fresh.record.revision, local: this.record.revision };
      } else {
        throw error;
      }
    } finally {
      this.busy = false;
      this.render();
    }
  }

  async reloadFromServer(): Promise<void> {
    this.payload = await this.api.getRecord(this.key);
    this.conflict = null;
    this.render();
  }

  private entryList(side: Side, split: Split): ConceptEntry[] {
    return side === "corefs" ? this.record.corefs[split] : this.record.retains[split];
  }

  render(): void {
    this.container.textContent = "";
    this.container.appendChild(this.header());
    if (this.conflict) this.container.appendChild(this.conflictBanner());
    for (const [side, split, title] of LIST_TITLES) {
      this.container.appendChild(this.listSection(side, split, title));
    }
    this.container.appendChild(this.approvalSection());
  }

  private header(): HTMLElement {
    const header = document.createElement("header");
    header.className = "record-header";
    const title = document.createElement("h2");
    title.textContent = this.record.disambiguation
      ? `${this.record.target} — ${this.record.disambiguation}`
      : this.record.target;
    const meta = document.createElement("p");
    meta.className = "record-meta";
    meta.textContent =
      `${this.record.category} · ${this.record.state} · revision ${this.record.revision}`;
    header.append(title, meta);
    return header;
  }

  private conflictBanner(): HTMLElement {
    const banner = document.createElement("div");
    banner.className = "conflict-banner";
    banner.setAttribute("role", "alert");
    const text = document.createElement("span");
    text.textContent =
      `Someone else edited this record (server revision ${this.conflict?.server}, ` +
      `yours ${this.conflict?.local}). Your change was not applied.`;
    const reload = document.createElement("button");
    reload.className = "reload-button";
    reload.textContent = "Reload server version";
    reload.addEventListener("click", () => void this.reloadFromServer());
    banner.append(text, reload);
    return banner;
  }

  private listSection(side: Side, split: Split, title: string): HTMLElement {
    const section = document.createElement("section");
    section.className = `entry-list ${side}-${split}`;
    const heading = document.createElement("h3");
    heading.textContent = title;
    section.appendChild(heading);

    const entries = this.entryList(side, split);
    const warnings = new Set(nonMonotoneIndices(entries));
    const list = document.createElement("ol");
    entries.forEach((entry, index) => {
      list.appendChild(this.entryRow(side, split, index, entry, warnings.has(index)));
    });
    section.appendChild(list);
    section.appendChild(this.addRow(side, split));
    return section;
  }

  private entryRow(
    side: Side,
    split: Split,
    index: number,
    entry: ConceptEntry,
    nonMonotone: boolean,
  ): HTMLElement {
    const row = document.createElement("li");
    row.className = "entry-row";
    row.dataset.path = entryPath(side, split, index);

    const text = document.createElement("input");
    text.type = "text";
    text.className = "entry-text";
    text.value = entry.text;
    text.addEventListener("change", () => void this.setText(side, split, index, text.value));

    const certainty = document.createElement("select");
    certainty.className = "entry-certainty";
    for (const label of CERTAINTY_LABELS) {
      const option = document.createElement("option");
      option.value = label;
      option.textContent = label;
      option.selected = label === entry.certainty;
      certainty.appendChild(option);
    }
    certainty.addEventListener("change", () =>
      void this.setCertainty(side, split, index, certainty.value),
    );

    row.append(text, certainty);

    const distance = this.distances.get(normalizeText(entry.text));
    if (distance) {
      const badge = document.createElement("span");
      badge.className = "distance-badge";
      badge.title = "cosine similarity to the target";
      badge.textContent = `cos ${distance.cosine.toFixed(3)}`;
      row.appendChild(badge);
    }

    if (nonMonotone) {
      const warning = document.createElement("span");
      warning.className = "monotone-warning";
      warning.textContent = "certainty outranks the entry above";
      row.appendChild(warning);
    }

    const up = document.createElement("button");
    up.className = "move-up";
    up.textContent = "↑";
    up.disabled = index === 0;
    up.addEventListener("click", () => void this.moveEntry(side, split, index, -1));
    const down = document.createElement("button");
    down.className = "move-down";
    down.textContent = "↓";
    down.disabled = index === this.entryList(side, split).length - 1;
    down.addEventListener("click", () => void this.moveEntry(side, split, index, 1));
    const remove = document.createElement("button");
    remove.className = "delete-entry";
    remove.textContent = "✕";
    remove.addEventListener("click", () => void this.deleteEntry(side, split, index));
    row.append(up, down, remove);
    return row;
  }

  private addRow(side: Side, split: Split): HTMLElement {
    const row = document.createElement("div");
    row.className = "add-row";
    const text = document.createElement("input");
    text.type = "text";
    text.placeholder = "new entry";
    const certainty = document.createElement("select");
    for (const label of CERTAINTY_LABELS) {
      const option = document.createElement("option");
      option.value = label;
      option.textContent = label;
      certainty.appendChild(option);
    }
    const add = document.createElement("button");
    add.className = "add-entry";
    add.textContent = "Add";
    add.addEventListener("click", () => {
      if (text.value.trim()) {
        void this.addEntry(side, split, text.value.trim(), certainty.value);
      }
    });
    row.append(text, certainty, add);
    return row;
  }

  private approvalSection(): HTMLElement {
    const section = document.createElement("section");
    section.className = "approval";
    const blockers = approvalBlockers(this.record);

    const button = document.createElement("button");
    button.className = "approve-button";
    button.textContent =
      this.record.state === "approved" ? "Approved" : "Approve record";
    button.disabled =
      blockers.length > 0 || this.record.state === "approved" || this.busy;
    button.addEventListener("click", () => void this.approve());
    section.appendChild(button);

    if (blockers.length > 0) {
      const list = document.createElement("ul");
      list.className = "violation-list";
      for (const violation of blockers) {
        const item = document.createElement("li");
        item.className = "violation";
        item.dataset.code = violation.code;
        item.textContent = `${violation.code} at ${violation.path}: ${violation.message}`;
        list.appendChild(item);
      }
      section.appendChild(list);
    }
    return section;
  }
}
