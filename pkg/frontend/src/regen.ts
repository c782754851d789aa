/**
 * Regeneration panel: free-text expert feedback goes to the service, the
 * fresh proposal comes back as a diff, and the expert accepts or rejects
 * each entry. Accepted entries become edit commands; rejected ones vanish.
 * Every round is kept in the panel history.
 */

import { ApiError, CurationApi } from "./api.js";
import { diffToEdits, type AcceptedChanges } from "./diff.js";
import type { EntryDiff, ProposalDiff, RecordPayload } from "./types.js";

export interface RegenCallbacks {
  onRecordChanged?: (payload: RecordPayload) => void;
  getRecord: () => RecordPayload;
}

interface DiffSelection {
  diff: ProposalDiff;
  accepted: Set<string>;
}

function diffKey(kind: string, entry: EntryDiff): string {
  return `${kind}:${entry.side}:${entry.text}`;
}

export class RegenerationPanel {
  private history: DiffSelection[] = [];
  private error: string | null = null;
  private busy = false;

  constructor(
    private container: HTMLElement,
    private api: CurationApi,
    private callbacks: RegenCallbacks,
  ) {}

  get rounds(): number {
    return this.history.length;
  }

  currentSelection(): DiffSelection | null {
    return this.history.length ? this.history[this.history.length - 1]! : null;
  }

  async requestRound(feedback: string): Promise<void> {
    if (this.busy || !feedback.trim()) return;
    this.busy = true;
    this.error = null;
    try {
      const diff = await this.api.regenerate(this.callbacks.getRecord().key, feedback);
      this.history.push({ diff, accepted: new Set() });
    } catch (err) {
      if (err instanceof ApiError) {
        this.error = err.retryable
          ? `Generation failed (${err.message}); you can retry.`
          : `Generation failed: ${err.message}`;
      } else {
        throw err;
      }
    } finally {
      this.busy = false;
      this.render();
    }
  }

  toggle(kind: "changed" | "removed" | "added", entry: EntryDiff): void {
    const selection = this.currentSelection();
    if (!selection) return;
    const key = diffKey(kind, entry);
    if (selection.accepted.has(key)) selection.accepted.delete(key);
    else selection.accepted.add(key);
    this.render();
  }

  acceptedChanges(): AcceptedChanges {
    const selection = this.currentSelection();
    if (!selection) return { changed: [], removed: [], added: [] };
    const pick = (kind: "changed" | "removed" | "added") =>
      selection.diff[kind].filter((entry) => selection.accepted.has(diffKey(kind, entry)));
    return { changed: pick("changed"), removed: pick("removed"), added: pick("added") };
  }

  /** Edits for the accepted subset; empty selection produces no commands. */
  pendingEdits() {
    return diffToEdits(this.callbacks.getRecord().record, this.acceptedChanges());
  }

  async applyAccepted(): Promise<number> {
    const edits = this.pendingEdits();
    if (edits.length === 0) return 0;
    const updated = await this.api.applyEdits(this.callbacks.getRecord().key, edits);
    if (updated) this.callbacks.onRecordChanged?.(updated);
    this.render();
    return edits.length;
  }

  render(): void {
    this.container.textContent = "";
    const form = document.createElement("div");
    form.className = "regen-form";
    const feedback = document.createElement("textarea");
    feedback.className = "feedback-input";
    feedback.placeholder = "Tell the model what to fix (e.g. drop entries naming other people)";
    const send = document.createElement("button");
    send.className = "send-feedback";
    send.textContent = this.busy ? "Waiting…" : "Request new proposal";
    send.disabled = this.busy;
    send.addEventListener("click", () => void this.requestRound(feedback.value));
    form.append(feedback, send);
    this.container.appendChild(form);

    if (this.error) {
      const alert = document.createElement("div");
      alert.className = "regen-error";
      alert.setAttribute("role", "alert");
      alert.textContent = this.error;
      this.container.appendChild(alert);
    }

    this.history.forEach((selection, index) => {
      this.container.appendChild(
        this.roundSection(selection, index === this.history.length - 1),
      );
    });
  }

  private roundSection(selection: DiffSelection, active: boolean): HTMLElement {
    const section = document.createElement("section");
    section.className = active ? "regen-round active" : "regen-round archived";
    const heading = document.createElement("h4");
    heading.textContent = `Round ${selection.diff.round}`;
    section.appendChild(heading);

    const groups: Array<["changed" | "removed" | "added", string, EntryDiff[]]> = [
      ["changed", "Certainty changes", selection.diff.changed],
      ["removed", "Removals", selection.diff.removed],
      ["added", "Additions", selection.diff.added],
    ];
    let total = 0;
    for (const [kind, label, entries] of groups) {
      if (!entries.length) continue;
      total += entries.length;
      const block = document.createElement("div");
      block.className = `diff-group diff-${kind}`;
      const title = document.createElement("h5");
      title.textContent = label;
      block.appendChild(title);
      for (const entry of entries) {
        block.appendChild(this.diffRow(kind, entry, selection, active));
      }
      section.appendChild(block);
    }
    if (total === 0) {
      const empty = document.createElement("p");
      empty.className = "diff-empty";
      empty.textContent = "Proposal matches the current lists.";
      section.appendChild(empty);
    }

    if (active && total > 0) {
      const apply = document.createElement("button");
      apply.className = "apply-accepted";
      apply.textContent = "Apply accepted entries";
      apply.disabled = this.acceptedChanges().changed.length === 0 &&
        this.acceptedChanges().removed.length === 0 &&
        this.acceptedChanges().added.length === 0;
      apply.addEventListener("click", () => void this.applyAccepted());
      section.appendChild(apply);
    }
    return section;
  }

  private diffRow(
    kind: "changed" | "removed" | "added",
    entry: EntryDiff,
    selection: DiffSelection,
    active: boolean,
  ): HTMLElement {
    const row = document.createElement("label");
    row.className = "diff-row";
    const checkbox = document.createElement("input");
    checkbox.type = "checkbox";
    checkbox.className = "accept-toggle";
    checkbox.checked = selection.accepted.has(diffKey(kind, entry));
    checkbox.disabled = !active;
    checkbox.addEventListener("change", () => this.toggle(kind, entry));
    const description = document.createElement("span");
    if (kind === "changed") {
      description.textContent =
        `${entry.side}: "${entry.text}" ${entry.old_certainty} → ${entry.certainty}`;
    } else if (kind === "removed") {
      description.textContent = `${entry.side}: remove "${entry.text}"`;
    } else {
      description.textContent = `${entry.side}: add "${entry.text}" (${entry.certainty})`;
    }
    row.append(checkbox, description);
    return row;
  }
}
