/**
 * Turning an accepted subset of a regeneration diff into the edit-command
 * chain the service expects. Mirrors the server-side translation: changed
 * entries become set_certainty on their current location, removals are
 * emitted highest-index-first so earlier deletes do not shift later ones,
 * and additions append to the train lists. base_revision is chained because
 * every applied edit bumps the revision by one.
 */

import type { ConceptRecord, EditCommand, EntryDiff } from "./types.js";
import { entryPath } from "./types.js";
import { normalizeText } from "./validation.js";

interface Location {
  side: "corefs" | "retains";
  split: "train" | "test";
  index: number;
}

function locate(record: ConceptRecord, side: "corefs" | "retains", text: string): Location | null {
  const lists = side === "corefs" ? record.corefs : record.retains;
  const norm = normalizeText(text);
  for (const split of ["train", "test"] as const) {
    const index = lists[split].findIndex((e) => normalizeText(e.text) === norm);
    if (index !== -1) return { side, split, index };
  }
  return null;
}

export interface AcceptedChanges {
  changed: EntryDiff[];
  removed: EntryDiff[];
  added: EntryDiff[];
}

export function diffToEdits(record: ConceptRecord, accepted: AcceptedChanges): EditCommand[] {
  const edits: EditCommand[] = [];
  let revision = record.revision;

  for (const change of accepted.changed) {
    const location = locate(record, change.side, change.text);
    if (!location) continue;
    edits.push({
      operation: "set_certainty",
      base_revision: revision,
      path: entryPath(location.side, location.split, location.index),
      value: change.certainty,
    });
    revision += 1;
  }

  const removals: Location[] = [];
  for (const removal of accepted.removed) {
    const location = locate(record, removal.side, removal.text);
    if (location) removals.push(location);
  }
  removals.sort((a, b) => {
    const keyA = `${a.side}.${a.split}`;
    const keyB = `${b.side}.${b.split}`;
    if (keyA !== keyB) return keyA < keyB ? -1 : 1;
    return b.index - a.index; // highest index first within a list
  });
  for (const location of removals) {
    edits.push({
      operation: "delete_entry",
      base_revision: revision,
      path: entryPath(location.side, location.split, location.index),
    });
    revision += 1;
  }

  for (const addition of accepted.added) {
    edits.push({
      operation: "add_entry",
      base_revision: revision,
      path: entryPath(addition.side, "train"),
      value: { text: addition.text, certainty: addition.certainty },
    });
    revision += 1;
  }

  return edits;
}

/**
 * Swapping two entries in place is expressed with the documented ops only:
 * four set commands with chained base revisions.
 */
export function swapEntries(
  record: ConceptRecord,
  side: "corefs" | "retains",
  split: "train" | "test",
  indexA: number,
  indexB: number,
): EditCommand[] {
  const lists = side === "corefs" ? record.corefs : record.retains;
  const entries = lists[split];
  const a = entries[indexA];
  const b = entries[indexB];
  if (!a || !b || indexA === indexB) return [];
  let revision = record.revision;
  const commands: EditCommand[] = [];
  const plan: Array<[number, string, string]> = [
    [indexA, b.text, b.certainty],
    [indexB, a.text, a.certainty],
  ];
  for (const [index, text, certainty] of plan) {
    commands.push({
      operation: "set_text",
      base_revision: revision,
      path: entryPath(side, split, index),
      value: text,
    });
    revision += 1;
    commands.push({
      operation: "set_certainty",
      base_revision: revision,
      path: entryPath(side, split, index),
      value: certainty,
    });
    revision += 1;
  }
  return commands;
}
