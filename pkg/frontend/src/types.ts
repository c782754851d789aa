/**
 * Wire types mirroring the curation service's JSON payloads.
 */

export const CERTAINTY_LABELS = ["Very High", "High", "Normal", "Low", "Very Low"] as const;
export type CertaintyLabel = (typeof CERTAINTY_LABELS)[number];

export const CERTAINTY_WEIGHTS: Record<CertaintyLabel, number> = {
  "Very High": 1.0,
  High: 0.8,
  Normal: 0.6,
  Low: 0.4,
  "Very Low": 0.2,
};

export interface ConceptEntry {
  text: string;
  certainty: string;
}

export interface SideLists {
  train: ConceptEntry[];
  test: ConceptEntry[];
}

export interface ConceptRecord {
  target: string;
  category: "object" | "ip" | "celebrity";
  disambiguation?: string;
  state: "draft" | "approved";
  revision: number;
  corefs: SideLists;
  retains: SideLists;
}

export interface Violation {
  code: string;
  path: string;
  message: string;
  severity: "error" | "warning";
}

export interface RecordSummary {
  key: string;
  target: string;
  category: string;
  disambiguation: string | null;
  state: string;
  revision: number;
  counts: Record<string, number>;
  violation_count: number;
}

export interface RecordPayload {
  key: string;
  record: ConceptRecord;
  violations: Violation[];
}

export type EditOperation =
  | "set_text"
  | "set_certainty"
  | "delete_entry"
  | "add_entry"
  | "approve_record";

export interface EditCommand {
  operation: EditOperation;
  base_revision: number;
  path?: string;
  value?: unknown;
}

export interface EntryDiff {
  side: "corefs" | "retains";
  text: string;
  certainty: string;
  old_certainty: string;
}

export interface ProposalDiff {
  round: number;
  sense: string;
  added: EntryDiff[];
  removed: EntryDiff[];
  changed: EntryDiff[];
}

export interface DistanceRow {
  group: "coref" | "retain";
  text: string;
  certainty: string;
  cosine: number;
  euclidean: number;
  identity_ok: boolean;
}

/** `corefs.train[3]` style entry path. */
export function entryPath(side: "corefs" | "retains", split: "train" | "test", index?: number): string {
  const base = `${side}.${split}`;
  return index === undefined ? base : `${base}[${index}]`;
}
