/**
 * Client-side mirror of the service's record validator, so the UI can show
 * violations live and block approval before the server would. The server
 * remains the authority; anything rejected here would also be rejected
 * there.
 */

import type { ConceptRecord, ConceptEntry, Violation } from "./types.js";
import { CERTAINTY_LABELS, CERTAINTY_WEIGHTS, type CertaintyLabel } from "./types.js";

const TRAIN_SIZE = 10;
const TEST_SIZE = 5;

export function canonicalCertainty(label: string): CertaintyLabel | null {
  const key = label.trim().replace(/\s+/g, " ").toLowerCase();
  for (const canonical of CERTAINTY_LABELS) {
    if (canonical.toLowerCase() === key) return canonical;
  }
  return null;
}

export function certaintyWeight(label: string): number | null {
  const canonical = canonicalCertainty(label);
  return canonical === null ? null : CERTAINTY_WEIGHTS[canonical];
}

/** Lowercase, strip punctuation, collapse whitespace (matches the server). */
export function normalizeText(text: string): string {
  return text
    .toLowerCase()
    .replace(/[^\p{L}\p{N}_\s]/gu, " ")
    .replace(/\s+/g, " ")
    .trim();
}

interface SidePaths {
  entries: ConceptEntry[];
  path: string;
  expected: number;
}

function sides(record: ConceptRecord): SidePaths[] {
  return [
    { entries: record.corefs.train, path: "coref_train", expected: TRAIN_SIZE },
    { entries: record.corefs.test, path: "coref_test", expected: TEST_SIZE },
    { entries: record.retains.train, path: "retain_train", expected: TRAIN_SIZE },
    { entries: record.retains.test, path: "retain_test", expected: TEST_SIZE },
  ];
}

/**
 * Violations that would block approval, mirroring the server's approved-
 * shape validation: list lengths, empty texts, unknown certainty labels,
 * duplicates, coref/retain overlap, target-in-retain.
 */
export function validateRecord(record: ConceptRecord): Violation[] {
  const violations: Violation[] = [];

  for (const side of sides(record)) {
    if (side.entries.length !== side.expected) {
      violations.push({
        code: "LIST_LENGTH",
        path: side.path,
        message: `expected ${side.expected} entries, found ${side.entries.length}`,
        severity: "error",
      });
    }
    side.entries.forEach((entry, i) => {
      if (entry.text.trim() === "") {
        violations.push({
          code: "EMPTY_TEXT",
          path: `${side.path}[${i}].text`,
          message: "entry text is empty",
          severity: "error",
        });
      }
      if (canonicalCertainty(entry.certainty) === null) {
        violations.push({
          code: "UNKNOWN_CERTAINTY",
          path: `${side.path}[${i}].certainty`,
          message: `unknown certainty label "${entry.certainty}"`,
          severity: "error",
        });
      }
    });
  }

  const corefEntries = [...record.corefs.train, ...record.corefs.test];
  const retainEntries = [...record.retains.train, ...record.retains.test];
  for (const [label, entries] of [
    ["coref", corefEntries],
    ["retain", retainEntries],
  ] as const) {
    const seen = new Map<string, number>();
    entries.forEach((entry, i) => {
      const norm = normalizeText(entry.text);
      if (!norm) return;
      const first = seen.get(norm);
      if (first !== undefined) {
        violations.push({
          code: "DUPLICATE_TEXT",
          path: `${label}[${i}]`,
          message: `duplicate ${label} text "${entry.text}"`,
          severity: "error",
        });
      } else {
        seen.set(norm, i);
      }
    });
  }

  const corefNorms = new Set(corefEntries.map((e) => normalizeText(e.text)).filter(Boolean));
  const targetNorm = normalizeText(record.target);
  retainEntries.forEach((entry, i) => {
    const norm = normalizeText(entry.text);
    if (!norm) return;
    if (corefNorms.has(norm)) {
      violations.push({
        code: "SET_OVERLAP",
        path: `retain[${i}]`,
        message: `"${entry.text}" appears in both coref and retain lists`,
        severity: "error",
      });
    }
    if (norm === targetNorm) {
      violations.push({
        code: "TARGET_IN_RETAIN",
        path: `retain[${i}]`,
        message: `retain entry "${entry.text}" equals the target`,
        severity: "error",
      });
    }
  });

  return violations;
}

/**
 * Indices whose certainty outranks the previous entry (ordering should be
 * strongest first). Rendered as inline warnings, never blocking.
 */
export function nonMonotoneIndices(entries: ConceptEntry[]): number[] {
  const out: number[] = [];
  let previous: number | null = null;
  entries.forEach((entry, i) => {
    const weight = certaintyWeight(entry.certainty);
    if (weight === null) return;
    if (previous !== null && weight > previous) out.push(i);
    previous = weight;
  });
  return out;
}

export function approvalBlockers(record: ConceptRecord): Violation[] {
  return validateRecord(record).filter((v) => v.severity === "error");
}
