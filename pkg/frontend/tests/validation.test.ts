import { describe, expect, it } from "vitest";

import {
  approvalBlockers,
  canonicalCertainty,
  certaintyWeight,
  nonMonotoneIndices,
  normalizeText,
  validateRecord,
} from "../src/validation.js";
import { makeRecord } from "./mockService.js";

describe("certainty mapping", () => {
  it("maps the five labels onto the five weights", () => {
    expect(certaintyWeight("Very High")).toBe(1.0);
    expect(certaintyWeight("High")).toBe(0.8);
    expect(certaintyWeight("Normal")).toBe(0.6);
    expect(certaintyWeight("Low")).toBe(0.4);
    expect(certaintyWeight("Very Low")).toBe(0.2);
  });

  it("tolerates capitalization and spacing", () => {
    expect(canonicalCertainty("very  high")).toBe("Very High");
    expect(canonicalCertainty(" LOW ")).toBe("Low");
  });

  it("rejects unknown labels", () => {
    expect(canonicalCertainty("Medium")).toBeNull();
    expect(certaintyWeight("Banana")).toBeNull();
  });
});

describe("normalizeText", () => {
  it("matches the server's punctuation/case folding", () => {
    expect(normalizeText("Bella Swan (Twilight)")).toBe("bella swan twilight");
    expect(normalizeText("  pet   DOG ")).toBe("pet dog");
  });
});

describe("validateRecord (client mirror)", () => {
  it("accepts a clean record", () => {
    expect(validateRecord(makeRecord())).toEqual([]);
  });

  it("flags short lists", () => {
    const record = makeRecord();
    record.corefs.train.pop();
    const codes = validateRecord(record).map((v) => [v.code, v.path]);
    expect(codes).toContainEqual(["LIST_LENGTH", "coref_train"]);
  });

  it("flags coref/retain overlap case-insensitively", () => {
    const record = makeRecord();
    record.retains.train[0] = { text: "CoReF 3", certainty: "Low" };
    const codes = validateRecord(record).map((v) => v.code);
    expect(codes).toContain("SET_OVERLAP");
  });

  it("flags retain equal to target", () => {
    const record = makeRecord();
    record.retains.test[0] = { text: "horse", certainty: "Low" };
    expect(validateRecord(record).map((v) => v.code)).toContain("TARGET_IN_RETAIN");
  });

  it("flags duplicates within the coref union", () => {
    const record = makeRecord();
    record.corefs.test[0] = { text: "coref 2", certainty: "Low" };
    expect(validateRecord(record).map((v) => v.code)).toContain("DUPLICATE_TEXT");
  });

  it("flags empty text and unknown certainty", () => {
    const record = makeRecord();
    record.corefs.train[1] = { text: "  ", certainty: "Medium" };
    const codes = validateRecord(record).map((v) => v.code);
    expect(codes).toContain("EMPTY_TEXT");
    expect(codes).toContain("UNKNOWN_CERTAINTY");
  });

  it("approvalBlockers keeps only error severity", () => {
    const record = makeRecord();
    record.corefs.train.pop();
    expect(approvalBlockers(record).every((v) => v.severity === "error")).toBe(true);
    expect(approvalBlockers(record).length).toBeGreaterThan(0);
  });
});

describe("nonMonotoneIndices", () => {
  it("accepts a strongest-first ladder", () => {
    const entries = ["Very High", "High", "High", "Normal", "Low"].map((certainty, i) => ({
      text: `e${i}`,
      certainty,
    }));
    expect(nonMonotoneIndices(entries)).toEqual([]);
  });

  it("reports the index where certainty climbs back up", () => {
    const entries = ["High", "Low", "Very High"].map((certainty, i) => ({
      text: `e${i}`,
      certainty,
    }));
    expect(nonMonotoneIndices(entries)).toEqual([2]);
  });

  it("skips unknown labels instead of crashing", () => {
    const entries = [
      { text: "a", certainty: "High" },
      { text: "b", certainty: "Medium" },
      { text: "c", certainty: "Low" },
    ];
    expect(nonMonotoneIndices(entries)).toEqual([]);
  });
});
