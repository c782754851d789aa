import { describe, expect, it } from "vitest";

import { diffToEdits, swapEntries } from "../src/diff.js";
import type { EntryDiff } from "../src/types.js";
import { makeRecord } from "./mockService.js";

const changed = (text: string, certainty: string, old: string): EntryDiff => ({
  side: "corefs",
  text,
  certainty,
  old_certainty: old,
});

describe("diffToEdits", () => {
  it("chains base revisions across the command sequence", () => {
    const record = makeRecord({ revision: 4 });
    const edits = diffToEdits(record, {
      changed: [changed("coref 0", "Very High", "Normal")],
      removed: [{ side: "corefs", text: "coref 5", certainty: "Normal", old_certainty: "" }],
      added: [{ side: "retains", text: "new retain", certainty: "Low", old_certainty: "" }],
    });
    expect(edits.map((e) => e.base_revision)).toEqual([4, 5, 6]);
    expect(edits.map((e) => e.operation)).toEqual(["set_certainty", "delete_entry", "add_entry"]);
  });

  it("emits deletions highest-index-first so paths stay valid", () => {
    const record = makeRecord();
    const edits = diffToEdits(record, {
      changed: [],
      removed: [
        { side: "corefs", text: "coref 2", certainty: "", old_certainty: "" },
        { side: "corefs", text: "coref 8", certainty: "", old_certainty: "" },
      ],
      added: [],
    });
    expect(edits.map((e) => e.path)).toEqual(["corefs.train[8]", "corefs.train[2]"]);
  });

  it("locates entries in test lists too", () => {
    const record = makeRecord();
    const edits = diffToEdits(record, {
      changed: [changed("coref test 1", "High", "Normal")],
      removed: [],
      added: [],
    });
    expect(edits[0]?.path).toBe("corefs.test[1]");
  });

  it("skips entries that are no longer present", () => {
    const record = makeRecord();
    const edits = diffToEdits(record, {
      changed: [changed("vanished entry", "High", "Normal")],
      removed: [],
      added: [],
    });
    expect(edits).toEqual([]);
  });

  it("returns no edits for an empty acceptance", () => {
    expect(
      diffToEdits(makeRecord(), { changed: [], removed: [], added: [] }),
    ).toEqual([]);
  });
});

describe("swapEntries", () => {
  it("expresses a swap with the documented ops only", () => {
    const record = makeRecord({ revision: 2 });
    const commands = swapEntries(record, "corefs", "train", 0, 1);
    expect(commands).toHaveLength(4);
    expect(commands.every((c) => c.operation === "set_text" || c.operation === "set_certainty")).toBe(
      true,
    );
    expect(commands.map((c) => c.base_revision)).toEqual([2, 3, 4, 5]);
    expect(commands[0]).toMatchObject({ path: "corefs.train[0]", value: "coref 1" });
    expect(commands[2]).toMatchObject({ path: "corefs.train[1]", value: "coref 0" });
  });

  it("is a no-op for out-of-range or identical indices", () => {
    const record = makeRecord();
    expect(swapEntries(record, "corefs", "train", 0, 0)).toEqual([]);
    expect(swapEntries(record, "corefs", "train", 9, 10)).toEqual([]);
  });
});
