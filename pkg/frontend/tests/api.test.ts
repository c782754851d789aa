import { describe, expect, it } from "vitest";

import { ApiError, ConflictError, CurationApi } from "../src/api.js";
import { MockService, makeRecord } from "./mockService.js";

function setup() {
  const service = new MockService();
  const key = service.addRecord(makeRecord());
  const api = new CurationApi("http://mock", service.fetch);
  return { service, key, api };
}

describe("CurationApi against the fixture-backed service", () => {
  it("lists and fetches records", async () => {
    const { api, key } = setup();
    const summaries = await api.listRecords();
    expect(summaries).toHaveLength(1);
    expect(summaries[0]).toMatchObject({ key, target: "Horse", revision: 0 });
    const payload = await api.getRecord(key);
    expect(payload.record.corefs.train).toHaveLength(10);
  });

  it("filters by state", async () => {
    const { api, service } = setup();
    service.addRecord(makeRecord({ target: "Deer", state: "approved" }));
    const approved = await api.listRecords({ state: "approved" });
    expect(approved.map((s) => s.target)).toEqual(["Deer"]);
  });

  it("a certainty edit persists with revision+1", async () => {
    const { api, key } = setup();
    const updated = await api.applyEdit(key, {
      operation: "set_certainty",
      base_revision: 0,
      path: "corefs.train[0]",
      value: "Very High",
    });
    expect(updated.record.revision).toBe(1);
    expect(updated.record.corefs.train[0]?.certainty).toBe("Very High");
    const refetched = await api.getRecord(key);
    expect(refetched.record.revision).toBe(1);
    expect(refetched.record.corefs.train[0]?.certainty).toBe("Very High");
  });

  it("stale base_revision raises ConflictError and changes nothing", async () => {
    const { api, key } = setup();
    await api.applyEdit(key, {
      operation: "set_certainty",
      base_revision: 0,
      path: "corefs.train[0]",
      value: "High",
    });
    await expect(
      api.applyEdit(key, {
        operation: "set_certainty",
        base_revision: 0,
        path: "corefs.train[1]",
        value: "Low",
      }),
    ).rejects.toBeInstanceOf(ConflictError);
    const payload = await api.getRecord(key);
    expect(payload.record.corefs.train[1]?.certainty).toBe("Normal");
  });

  it("approving an invalid record is blocked server-side with violations", async () => {
    const { api, service } = setup();
    const bad = makeRecord({ target: "Deer" });
    bad.corefs.train.pop(); // 9 entries
    const key = service.addRecord(bad);
    try {
      await api.approve(key, 0);
      expect.unreachable("approve should have been rejected");
    } catch (error) {
      expect(error).toBeInstanceOf(ConflictError);
      const conflict = error as ConflictError;
      expect(conflict.violations.some((v) => v.code === "LIST_LENGTH")).toBe(true);
    }
    const payload = await api.getRecord(key);
    expect(payload.record.state).toBe("draft");
  });

  it("approving a valid record succeeds", async () => {
    const { api, key } = setup();
    const payload = await api.approve(key, 0);
    expect(payload.record.state).toBe("approved");
    expect(payload.record.revision).toBe(1);
  });

  it("regenerate returns the canned diff", async () => {
    const { api, service, key } = setup();
    service.nextDiff = {
      round: 2,
      sense: "",
      added: [],
      removed: [{ side: "corefs", text: "coref 4", certainty: "Normal", old_certainty: "" }],
      changed: [],
    };
    const diff = await api.regenerate(key, "drop coref 4");
    expect(diff.removed[0]?.text).toBe("coref 4");
  });

  it("regeneration failure surfaces retryability", async () => {
    const { api, service, key } = setup();
    service.failRegenerate = true;
    try {
      await api.regenerate(key, "anything");
      expect.unreachable("regenerate should have failed");
    } catch (error) {
      expect(error).toBeInstanceOf(ApiError);
      expect((error as ApiError).retryable).toBe(true);
    }
  });

  it("missing distance endpoint yields null, not an error", async () => {
    const { api, key } = setup();
    expect(await api.distances(key)).toBeNull();
  });

  it("applyEdits chains commands sequentially", async () => {
    const { api, key } = setup();
    const last = await api.applyEdits(key, [
      { operation: "set_certainty", base_revision: 0, path: "corefs.train[0]", value: "High" },
      { operation: "set_certainty", base_revision: 1, path: "corefs.train[1]", value: "Low" },
    ]);
    expect(last?.record.revision).toBe(2);
  });
});
