// @vitest-environment happy-dom
import { beforeEach, describe, expect, it } from "vitest";

import { CurationApi } from "../src/api.js";
import { RecordEditor } from "../src/editor.js";
import { MockService, makeRecord } from "./mockService.js";

async function flush(times = 3): Promise<void> {
  for (let i = 0; i < times; i++) {
    await new Promise((resolve) => setTimeout(resolve, 0));
  }
}

function mount(service: MockService, key: string) {
  const api = new CurationApi("http://mock", service.fetch);
  const container = document.createElement("div");
  document.body.appendChild(container);
  return { api, container };
}

async function openEditor(service: MockService, key: string) {
  const { api, container } = mount(service, key);
  const payload = await api.getRecord(key);
  const editor = new RecordEditor(container, api, payload);
  editor.render();
  return { editor, container, api };
}

describe("RecordEditor", () => {
  let service: MockService;
  let key: string;

  beforeEach(() => {
    document.body.innerHTML = "";
    service = new MockService();
    key = service.addRecord(makeRecord());
  });

  it("renders the revision and all four lists", async () => {
    const { container } = await openEditor(service, key);
    expect(container.querySelector(".record-meta")?.textContent).toContain("revision 0");
    expect(container.querySelectorAll("section.entry-list")).toHaveLength(4);
    expect(container.querySelectorAll(".entry-row")).toHaveLength(30);
  });

  it("changing a certainty through the dropdown persists with revision+1", async () => {
    const { editor, container } = await openEditor(service, key);
    const select = container.querySelector<HTMLSelectElement>(
      '[data-path="corefs.train[0]"] select.entry-certainty',
    );
    expect(select).not.toBeNull();
    select!.value = "Very High";
    select!.dispatchEvent(new Event("change"));
    await flush();
    expect(service.get(key).corefs.train[0]?.certainty).toBe("Very High");
    expect(service.get(key).revision).toBe(1);
    expect(editor.record.revision).toBe(1);
    expect(container.querySelector(".record-meta")?.textContent).toContain("revision 1");
  });

  it("a mid-list certainty boost renders an inline non-monotone warning", async () => {
    const { container } = await openEditor(service, key);
    const select = container.querySelector<HTMLSelectElement>(
      '[data-path="corefs.train[5]"] select.entry-certainty',
    );
    select!.value = "Very High";
    select!.dispatchEvent(new Event("change"));
    await flush();
    const row = container.querySelector('[data-path="corefs.train[5]"]');
    expect(row?.querySelector(".monotone-warning")).not.toBeNull();
  });

  it("saving against a stale revision shows the conflict banner, no silent overwrite", async () => {
    const { editor, container, api } = await openEditor(service, key);
    // another expert edits the record behind our back
    await api.applyEdit(key, {
      operation: "set_certainty",
      base_revision: 0,
      path: "corefs.train[1]",
      value: "Low",
    });
    await editor.setCertainty("corefs", "train", 0, "Very High");
    await flush();
    const banner = container.querySelector(".conflict-banner");
    expect(banner).not.toBeNull();
    expect(banner?.textContent).toContain("server revision 1");
    // our change was not applied
    expect(service.get(key).corefs.train[0]?.certainty).toBe("Normal");
  });

  it("reload after conflict adopts the server version", async () => {
    const { editor, container, api } = await openEditor(service, key);
    await api.applyEdit(key, {
      operation: "set_certainty",
      base_revision: 0,
      path: "corefs.train[1]",
      value: "Low",
    });
    await editor.setCertainty("corefs", "train", 0, "Very High");
    container.querySelector<HTMLButtonElement>(".reload-button")!.click();
    await flush();
    expect(container.querySelector(".conflict-banner")).toBeNull();
    expect(editor.record.revision).toBe(1);
  });

  it("approve is disabled with the violations listed for a 9-entry list", async () => {
    const short = makeRecord({ target: "Deer" });
    short.corefs.train.pop();
    const shortKey = service.addRecord(short);
    const { container } = await openEditor(service, shortKey);
    const button = container.querySelector<HTMLButtonElement>(".approve-button");
    expect(button?.disabled).toBe(true);
    const violations = [...container.querySelectorAll(".violation")];
    expect(violations.some((v) => v.getAttribute("data-code") === "LIST_LENGTH")).toBe(true);
  });

  it("approve succeeds for a valid record and flips the state", async () => {
    const { editor, container } = await openEditor(service, key);
    const button = container.querySelector<HTMLButtonElement>(".approve-button");
    expect(button?.disabled).toBe(false);
    button!.click();
    await flush();
    expect(service.get(key).state).toBe("approved");
    expect(editor.record.state).toBe("approved");
    expect(
      container.querySelector<HTMLButtonElement>(".approve-button")?.disabled,
    ).toBe(true);
  });

  it("deleting an entry disables approve until a replacement is added", async () => {
    const { container } = await openEditor(service, key);
    const remove = container.querySelector<HTMLButtonElement>(
      '[data-path="corefs.train[9]"] .delete-entry',
    );
    remove!.click();
    await flush();
    expect(container.querySelector<HTMLButtonElement>(".approve-button")?.disabled).toBe(true);
    const addRow = container.querySelector(".corefs-train .add-row");
    const input = addRow!.querySelector<HTMLInputElement>("input");
    input!.value = "replacement coref";
    addRow!.querySelector<HTMLButtonElement>(".add-entry")!.click();
    await flush();
    expect(service.get(key).corefs.train).toHaveLength(10);
    expect(container.querySelector<HTMLButtonElement>(".approve-button")?.disabled).toBe(false);
  });

  it("move buttons swap adjacent entries through documented ops", async () => {
    const { container } = await openEditor(service, key);
    const down = container.querySelector<HTMLButtonElement>(
      '[data-path="corefs.train[0]"] .move-down',
    );
    down!.click();
    await flush();
    expect(service.get(key).corefs.train[0]?.text).toBe("coref 1");
    expect(service.get(key).corefs.train[1]?.text).toBe("coref 0");
    expect(service.get(key).revision).toBe(4); // four chained set commands
    const ops = service.editLog.map((e) => e.operation);
    expect(new Set(ops)).toEqual(new Set(["set_text", "set_certainty"]));
  });
});
