import { CurationApi } from "./api.js";
import { CurationApp } from "./app.js";

const SERVICE_URL =
  new URLSearchParams(window.location.search).get("service") ?? "http://127.0.0.1:8787";

const root = document.getElementById("app");
if (!root) throw new Error("missing #app mount point");

const app = new CurationApp(root, new CurationApi(SERVICE_URL));
void app.start();
