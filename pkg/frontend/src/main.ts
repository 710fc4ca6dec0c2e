import { ApiClient } from "./api";
import { KnobPanel } from "./panel";

const base = new URLSearchParams(window.location.search).get("api") ??
  "http://127.0.0.1:8000";
const root = document.getElementById("app");
if (root) {
  void new KnobPanel(new ApiClient(base), root).start();
}
