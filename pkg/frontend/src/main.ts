/** Browser entry point: resolve identity, then hand off to the controller. */

import { Client } from "./api.js";
import { SessionController } from "./state.js";
import { View } from "./view.js";

function resolveAnnotator(): string {
  const fromQuery = new URLSearchParams(window.location.search).get("annotator");
  if (fromQuery) {
    window.localStorage.setItem("annotator", fromQuery);
    return fromQuery;
  }
  const stored = window.localStorage.getItem("annotator");
  if (stored) return stored;
  const entered = window.prompt("Annotator id:")?.trim() || "anonymous";
  window.localStorage.setItem("annotator", entered);
  return entered;
}

const annotator = resolveAnnotator();
const controller = new SessionController(new Client("", annotator));
const root = document.getElementById("app");
if (!root) throw new Error("missing #app container");
new View(root, controller);

const aInput = root.querySelector<HTMLInputElement>('[data-role="agreement-a"]');
if (aInput) aInput.value = annotator;

void (async () => {
  await controller.loadTasks();
  const first = controller.tasks.find((t) => t.status === "open") ?? controller.tasks[0];
  if (first) await controller.openTask(first.task_id);
})();
