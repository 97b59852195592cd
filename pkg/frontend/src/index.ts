/** Browser entry point: wire the wizard and console to a session API base URL. */

import { SessionApi } from "./api.js";
import { mountConsole } from "./dom.js";
import { ConsoleStore } from "./state.js";
import { TEMPLATES } from "./wizard.js";

function boot(): void {
  const root = document.getElementById("console");
  const picker = document.getElementById("template") as HTMLSelectElement | null;
  const baseInput = document.getElementById("base-url") as HTMLInputElement | null;
  const seedInput = document.getElementById("seed") as HTMLInputElement | null;
  const startButton = document.getElementById("start") as HTMLButtonElement | null;
  if (!root || !picker || !baseInput || !seedInput || !startButton) return;

  for (const [i, template] of TEMPLATES.entries()) {
    picker.appendChild(new Option(template.label, String(i)));
  }

  startButton.addEventListener("click", () => {
    const base = baseInput.value.replace(/\/$/, "");
    const api = new SessionApi(base, (url, init) => fetch(url, init));
    const store = new ConsoleStore(api);
    mountConsole(root, store);
    const template = TEMPLATES[Number(picker.value)];
    if (template) {
      void store.createSession(template.draft, { seed: Number(seedInput.value) || 0 });
    }
  });
}

boot();
