// DOM construction and rendering helpers. No framework: the app owns a root
// element and re-renders the two label columns from state on every change.

import { formatConfidence, ReviewRow } from "./state.js";

export interface AppElements {
  textInput: HTMLTextAreaElement;
  submitButton: HTMLButtonElement;
  banner: HTMLElement;
  tacticList: HTMLUListElement;
  techniqueList: HTMLUListElement;
  saveButton: HTMLButtonElement;
  saveStatus: HTMLElement;
  retrainButton: HTMLButtonElement;
  retrainStatus: HTMLElement;
  modelInfo: HTMLElement;
}

export function buildSkeleton(root: HTMLElement): AppElements {
  root.innerHTML = `
    <header>
      <h1>Threat report review</h1>
      <div class="model-info" data-role="model-info"></div>
    </header>
    <div class="banner hidden" data-role="banner"></div>
    <section class="report-entry">
      <textarea data-role="report-text" rows="8"
        placeholder="Paste a threat report and analyze it"></textarea>
      <button data-role="submit" disabled>Analyze report</button>
    </section>
    <main class="columns">
      <section class="column">
        <h2>Tactics</h2>
        <ul class="labels" data-role="tactics"></ul>
      </section>
      <section class="column">
        <h2>Techniques</h2>
        <ul class="labels" data-role="techniques"></ul>
      </section>
    </main>
    <footer>
      <button data-role="save" disabled>Save corrections</button>
      <span class="status" data-role="save-status"></span>
      <button data-role="retrain">Retrain model</button>
      <span class="status" data-role="retrain-status"></span>
    </footer>`;
  const pick = <T extends HTMLElement>(role: string): T => {
    const el = root.querySelector(`[data-role="${role}"]`);
    if (!el) throw new Error(`missing element ${role}`);
    return el as T;
  };
  return {
    textInput: pick<HTMLTextAreaElement>("report-text"),
    submitButton: pick<HTMLButtonElement>("submit"),
    banner: pick<HTMLElement>("banner"),
    tacticList: pick<HTMLUListElement>("tactics"),
    techniqueList: pick<HTMLUListElement>("techniques"),
    saveButton: pick<HTMLButtonElement>("save"),
    saveStatus: pick<HTMLElement>("save-status"),
    retrainButton: pick<HTMLButtonElement>("retrain"),
    retrainStatus: pick<HTMLElement>("retrain-status"),
    modelInfo: pick<HTMLElement>("model-info"),
  };
}

export function renderRows(
  list: HTMLUListElement,
  rows: ReviewRow[],
  onToggle: (labelId: string, checked: boolean) => void,
): void {
  const doc = list.ownerDocument;
  list.textContent = "";
  for (const row of rows) {
    const item = doc.createElement("li");
    const label = doc.createElement("label");
    const box = doc.createElement("input");
    box.type = "checkbox";
    box.checked = row.checked;
    box.dataset.label = row.labelId;
    box.addEventListener("change", () => onToggle(row.labelId, box.checked));
    const name = doc.createElement("span");
    name.className = "label-name";
    name.textContent = `${row.labelId} ${row.name}`;
    const conf = doc.createElement("span");
    conf.className = "confidence";
    conf.textContent = formatConfidence(row.confidence);
    label.append(box, name, conf);
    item.appendChild(label);
    list.appendChild(item);
  }
}

export function showBanner(banner: HTMLElement, message: string): void {
  banner.textContent = message;
  banner.classList.remove("hidden");
}

export function clearBanner(banner: HTMLElement): void {
  banner.textContent = "";
  banner.classList.add("hidden");
}
