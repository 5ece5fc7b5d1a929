// Application wiring: submit a report for prediction, review and correct the
// label checkboxes, save the corrections as feedback, trigger retraining and
// watch for the refreshed model.

import { ApiError, Client, ModelInfo } from "./api.js";
import { ReviewState } from "./state.js";
import { AppElements, buildSkeleton, clearBanner, renderRows, showBanner } from "./view.js";

export const RETRAIN_POLL_MS = 2000;

export class App {
  readonly state = new ReviewState();
  readonly el: AppElements;
  private pollTimer: ReturnType<typeof setInterval> | null = null;

  constructor(root: HTMLElement, readonly client: Client) {
    this.el = buildSkeleton(root);
    this.el.textInput.addEventListener("input", () => {
      this.el.submitButton.disabled = this.el.textInput.value.trim() === "";
    });
    this.el.submitButton.addEventListener("click", () => void this.submitReport());
    this.el.saveButton.addEventListener("click", () => void this.saveFeedback());
    this.el.retrainButton.addEventListener("click", () => void this.triggerRetrain());
  }

  async start(): Promise<void> {
    try {
      this.state.setTaxonomy(await this.client.taxonomy());
      this.renderModelInfo(await this.client.model());
    } catch (err) {
      showBanner(this.el.banner, `service unreachable: ${describe(err)}`);
    }
  }

  async submitReport(): Promise<void> {
    const text = this.el.textInput.value;
    if (!text.trim()) return;
    try {
      const prediction = await this.client.predict(text);
      this.state.setPrediction(text, prediction);
      clearBanner(this.el.banner);
      this.renderLists();
      this.el.saveButton.disabled = false;
      this.el.saveStatus.textContent = "";
    } catch (err) {
      // the typed-in report and any previous review stay on screen
      showBanner(this.el.banner, describe(err));
    }
  }

  renderLists(): void {
    renderRows(this.el.tacticList, this.state.rows("tactics"), (l, c) => this.onToggle(l, c));
    renderRows(this.el.techniqueList, this.state.rows("techniques"), (l, c) => this.onToggle(l, c));
  }

  private onToggle(labelId: string, checked: boolean): void {
    this.state.toggle(labelId, checked);
  }

  async saveFeedback(): Promise<void> {
    if (!this.state.prediction) return;
    try {
      const result = await this.client.feedback(this.state.feedbackPayload());
      this.state.markSaved();
      clearBanner(this.el.banner);
      this.el.saveStatus.textContent = `saved (${result.stored} reports in the training set)`;
    } catch (err) {
      showBanner(this.el.banner, describe(err));   // dirty flag stays set
    }
  }

  async triggerRetrain(): Promise<void> {
    let before: string;
    try {
      before = (await this.client.model()).trained_at;
      await this.client.retrain();
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        showBanner(this.el.banner, "retrain already running");
      } else {
        showBanner(this.el.banner, describe(err));
      }
      return;
    }
    this.el.retrainStatus.textContent = "retraining...";
    this.pollTimer = setInterval(() => void this.checkRetrain(before), RETRAIN_POLL_MS);
  }

  /** One polling step; returns true once the refreshed model is visible. */
  async checkRetrain(previousTrainedAt: string): Promise<boolean> {
    let info: ModelInfo;
    try {
      info = await this.client.model();
    } catch {
      return false;
    }
    if (info.retrain_running || info.trained_at === previousTrainedAt) {
      if (info.last_retrain_error) {
        this.stopPolling();
        this.el.retrainStatus.textContent = `retrain failed: ${info.last_retrain_error}`;
        return true;
      }
      return false;
    }
    this.stopPolling();
    this.renderModelInfo(info);
    this.el.retrainStatus.textContent = `retrained; strategy: ${info.postprocessing.strategy}`;
    return true;
  }

  private stopPolling(): void {
    if (this.pollTimer !== null) {
      clearInterval(this.pollTimer);
      this.pollTimer = null;
    }
  }

  renderModelInfo(info: ModelInfo): void {
    this.state.modelInfo = info;
    this.el.modelInfo.textContent =
      `model ${info.model_version} · post-processing: ${info.postprocessing.strategy}` +
      ` · taxonomy ${info.taxonomy_version}`;
  }
}

function describe(err: unknown): string {
  if (err instanceof ApiError) return `${err.status}: ${err.message}`;
  return err instanceof Error ? err.message : String(err);
}

declare const document: Document | undefined;

if (typeof document !== "undefined") {
  const root = document.getElementById("app");
  if (root) {
    const app = new App(root, new Client(""));
    void app.start();
  }
}
