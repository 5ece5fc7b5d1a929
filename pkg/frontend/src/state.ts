// Review-session state: the current prediction, the analyst's checkbox
// overrides and the dirty flag. The feedback payload is always exactly the
// set of checked labels at the moment of saving.

import type { PredictResponse, TaxonomyResponse, FeedbackPayload, ModelInfo } from "./api.js";

export interface ReviewRow {
  labelId: string;
  name: string;
  confidence: number;
  checked: boolean;
}

export type Scope = "tactics" | "techniques";

export class ReviewState {
  text = "";
  prediction: PredictResponse | null = null;
  taxonomy: TaxonomyResponse | null = null;
  modelInfo: ModelInfo | null = null;
  dirty = false;
  private overrides = new Map<string, boolean>();

  setTaxonomy(taxonomy: TaxonomyResponse): void {
    this.taxonomy = taxonomy;
  }

  setPrediction(text: string, prediction: PredictResponse): void {
    this.text = text;
    this.prediction = prediction;
    this.overrides.clear();
    this.dirty = false;
  }

  /**
   * One row per taxonomy label, sorted by confidence descending (name as the
   * tie-break). Labels the model does not score show up with confidence 0 so
   * the analyst can still check them.
   */
  rows(scope: Scope): ReviewRow[] {
    if (!this.taxonomy) return [];
    const predicted = new Map(
      (this.prediction ? this.prediction[scope] : []).map((p) => [p.label_id, p]),
    );
    const labels = scope === "tactics" ? this.taxonomy.tactics : this.taxonomy.techniques;
    const rows = labels.map((label) => {
      const p = predicted.get(label.id);
      const decided = p ? p.decided : false;
      return {
        labelId: label.id,
        name: label.name,
        confidence: p ? p.confidence : 0,
        checked: this.overrides.get(label.id) ?? decided,
      };
    });
    rows.sort((a, b) => b.confidence - a.confidence || a.name.localeCompare(b.name));
    return rows;
  }

  toggle(labelId: string, checked: boolean): void {
    if (!this.knownLabel(labelId)) {
      throw new Error(`unknown label ${labelId}`);
    }
    this.overrides.set(labelId, checked);
    this.dirty = true;
  }

  private knownLabel(labelId: string): boolean {
    if (!this.taxonomy) return false;
    return (
      this.taxonomy.tactics.some((t) => t.id === labelId) ||
      this.taxonomy.techniques.some((t) => t.id === labelId)
    );
  }

  checkedLabels(scope: Scope): string[] {
    return this.rows(scope)
      .filter((r) => r.checked)
      .map((r) => r.labelId)
      .sort();
  }

  feedbackPayload(): FeedbackPayload {
    return {
      text: this.text,
      tactics: this.checkedLabels("tactics"),
      techniques: this.checkedLabels("techniques"),
    };
  }

  markSaved(): void {
    this.dirty = false;
  }
}

export function formatConfidence(confidence: number): string {
  return `${(100 * confidence).toFixed(1)}%`;
}
