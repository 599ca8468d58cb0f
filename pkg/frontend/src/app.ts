/** Review workflow: browse the pending queue (least confident first), fix
 * tags with a category-grouped picker, submit corrections or approve items.
 *
 * Invariants the implementation maintains:
 *  - the tag picker is built from the fetched tagset and nothing else, and
 *    submit refuses any working tag outside it, so an out-of-tagset tag can
 *    never reach the server;
 *  - after every mutation the displayed item is whatever the server
 *    returned, never a local guess;
 *  - a failed refresh keeps the open item and its edits intact.
 */

import {
  ApiClient,
  ApiError,
  QueueCounters,
  ReviewItem,
  ReviewSummary,
  TagsetInfo,
} from "./api.js";

export type ConfidenceBand = "conf-low" | "conf-mid" | "conf-high";

/** Three discrete bands for fast visual triage. */
export function confidenceBand(confidence: number): ConfidenceBand {
  if (confidence < 0.5) return "conf-low";
  if (confidence < 0.9) return "conf-mid";
  return "conf-high";
}

interface AppState {
  tagset: TagsetInfo | null;
  counters: QueueCounters | null;
  queue: ReviewSummary[];
  item: ReviewItem | null;
  working: string[];
  pickerIndex: number | null;
  notice: string | null;
  errorIndex: number | null;
  connectionLost: boolean;
  busy: boolean;
}

export class AnnotatorApp {
  readonly state: AppState = {
    tagset: null,
    counters: null,
    queue: [],
    item: null,
    working: [],
    pickerIndex: null,
    notice: null,
    errorIndex: null,
    connectionLost: false,
    busy: false,
  };

  constructor(
    private readonly root: HTMLElement,
    private readonly api: ApiClient,
  ) {}

  async init(): Promise<void> {
    try {
      this.state.tagset = await this.api.tagset();
      this.state.connectionLost = false;
    } catch {
      this.state.connectionLost = true;
      this.render();
      return;
    }
    await this.refresh();
  }

  /** Reload counters and the pending list; open edits are never dropped. */
  async refresh(): Promise<void> {
    try {
      const [stats, pending] = await Promise.all([
        this.api.stats(),
        this.api.pending(),
      ]);
      this.state.counters = stats.queue;
      this.state.queue = pending.items;
      this.state.connectionLost = false;
    } catch {
      this.state.connectionLost = true;
    }
    this.render();
  }

  async open(id: string): Promise<void> {
    try {
      const item = await this.api.item(id);
      this.state.item = item;
      this.state.working = [...(item.corrected_tags ?? item.model_tags)];
      this.state.pickerIndex = null;
      this.state.errorIndex = null;
      this.state.notice = null;
    } catch (err) {
      this.state.notice = `Could not load item: ${describe(err)}`;
    }
    this.render();
  }

  /** Open the least-confident pending item, if any. */
  async openNextPending(): Promise<void> {
    const next = this.state.queue.find((s) => s.status === "pending");
    if (next) {
      await this.open(next.id);
    } else {
      this.state.item = null;
      this.state.working = [];
      this.render();
    }
  }

  allowedTags(): Set<string> {
    return new Set((this.state.tagset?.tags ?? []).map((t) => t.tag));
  }

  chooseTag(index: number, tag: string): void {
    if (!this.state.item) return;
    if (!this.allowedTags().has(tag)) return; // picker never offers these
    this.state.working[index] = tag;
    this.state.pickerIndex = null;
    this.state.errorIndex = null;
    this.render();
  }

  isDirty(): boolean {
    const item = this.state.item;
    if (!item) return false;
    const baseline = item.corrected_tags ?? item.model_tags;
    return this.state.working.some((tag, i) => tag !== baseline[i]);
  }

  async submit(): Promise<void> {
    const item = this.state.item;
    if (!item || this.state.busy) return;
    const allowed = this.allowedTags();
    const offending = this.state.working.findIndex((tag) => !allowed.has(tag));
    if (offending >= 0) {
      // unreachable through the picker; guards direct state manipulation
      this.state.errorIndex = offending;
      this.state.notice = `Tag ${this.state.working[offending]} is not in the tagset`;
      this.render();
      return;
    }
    this.state.busy = true;
    try {
      const updated = await this.api.submitCorrection(item.id, [
        ...this.state.working,
      ]);
      this.state.item = updated; // server truth
      this.state.notice = `Saved ${updated.id} as ${updated.status}`;
      await this.refresh();
      await this.openNextPending();
    } catch (err) {
      this.handleMutationError(err);
    } finally {
      this.state.busy = false;
      this.render();
    }
  }

  async approve(): Promise<void> {
    const item = this.state.item;
    if (!item || this.state.busy) return;
    this.state.busy = true;
    try {
      const updated = await this.api.approve(item.id);
      this.state.item = updated;
      this.state.notice = `Approved ${updated.id}`;
      await this.refresh();
      await this.openNextPending();
    } catch (err) {
      this.handleMutationError(err);
    } finally {
      this.state.busy = false;
      this.render();
    }
  }

  private handleMutationError(err: unknown): void {
    if (err instanceof ApiError && err.status === 422) {
      this.state.errorIndex = this.findOffendingIndex(err.message);
      this.state.notice = err.message; // edits stay in place
      return;
    }
    if (err instanceof ApiError && err.status === 409) {
      this.state.notice =
        "Item changed on the server; reloaded the current version.";
      const id = this.state.item?.id;
      if (id) {
        void this.api.item(id).then((fresh) => {
          this.state.item = fresh;
          this.state.working = [...(fresh.corrected_tags ?? fresh.model_tags)];
          this.render();
        });
      }
      return;
    }
    this.state.notice = `Request failed: ${describe(err)}`;
  }

  private findOffendingIndex(message: string): number | null {
    for (let i = 0; i < this.state.working.length; i++) {
      const tag = this.state.working[i];
      if (tag !== undefined && message.includes(`'${tag}'`)) return i;
    }
    return null;
  }

  // -- rendering ----------------------------------------------------------

  render(): void {
    this.root.replaceChildren();
    if (this.state.connectionLost) {
      this.root.append(this.renderConnectionLost());
      if (this.state.item) this.root.append(this.renderReview());
      return;
    }
    this.root.append(this.renderHeader());
    const main = el("div", "layout");
    main.append(this.renderQueue());
    if (this.state.item) main.append(this.renderReview());
    this.root.append(main);
  }

  private renderConnectionLost(): HTMLElement {
    const banner = el("div", "banner error");
    banner.append(el("span", "", "Cannot reach the review service."));
    const retry = button("Retry", "retry", () => void this.init());
    banner.append(retry);
    return banner;
  }

  private renderHeader(): HTMLElement {
    const header = el("header", "header");
    header.append(el("h1", "", "taglab review"));
    const counters = this.state.counters;
    if (counters) {
      const badges = el("div", "counters");
      for (const key of ["pending", "corrected", "approved", "total"] as const) {
        const badge = el("span", `badge badge-${key}`);
        badge.dataset.counter = key;
        badge.textContent = `${key}: ${counters[key]}`;
        badges.append(badge);
      }
      header.append(badges);
    }
    if (this.state.notice) {
      const notice = el("div", "banner notice", this.state.notice);
      header.append(notice);
    }
    return header;
  }

  private renderQueue(): HTMLElement {
    const panel = el("section", "queue-panel");
    panel.append(el("h2", "", "Pending"));
    if (this.state.queue.length === 0) {
      panel.append(el("p", "empty-state", "Nothing pending."));
      return panel;
    }
    const list = el("ul", "queue-list");
    for (const summary of this.state.queue) {
      const row = el("li", "queue-row");
      row.dataset.id = summary.id;
      const open = button(
        `${summary.preview}  (${summary.length} tokens, ` +
          `${summary.mean_confidence.toFixed(2)})`,
        "queue-open",
        () => void this.open(summary.id),
      );
      open.dataset.id = summary.id;
      row.append(open);
      list.append(row);
    }
    panel.append(list);
    return panel;
  }

  private renderReview(): HTMLElement {
    const item = this.state.item;
    const panel = el("section", "review-panel");
    if (!item) return panel;
    panel.append(el("h2", "", `Item ${item.id} (${item.status})`));

    const chips = el("div", "chips");
    item.tokens.forEach((surface, i) => {
      const confidence = item.confidences[i] ?? 0;
      const tag = this.state.working[i] ?? "";
      const baseline = (item.corrected_tags ?? item.model_tags)[i];
      const chip = button("", `chip ${confidenceBand(confidence)}`, () => {
        this.state.pickerIndex = this.state.pickerIndex === i ? null : i;
        this.render();
      });
      chip.dataset.index = String(i);
      if (tag !== baseline) chip.classList.add("edited");
      if (this.state.errorIndex === i) chip.classList.add("invalid");
      chip.append(el("span", "surface", surface));
      chip.append(el("span", "tag", tag));
      chips.append(chip);
    });
    panel.append(chips);

    if (this.state.pickerIndex !== null) {
      panel.append(this.renderPicker(this.state.pickerIndex));
    }

    const actions = el("div", "actions");
    const submit = button("Submit correction", "submit", () => void this.submit());
    submit.disabled = !this.isDirty() || this.state.busy;
    const approve = button("Approve as-is", "approve", () => void this.approve());
    approve.disabled = this.isDirty() || this.state.busy;
    actions.append(submit, approve);
    panel.append(actions);
    return panel;
  }

  /** Category-grouped picker; options come only from the fetched tagset. */
  private renderPicker(index: number): HTMLElement {
    const picker = el("div", "picker");
    picker.dataset.index = String(index);
    const tagset = this.state.tagset;
    if (!tagset) return picker;
    for (const category of tagset.categories) {
      const group = el("div", "picker-group");
      group.append(el("h3", "", category));
      for (const entry of tagset.tags) {
        if (entry.category !== category) continue;
        const option = button(entry.tag, "tag-option", () =>
          this.chooseTag(index, entry.tag),
        );
        option.dataset.tag = entry.tag;
        group.append(option);
      }
      picker.append(group);
    }
    return picker;
  }
}

function describe(err: unknown): string {
  return err instanceof Error ? err.message : String(err);
}

function el(
  name: string,
  className = "",
  text?: string,
): HTMLElement {
  const node = document.createElement(name);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function button(
  label: string,
  className: string,
  onClick: () => void,
): HTMLButtonElement {
  const node = document.createElement("button");
  node.type = "button";
  node.className = className;
  node.textContent = label;
  node.addEventListener("click", onClick);
  return node;
}
