/**
 * DOM rendering and event wiring. The view is a pure function of the
 * controller's state; render() rebuilds every dynamic region, so nothing
 * on screen can drift from what the server acknowledged.
 */

import { cpLength, cpSlice, unitToPoint } from "./snapping.js";
import { SessionController } from "./state.js";

export const CATEGORIES: ReadonlyArray<{ value: string; label: string; help: string }> = [
  {
    value: "circumstantial_inference",
    label: "Circumstantial inference",
    help: "Plausible but unsupported guess about circumstances such as time, place, or manner.",
  },
  {
    value: "logical_error",
    label: "Logical error",
    help: "Contradicts what the dialogue supports: wrong negation, subject, or object.",
  },
  {
    value: "world_knowledge",
    label: "World knowledge",
    help: "Leans on outside knowledge or assumptions the dialogue never states.",
  },
  {
    value: "referential_error",
    label: "Referential error",
    help: "Pronoun or name resolved to the wrong person or thing.",
  },
  {
    value: "figurative_misinterpretation",
    label: "Figurative misinterpretation",
    help: "Idiom, sarcasm, or figurative speech taken literally, or the reverse.",
  },
  {
    value: "nonsensical",
    label: "Nonsensical",
    help: "Ungrammatical, meaningless, or unrelated to the dialogue.",
  },
];

interface Region {
  span: { start: number; end: number };
  cls: string;
}

export class View {
  private readonly doc: Document;
  private readonly banner: HTMLElement;
  private readonly annotatorEl: HTMLElement;
  private readonly taskList: HTMLElement;
  private readonly roundEl: HTMLElement;
  private readonly dialogueEl: HTMLElement;
  private readonly summaryEl: HTMLElement;
  private readonly selectionEl: HTMLElement;
  private readonly paletteEl: HTMLElement;
  private readonly optInLabel: HTMLElement;
  private readonly optIn: HTMLInputElement;
  private readonly submitBtn: HTMLButtonElement;
  private readonly doneBtn: HTMLButtonElement;
  private readonly agreementA: HTMLInputElement;
  private readonly agreementB: HTMLInputElement;
  private readonly agreementRun: HTMLButtonElement;
  private readonly agreementResult: HTMLElement;

  constructor(
    root: HTMLElement,
    private readonly controller: SessionController,
  ) {
    this.doc = root.ownerDocument;
    const d = this.doc;

    const header = d.createElement("header");
    const title = d.createElement("h1");
    title.textContent = "Summary faithfulness annotation";
    this.annotatorEl = d.createElement("span");
    this.annotatorEl.dataset.role = "annotator";
    header.append(title, this.annotatorEl);

    this.banner = d.createElement("div");
    this.banner.dataset.role = "banner";
    this.banner.hidden = true;

    this.taskList = d.createElement("nav");
    this.taskList.dataset.role = "task-list";

    this.roundEl = d.createElement("div");
    this.roundEl.dataset.role = "round";

    this.dialogueEl = d.createElement("div");
    this.dialogueEl.dataset.role = "dialogue";

    this.summaryEl = d.createElement("div");
    this.summaryEl.dataset.role = "summary";
    this.summaryEl.addEventListener("mouseup", () => this.captureSelection());

    this.selectionEl = d.createElement("div");
    this.selectionEl.dataset.role = "selection";

    this.paletteEl = d.createElement("div");
    this.paletteEl.dataset.role = "category-palette";
    for (const cat of CATEGORIES) {
      const btn = d.createElement("button");
      btn.dataset.role = "category";
      btn.dataset.category = cat.value;
      btn.textContent = cat.label;
      btn.title = cat.help;
      btn.addEventListener("click", () => {
        const next = this.controller.category === cat.value ? null : cat.value;
        this.controller.setCategory(next);
      });
      this.paletteEl.append(btn);
    }

    this.optIn = d.createElement("input");
    this.optIn.type = "checkbox";
    this.optIn.dataset.role = "category-optin";
    this.optIn.addEventListener("change", () => {
      this.controller.setCategoryOptIn(this.optIn.checked);
    });
    this.optInLabel = d.createElement("label");
    this.optInLabel.append(this.optIn, d.createTextNode(" add a category (optional this round)"));

    this.submitBtn = d.createElement("button");
    this.submitBtn.dataset.role = "submit";
    this.submitBtn.textContent = "Submit span";
    this.submitBtn.addEventListener("click", () => {
      void this.controller.submit();
    });

    this.doneBtn = d.createElement("button");
    this.doneBtn.dataset.role = "done";
    this.doneBtn.textContent = "Mark task done";
    this.doneBtn.addEventListener("click", () => {
      void this.controller.markDone();
    });

    this.agreementA = d.createElement("input");
    this.agreementA.dataset.role = "agreement-a";
    this.agreementB = d.createElement("input");
    this.agreementB.dataset.role = "agreement-b";
    this.agreementRun = d.createElement("button");
    this.agreementRun.dataset.role = "agreement-run";
    this.agreementRun.textContent = "Compute agreement";
    this.agreementRun.addEventListener("click", () => {
      void this.controller.refreshAgreement(this.agreementA.value, this.agreementB.value);
    });
    this.agreementResult = d.createElement("div");
    this.agreementResult.dataset.role = "agreement-result";
    const agreementPanel = d.createElement("section");
    agreementPanel.dataset.role = "agreement";
    agreementPanel.append(this.agreementA, this.agreementB, this.agreementRun, this.agreementResult);

    const work = d.createElement("section");
    work.append(
      this.roundEl,
      this.dialogueEl,
      this.summaryEl,
      this.selectionEl,
      this.paletteEl,
      this.optInLabel,
      this.submitBtn,
      this.doneBtn,
      agreementPanel,
    );

    const layout = d.createElement("main");
    layout.append(this.taskList, work);
    root.append(header, this.banner, layout);

    this.controller.onChange = () => this.render();
    this.render();
  }

  render(): void {
    const c = this.controller;
    this.annotatorEl.textContent = c.client.annotator;
    this.renderBanner();
    this.renderTasks();
    this.renderDialogue();
    this.renderSummary();

    this.roundEl.textContent = c.detail
      ? `round: ${c.detail.round} (${c.detail.status})`
      : "no task open";

    this.selectionEl.textContent = c.selection
      ? `selected [${c.selection.start}, ${c.selection.end}): ${JSON.stringify(
          cpSlice(c.detail?.summary.text ?? "", c.selection.start, c.selection.end),
        )}`
      : "no selection";

    const enabled = c.categoryEnabled();
    for (const btn of this.paletteEl.querySelectorAll<HTMLButtonElement>("button")) {
      btn.disabled = !enabled;
      btn.classList.toggle("active", c.category === btn.dataset.category);
    }
    this.optInLabel.hidden = c.categoryRequired() || !c.detail;
    this.optIn.checked = c.categoryOptIn;

    this.submitBtn.disabled = !c.canSubmit();
    this.doneBtn.disabled = !c.detail || c.detail.status === "done";

    if (c.agreementReport) {
      const r = c.agreementReport;
      this.agreementResult.textContent = `agreement ${r.agreement} over ${r.summaries.length} summaries`;
    } else {
      this.agreementResult.textContent = c.agreementError ?? "";
    }
  }

  private renderBanner(): void {
    const status = this.controller.status;
    this.banner.replaceChildren();
    this.banner.hidden = status.kind === "idle";
    this.banner.className = status.kind === "idle" ? "" : `banner ${status.kind}`;
    if (status.kind === "error") {
      this.banner.append(this.doc.createTextNode(status.message));
    } else if (status.kind === "offline") {
      this.banner.append(this.doc.createTextNode("service unreachable; nothing was saved "));
      const retry = this.doc.createElement("button");
      retry.dataset.role = "retry";
      retry.textContent = "Retry";
      retry.addEventListener("click", () => {
        void this.controller.retry();
      });
      this.banner.append(retry);
    }
  }

  private renderTasks(): void {
    this.taskList.replaceChildren();
    for (const task of this.controller.tasks) {
      const btn = this.doc.createElement("button");
      btn.dataset.role = "task";
      btn.dataset.taskId = task.task_id;
      btn.textContent = `${task.task_id} [${task.status}]`;
      btn.classList.toggle("active", this.controller.detail?.task_id === task.task_id);
      btn.classList.toggle("done", task.status === "done");
      btn.addEventListener("click", () => {
        void this.controller.openTask(task.task_id);
      });
      this.taskList.append(btn);
    }
  }

  private renderDialogue(): void {
    this.dialogueEl.replaceChildren();
    const detail = this.controller.detail;
    if (!detail) return;
    for (const turn of detail.dialogue.turns) {
      const item = this.doc.createElement("div");
      item.dataset.role = "turn";
      item.dataset.index = String(turn.index);
      item.classList.add("turn");
      item.classList.toggle("evidence", this.controller.evidence.has(turn.index));
      const speaker = this.doc.createElement("strong");
      speaker.textContent = `${turn.speaker}: `;
      item.append(speaker, this.doc.createTextNode(turn.utterance));
      item.addEventListener("click", () => this.controller.toggleEvidence(turn.index));
      this.dialogueEl.append(item);
    }
  }

  /** Split the summary at every span boundary and class each segment. */
  private renderSummary(): void {
    this.summaryEl.replaceChildren();
    const detail = this.controller.detail;
    if (!detail) return;
    const text = detail.summary.text;
    const length = cpLength(text);

    const regions: Region[] = [];
    for (const ann of detail.annotations) {
      if (ann.no_offsets || ann.char_start === null) continue;
      regions.push({ span: { start: ann.char_start, end: ann.char_end }, cls: "highlight" });
    }
    for (const ann of detail.existing_spans) {
      if (ann.no_offsets || ann.char_start === null) continue;
      regions.push({ span: { start: ann.char_start, end: ann.char_end }, cls: "existing" });
    }
    if (this.controller.selection) {
      regions.push({ span: this.controller.selection, cls: "selecting" });
    }

    const cuts = new Set<number>([0, length]);
    for (const region of regions) {
      cuts.add(Math.max(0, Math.min(length, region.span.start)));
      cuts.add(Math.max(0, Math.min(length, region.span.end)));
    }
    const sorted = [...cuts].sort((a, b) => a - b);
    for (let i = 0; i + 1 < sorted.length; i++) {
      const [start, end] = [sorted[i], sorted[i + 1]];
      if (start === end) continue;
      const seg = this.doc.createElement("span");
      seg.dataset.start = String(start);
      seg.dataset.end = String(end);
      for (const region of regions) {
        if (region.span.start < end && start < region.span.end) {
          seg.classList.add(region.cls);
        }
      }
      seg.textContent = cpSlice(text, start, end);
      this.summaryEl.append(seg);
    }
  }

  /** Translate the browser selection into code point offsets and snap. */
  private captureSelection(): void {
    const detail = this.controller.detail;
    if (!detail) return;
    const sel = this.doc.getSelection();
    if (!sel || sel.rangeCount === 0 || !sel.anchorNode || !sel.focusNode) return;
    const anchor = this.unitOffsetWithin(sel.anchorNode, sel.anchorOffset);
    const focus = this.unitOffsetWithin(sel.focusNode, sel.focusOffset);
    if (anchor === null || focus === null) return;
    const text = detail.summary.text;
    this.controller.select(unitToPoint(text, anchor), unitToPoint(text, focus));
  }

  /** UTF-16 offset of (node, offset) within the summary element, or null. */
  private unitOffsetWithin(node: Node, offset: number): number | null {
    if (!this.summaryEl.contains(node)) return null;
    const range = this.doc.createRange();
    range.selectNodeContents(this.summaryEl);
    range.setEnd(node, offset);
    return range.toString().length;
  }
}
