/**
 * Session state and actions. The server is the source of truth: every
 * successful write is followed by a re-fetch, and highlights render only
 * from fetched state, never from local echoes.
 */

import {
  AgreementReport,
  AnnotationBody,
  ApiClient,
  ApiError,
  RoundName,
  TaskDetail,
  TaskListItem,
} from "./api.js";
import { Span, snapToTokens } from "./snapping.js";

export type Status =
  | { kind: "idle" }
  | { kind: "error"; message: string }
  | { kind: "offline" };

export function describeApiError(err: ApiError): string {
  const d = err.detail;
  switch (d.error) {
    case "invalid_offsets":
      return `span [${d.char_start}, ${d.char_end}) is outside the summary (length ${d.summary_length})`;
    case "invalid_evidence_turns":
      return `evidence turns ${JSON.stringify(d.turns)} are not in the dialogue (${d.dialogue_turns} turns)`;
    case "category_required":
      return "this round requires a category on every span";
    case "unknown_category":
      return `unknown category ${String(d.category)}`;
    case "annotator_required":
      return "set an annotator identity first";
    case "unknown_task":
      return `unknown task ${String(d.task_id)}`;
    case "no_shared_completed_tasks":
      return "these annotators share no completed tasks yet";
    default:
      return err.message;
  }
}

export class SessionController {
  tasks: TaskListItem[] = [];
  roundFilter: RoundName | undefined;
  detail: TaskDetail | null = null;
  selection: Span | null = null;
  category: string | null = null;
  categoryOptIn = false;
  evidence = new Set<number>();
  status: Status = { kind: "idle" };
  agreementReport: AgreementReport | null = null;
  agreementError: string | null = null;
  onChange: () => void = () => {};

  private lastAction: (() => Promise<void>) | null = null;

  constructor(readonly client: ApiClient) {}

  private notify(): void {
    this.onChange();
  }

  /** Run a server action; failures become banner state, never local edits. */
  private async guard(action: () => Promise<void>): Promise<void> {
    this.lastAction = action;
    try {
      await action();
      this.status = { kind: "idle" };
    } catch (err) {
      this.status =
        err instanceof ApiError
          ? { kind: "error", message: describeApiError(err) }
          : { kind: "offline" };
    }
    this.notify();
  }

  async retry(): Promise<void> {
    if (this.lastAction) await this.guard(this.lastAction);
  }

  async loadTasks(round?: RoundName): Promise<void> {
    this.roundFilter = round;
    await this.guard(async () => {
      this.tasks = await this.client.listTasks(round);
    });
  }

  async openTask(taskId: string): Promise<void> {
    await this.guard(async () => {
      this.detail = await this.client.getTask(taskId);
      this.selection = null;
      this.category = null;
      this.evidence = new Set();
    });
  }

  async openNext(): Promise<void> {
    if (!this.tasks.length) return;
    const current = this.detail
      ? this.tasks.findIndex((t) => t.task_id === this.detail?.task_id)
      : -1;
    const ordered = [...this.tasks.slice(current + 1), ...this.tasks.slice(0, current + 1)];
    const next = ordered.find((t) => t.status === "open") ?? ordered[0];
    if (next) await this.openTask(next.task_id);
  }

  select(anchor: number, focus: number): void {
    if (!this.detail) return;
    this.selection = snapToTokens(this.detail.summary.text, anchor, focus);
    this.notify();
  }

  toggleEvidence(index: number): void {
    if (this.evidence.has(index)) this.evidence.delete(index);
    else this.evidence.add(index);
    this.notify();
  }

  setCategory(category: string | null): void {
    this.category = category;
    this.notify();
  }

  setCategoryOptIn(value: boolean): void {
    this.categoryOptIn = value;
    if (!value && this.detail?.round !== "categorization") this.category = null;
    this.notify();
  }

  categoryRequired(): boolean {
    return this.detail?.round === "categorization";
  }

  categoryEnabled(): boolean {
    return this.categoryRequired() || this.categoryOptIn;
  }

  canSubmit(): boolean {
    return (
      this.detail !== null &&
      this.selection !== null &&
      (!this.categoryRequired() || this.category !== null)
    );
  }

  async submit(): Promise<void> {
    if (!this.canSubmit() || !this.detail || !this.selection) return;
    const taskId = this.detail.task_id;
    const body: AnnotationBody = {
      char_start: this.selection.start,
      char_end: this.selection.end,
      category: this.categoryEnabled() ? this.category : null,
      evidence_turns: [...this.evidence].sort((a, b) => a - b),
    };
    await this.guard(async () => {
      await this.client.postAnnotation(taskId, body);
      this.detail = await this.client.getTask(taskId);
      this.selection = null;
      this.evidence = new Set();
    });
  }

  async markDone(): Promise<void> {
    if (!this.detail) return;
    const taskId = this.detail.task_id;
    await this.guard(async () => {
      await this.client.markDone(taskId);
      this.detail = await this.client.getTask(taskId);
      this.tasks = await this.client.listTasks(this.roundFilter);
    });
  }

  async refreshAgreement(a: string, b: string): Promise<void> {
    try {
      this.agreementReport = await this.client.agreement(a, b);
      this.agreementError = null;
    } catch (err) {
      this.agreementReport = null;
      this.agreementError =
        err instanceof ApiError ? describeApiError(err) : "service unreachable";
    }
    this.notify();
  }
}
