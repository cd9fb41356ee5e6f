/**
 * Typed client for the annotation service. The UI talks to the service
 * through this module only; no other network access.
 */

export type RoundName = "error_annotation" | "categorization";

export interface TaskListItem {
  task_id: string;
  summary_id: string;
  dialogue_id: string;
  model_id: string;
  round: RoundName;
  status: "open" | "done";
}

export interface Turn {
  speaker: string;
  utterance: string;
  index: number;
}

export interface AnnotationRecord {
  seq?: number | null;
  kind: "annotation";
  summary_id: string;
  char_start: number;
  char_end: number;
  category: string | null;
  evidence_turns: number[];
  annotator_id: string;
  round: RoundName;
  no_offsets: boolean;
}

export interface TaskDetail {
  task_id: string;
  round: RoundName;
  status: "open" | "done";
  dialogue: { id: string; dataset: string; turns: Turn[] };
  summary: { id: string; text: string; model_id: string };
  existing_spans: AnnotationRecord[];
  annotations: AnnotationRecord[];
}

export interface AnnotationBody {
  char_start: number;
  char_end: number;
  category?: string | null;
  evidence_turns?: number[];
}

export interface DoneReceipt {
  task_id: string;
  annotator_id: string;
  status: "done";
}

export interface AgreementReport {
  a: string;
  b: string;
  agreement: number;
  summaries: string[];
  shared_tasks: string[];
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: Record<string, unknown>,
  ) {
    super(typeof detail.error === "string" ? detail.error : `http ${status}`);
    this.name = "ApiError";
  }
}

/** Everything the controller needs; Client is the real implementation. */
export interface ApiClient {
  readonly annotator: string;
  listTasks(round?: RoundName): Promise<TaskListItem[]>;
  getTask(taskId: string): Promise<TaskDetail>;
  postAnnotation(taskId: string, body: AnnotationBody): Promise<AnnotationRecord>;
  markDone(taskId: string): Promise<DoneReceipt>;
  agreement(a: string, b: string): Promise<AgreementReport>;
}

export class Client implements ApiClient {
  constructor(
    private readonly baseUrl: string,
    readonly annotator: string,
    private readonly fetchImpl: typeof fetch = (...args) => globalThis.fetch(...args),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const headers: Record<string, string> = { "X-Annotator": this.annotator };
    if (init?.body !== undefined) headers["Content-Type"] = "application/json";
    const response = await this.fetchImpl(this.baseUrl + path, { ...init, headers });
    if (!response.ok) {
      let detail: Record<string, unknown> = { error: "http_error", status: response.status };
      try {
        const parsed: unknown = await response.json();
        if (parsed && typeof parsed === "object" && "detail" in parsed) {
          const inner = (parsed as { detail: unknown }).detail;
          detail =
            inner && typeof inner === "object" && !Array.isArray(inner)
              ? (inner as Record<string, unknown>)
              : { error: "validation_error", raw: inner };
        }
      } catch {
        // non-JSON error body; keep the generic detail
      }
      throw new ApiError(response.status, detail);
    }
    return response.json() as Promise<T>;
  }

  listTasks(round?: RoundName): Promise<TaskListItem[]> {
    const query = round ? `?round=${encodeURIComponent(round)}` : "";
    return this.request(`/tasks${query}`);
  }

  getTask(taskId: string): Promise<TaskDetail> {
    return this.request(`/tasks/${encodeURIComponent(taskId)}`);
  }

  postAnnotation(taskId: string, body: AnnotationBody): Promise<AnnotationRecord> {
    return this.request(`/tasks/${encodeURIComponent(taskId)}/annotations`, {
      method: "POST",
      body: JSON.stringify(body),
    });
  }

  markDone(taskId: string): Promise<DoneReceipt> {
    return this.request(`/tasks/${encodeURIComponent(taskId)}/done`, { method: "POST" });
  }

  agreement(a: string, b: string): Promise<AgreementReport> {
    return this.request(`/agreement?a=${encodeURIComponent(a)}&b=${encodeURIComponent(b)}`);
  }
}
