/** Typed client for the annotation service HTTP API. */

export interface Progress {
  done: number;
  total: number;
}

export interface Assignment {
  done: false;
  item_id: string;
  chart_url: string;
  responses: [string, string];
  axes: string[];
  progress: Progress;
}

export interface StudyDone {
  done: true;
  progress: Progress;
}

export type AssignmentResponse = Assignment | StudyDone;

export type ScoreBlock = Record<string, number>;

export interface RatingPayload {
  item_id: string;
  annotator_id: string;
  scores: {
    response_1: ScoreBlock;
    response_2: ScoreBlock;
  };
}

export interface SubmitResult {
  status: number;
  body: unknown;
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(message: string, readonly status: number) {
    super(message);
  }
}

export class ApiClient {
  private readonly fetchFn: FetchLike;

  constructor(
    private readonly baseUrl: string = "",
    fetchFn?: FetchLike,
  ) {
    this.fetchFn = fetchFn ?? ((input, init) => fetch(input, init));
  }

  private url(path: string): string {
    return `${this.baseUrl}${path}`;
  }

  async assignment(annotatorId: string): Promise<AssignmentResponse> {
    const resp = await this.fetchFn(
      this.url(`/api/assignment?annotator=${encodeURIComponent(annotatorId)}`),
    );
    if (!resp.ok) {
      throw new ApiError(`assignment fetch failed (${resp.status})`, resp.status);
    }
    return (await resp.json()) as AssignmentResponse;
  }

  /** POST a rating; 409 (already stored) is a result, not an error. */
  async submitRating(payload: RatingPayload): Promise<SubmitResult> {
    const resp = await this.fetchFn(this.url("/api/ratings"), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(payload),
    });
    let body: unknown = null;
    try {
      body = await resp.json();
    } catch {
      body = null;
    }
    return { status: resp.status, body };
  }

  async stats(): Promise<unknown> {
    const resp = await this.fetchFn(this.url("/api/stats"));
    if (!resp.ok) {
      throw new ApiError(`stats fetch failed (${resp.status})`, resp.status);
    }
    return resp.json();
  }
}
