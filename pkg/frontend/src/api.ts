/** Client for the agent's local API (HTTP bridge).
 *
 * One POST per message, binary image payloads as base64, and a server-sent
 * event stream for pushes (sync changes, live classification results, game
 * over). The UI never recomputes counts, ordering, or scores: whatever this
 * module returns is exactly what the agent said.
 */

export interface LabelInfo {
  label_id: string;
  name: string;
  raw_name: string;
  training_count: number;
  testing_count: number;
}

export interface DashboardItem {
  sample_id: string;
  label: string;
  label_name: string | null;
  digest: string;
  created_at?: number;
  tags: string[];
  predicted?: string;
  predicted_name?: string;
  correct?: boolean;
  confidence?: number[];
  model_version?: number;
  recorded_at?: number;
  user_corrected_label?: string | null;
}

export interface DashboardPage {
  split: string;
  page: number;
  page_size: number;
  total: number;
  items: DashboardItem[];
}

export interface StatsReply {
  project_id: string;
  device_id: string;
  connection: string;
  applied_seq: number;
  pending_ops: number;
  labels: Record<string, { name: string; training_count: number; testing_count: number; train_pct: number; test_pct: number }>;
  training_total: number;
  testing_total: number;
  weighted_accuracy: number | null;
  model_version: number | null;
  retrain_count: number;
  high_score: number;
}

export interface GameRoundReply {
  round: { target: string; final_confidence: number; score: number };
  rounds_played: number;
  next_target: string | null;
  over: boolean;
  total_so_far: number;
}

export interface GameSessionDoc {
  seed: number;
  rounds: { target: string; final_confidence: number; score: number }[];
  total_score: number;
  high_score: number;
}

export interface PushEvent {
  type: string;
  [key: string]: unknown;
}

export class ApiError extends Error {
  constructor(public code: string, detail: string) {
    super(`${code}: ${detail}`);
  }
}

function toBase64(bytes: Uint8Array): string {
  let binary = "";
  const chunk = 0x8000;
  for (let i = 0; i < bytes.length; i += chunk) {
    binary += String.fromCharCode(...bytes.subarray(i, i + chunk));
  }
  return btoa(binary);
}

export class ApiClient {
  constructor(public base: string) {
    this.base = base.replace(/\/$/, "");
  }

  async post<T = Record<string, unknown>>(msg: Record<string, unknown>, payload?: Uint8Array): Promise<T> {
    const body: Record<string, unknown> = { ...msg };
    if (payload) body.payload_b64 = toBase64(payload);
    const resp = await fetch(`${this.base}/api`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    const doc = await resp.json();
    if (!resp.ok) throw new ApiError(doc.code ?? "ERROR", doc.detail ?? resp.statusText);
    return doc as T;
  }

  projectInfo() {
    return this.post<{ project_id: string; device_id: string; connection: string; applied_seq: number; labels: LabelInfo[] }>({
      type: "PROJECT_INFO",
    });
  }

  addLabel(name: string) {
    return this.post<{ label_id: string }>({ type: "LABEL_ADD", name });
  }

  renameLabel(labelId: string, name: string) {
    return this.post({ type: "LABEL_RENAME", label_id: labelId, name });
  }

  deleteLabel(labelId: string) {
    return this.post({ type: "LABEL_DELETE", label_id: labelId });
  }

  capture(labelId: string, split: "training" | "testing", ppm: Uint8Array, tags: string[] = []) {
    return this.post<{ sample_id: string }>({ type: "CAPTURE", label_id: labelId, split, tags }, ppm);
  }

  deleteSample(sampleId: string) {
    return this.post({ type: "SAMPLE_DELETE", sample_id: sampleId });
  }

  relabelSample(sampleId: string, labelId: string) {
    return this.post<{ new_sample_id: string }>({ type: "SAMPLE_RELABEL", sample_id: sampleId, label_id: labelId });
  }

  retrain(seed: number) {
    return this.post<{ version: number; label_order: string[]; record_count: number; weighted_accuracy: number | null }>({
      type: "RETRAIN",
      seed,
    });
  }

  testPhoto(labelId: string, ppm: Uint8Array, tags: string[] = []) {
    return this.post<{ record: Record<string, unknown> }>({ type: "TEST_PHOTO", label_id: labelId, tags }, ppm);
  }

  dashboard(split: "training" | "testing", page: number) {
    return this.post<DashboardPage>({ type: "DASHBOARD_QUERY", split, page });
  }

  stats() {
    return this.post<StatsReply>({ type: "STATS_QUERY" });
  }

  liveStart() {
    return this.post({ type: "LIVE_START" });
  }

  liveFrame(ppm: Uint8Array) {
    return this.post<{ result: { confidences: number[]; label_order: string[]; top: string } | null }>(
      { type: "LIVE_FRAME" },
      ppm,
    );
  }

  liveStop() {
    return this.post({ type: "LIVE_STOP" });
  }

  gameStart(seed: number) {
    return this.post<{ target: string; round: number; time_limit_s: number; round_length_s: number }>({
      type: "GAME_START",
      seed,
    });
  }

  gameRound(ppm: Uint8Array) {
    return this.post<GameRoundReply>({ type: "GAME_ROUND" }, ppm);
  }

  gameEnd() {
    return this.post<{ session: GameSessionDoc }>({ type: "GAME_END" });
  }

  exportModel() {
    return this.post<{ model: string }>({ type: "EXPORT_MODEL" });
  }

  waitSynced(seq?: number, timeout = 10) {
    return this.post<{ applied_seq: number }>({ type: "WAIT_SYNCED", seq, timeout });
  }

  blobUrl(digest: string): string {
    return `${this.base}/blob/${digest}`;
  }

  async fetchBlob(digest: string): Promise<Uint8Array> {
    const resp = await fetch(this.blobUrl(digest));
    if (!resp.ok) throw new ApiError("UNKNOWN_DIGEST", digest);
    return new Uint8Array(await resp.arrayBuffer());
  }

  /** Server-sent-events subscription; returns an unsubscribe function. */
  subscribe(onEvent: (ev: PushEvent) => void, onDrop?: () => void): () => void {
    const controller = new AbortController();
    (async () => {
      try {
        const resp = await fetch(`${this.base}/api/stream`, { signal: controller.signal });
        if (!resp.ok || !resp.body) throw new Error(`stream: ${resp.status}`);
        const reader = resp.body.getReader();
        const decoder = new TextDecoder();
        let buffer = "";
        for (;;) {
          const { done, value } = await reader.read();
          if (done) break;
          buffer += decoder.decode(value, { stream: true });
          let idx;
          while ((idx = buffer.indexOf("\n\n")) >= 0) {
            const block = buffer.slice(0, idx);
            buffer = buffer.slice(idx + 2);
            for (const line of block.split("\n")) {
              if (line.startsWith("data: ")) {
                onEvent(JSON.parse(line.slice(6)) as PushEvent);
              }
            }
          }
        }
      } catch {
        // aborted or connection lost
      }
      if (!controller.signal.aborted && onDrop) onDrop();
    })();
    return () => controller.abort();
  }
}
