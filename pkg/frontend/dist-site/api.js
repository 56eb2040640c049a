/** Client for the agent's local API (HTTP bridge).
 *
 * One POST per message, binary image payloads as base64, and a server-sent
 * event stream for pushes (sync changes, live classification results, game
 * over). The UI never recomputes counts, ordering, or scores: whatever this
 * module returns is exactly what the agent said.
 */
export class ApiError extends Error {
    constructor(code, detail) {
        super(`${code}: ${detail}`);
        this.code = code;
    }
}
function toBase64(bytes) {
    let binary = "";
    const chunk = 0x8000;
    for (let i = 0; i < bytes.length; i += chunk) {
        binary += String.fromCharCode(...bytes.subarray(i, i + chunk));
    }
    return btoa(binary);
}
export class ApiClient {
    constructor(base) {
        this.base = base;
        this.base = base.replace(/\/$/, "");
    }
    async post(msg, payload) {
        const body = { ...msg };
        if (payload)
            body.payload_b64 = toBase64(payload);
        const resp = await fetch(`${this.base}/api`, {
            method: "POST",
            headers: { "Content-Type": "application/json" },
            body: JSON.stringify(body),
        });
        const doc = await resp.json();
        if (!resp.ok)
            throw new ApiError(doc.code ?? "ERROR", doc.detail ?? resp.statusText);
        return doc;
    }
    projectInfo() {
        return this.post({
            type: "PROJECT_INFO",
        });
    }
    addLabel(name) {
        return this.post({ type: "LABEL_ADD", name });
    }
    renameLabel(labelId, name) {
        return this.post({ type: "LABEL_RENAME", label_id: labelId, name });
    }
    deleteLabel(labelId) {
        return this.post({ type: "LABEL_DELETE", label_id: labelId });
    }
    capture(labelId, split, ppm, tags = []) {
        return this.post({ type: "CAPTURE", label_id: labelId, split, tags }, ppm);
    }
    deleteSample(sampleId) {
        return this.post({ type: "SAMPLE_DELETE", sample_id: sampleId });
    }
    relabelSample(sampleId, labelId) {
        return this.post({ type: "SAMPLE_RELABEL", sample_id: sampleId, label_id: labelId });
    }
    retrain(seed) {
        return this.post({
            type: "RETRAIN",
            seed,
        });
    }
    testPhoto(labelId, ppm, tags = []) {
        return this.post({ type: "TEST_PHOTO", label_id: labelId, tags }, ppm);
    }
    dashboard(split, page) {
        return this.post({ type: "DASHBOARD_QUERY", split, page });
    }
    stats() {
        return this.post({ type: "STATS_QUERY" });
    }
    liveStart() {
        return this.post({ type: "LIVE_START" });
    }
    liveFrame(ppm) {
        return this.post({ type: "LIVE_FRAME" }, ppm);
    }
    liveStop() {
        return this.post({ type: "LIVE_STOP" });
    }
    gameStart(seed) {
        return this.post({
            type: "GAME_START",
            seed,
        });
    }
    gameRound(ppm) {
        return this.post({ type: "GAME_ROUND" }, ppm);
    }
    gameEnd() {
        return this.post({ type: "GAME_END" });
    }
    exportModel() {
        return this.post({ type: "EXPORT_MODEL" });
    }
    waitSynced(seq, timeout = 10) {
        return this.post({ type: "WAIT_SYNCED", seq, timeout });
    }
    blobUrl(digest) {
        return `${this.base}/blob/${digest}`;
    }
    async fetchBlob(digest) {
        const resp = await fetch(this.blobUrl(digest));
        if (!resp.ok)
            throw new ApiError("UNKNOWN_DIGEST", digest);
        return new Uint8Array(await resp.arrayBuffer());
    }
    /** Server-sent-events subscription; returns an unsubscribe function. */
    subscribe(onEvent, onDrop) {
        const controller = new AbortController();
        (async () => {
            try {
                const resp = await fetch(`${this.base}/api/stream`, { signal: controller.signal });
                if (!resp.ok || !resp.body)
                    throw new Error(`stream: ${resp.status}`);
                const reader = resp.body.getReader();
                const decoder = new TextDecoder();
                let buffer = "";
                for (;;) {
                    const { done, value } = await reader.read();
                    if (done)
                        break;
                    buffer += decoder.decode(value, { stream: true });
                    let idx;
                    while ((idx = buffer.indexOf("\n\n")) >= 0) {
                        const block = buffer.slice(0, idx);
                        buffer = buffer.slice(idx + 2);
                        for (const line of block.split("\n")) {
                            if (line.startsWith("data: ")) {
                                onEvent(JSON.parse(line.slice(6)));
                            }
                        }
                    }
                }
            }
            catch {
                // aborted or connection lost
            }
            if (!controller.signal.aborted && onDrop)
                onDrop();
        })();
        return () => controller.abort();
    }
}
