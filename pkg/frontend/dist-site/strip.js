/** The capture strip: most recent synced images for the active label.
 *
 * Fed exclusively from dashboard queries (agent-ordered, newest first);
 * a PROJECT_CHANGED push triggers a refetch, so other devices' images
 * appear without any manual refresh.
 */
export class CaptureStrip {
    constructor(api, labelId = null, limit = 12) {
        this.api = api;
        this.labelId = labelId;
        this.limit = limit;
        this.digests = [];
        this.generation = 0;
    }
    setLabel(labelId) {
        this.labelId = labelId;
        this.digests = [];
    }
    /** Pull the newest items for the active label from the agent. */
    async refresh() {
        const generation = ++this.generation;
        if (!this.labelId) {
            this.digests = [];
            return this.digests;
        }
        const page = await this.api.dashboard("training", 1);
        if (generation !== this.generation)
            return this.digests; // superseded
        this.digests = page.items
            .filter((item) => item.label === this.labelId)
            .slice(0, this.limit)
            .map((item) => item.digest);
        return this.digests;
    }
}
