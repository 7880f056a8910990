/** Thin typed client for the review service; fetch is injectable for tests. */
export class ApiError extends Error {
    constructor(status, message) {
        super(message);
        this.status = status;
        this.name = "ApiError";
    }
}
export class ReviewApi {
    constructor(baseUrl = "", fetchFn = fetch) {
        this.baseUrl = baseUrl;
        this.fetchFn = fetchFn;
    }
    async request(path, init) {
        let response;
        try {
            response = await this.fetchFn(`${this.baseUrl}${path}`, init);
        }
        catch (err) {
            throw new Error(`network failure: ${String(err)}`);
        }
        if (!response.ok) {
            let detail = response.statusText;
            try {
                const body = (await response.json());
                if (body.error)
                    detail = body.error;
            }
            catch {
                // non-JSON error body; keep the status text
            }
            throw new ApiError(response.status, detail);
        }
        return response;
    }
    async listPairs(params = {}) {
        const query = new URLSearchParams();
        if (params.status)
            query.set("status", params.status);
        if (params.limit !== undefined)
            query.set("limit", String(params.limit));
        if (params.cursor)
            query.set("cursor", params.cursor);
        const suffix = query.toString() ? `?${query.toString()}` : "";
        const response = await this.request(`/api/pairs${suffix}`);
        return (await response.json());
    }
    /** Follow pagination cursors until the queue for a status is exhausted. */
    async listAllPairs(status, pageSize = 100) {
        const first = await this.listPairs({ status, limit: pageSize });
        const records = [...first.records];
        let cursor = first.next_cursor;
        let counts = first.counts;
        while (cursor !== null) {
            const page = await this.listPairs({ status, limit: pageSize, cursor });
            records.push(...page.records);
            cursor = page.next_cursor;
            counts = page.counts;
        }
        return { records, next_cursor: null, counts };
    }
    async postVerdict(synthId, decision, reviewer) {
        await this.request(`/api/pairs/${synthId}/verdict`, {
            method: "POST",
            headers: { "Content-Type": "application/json" },
            body: JSON.stringify({ decision, reviewer }),
        });
    }
}
