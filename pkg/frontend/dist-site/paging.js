/** Dashboard paging arithmetic. The page size is the agent's contract (25):
 * the UI never re-slices, it only derives pager labels from the reply. */
export const PAGE_SIZE = 25;
export function pageCount(total, pageSize = PAGE_SIZE) {
    return Math.max(1, Math.ceil(total / pageSize));
}
export function pageWindow(page, total, pageSize = PAGE_SIZE) {
    if (total === 0)
        return { from: 0, to: 0 };
    const from = (page - 1) * pageSize + 1;
    return { from, to: Math.min(page * pageSize, total) };
}
export function clampPage(page, total, pageSize = PAGE_SIZE) {
    return Math.min(Math.max(1, page), pageCount(total, pageSize));
}
