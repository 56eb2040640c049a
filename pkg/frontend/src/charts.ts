/** Tiny DOM bar chart for confidence vectors; no chart library needed. */

export function renderBarChart(
  el: HTMLElement,
  rows: { name: string; value: number; highlight?: boolean }[],
): void {
  el.innerHTML = "";
  el.classList.add("barchart");
  for (const row of rows) {
    const line = document.createElement("div");
    line.className = "bar-row" + (row.highlight ? " bar-top" : "");
    const label = document.createElement("span");
    label.className = "bar-label";
    label.textContent = row.name;
    const track = document.createElement("div");
    track.className = "bar-track";
    const fill = document.createElement("div");
    fill.className = "bar-fill";
    fill.style.width = `${Math.round(row.value * 100)}%`;
    track.appendChild(fill);
    const pct = document.createElement("span");
    pct.className = "bar-pct";
    pct.textContent = `${(row.value * 100).toFixed(0)}%`;
    line.append(label, track, pct);
    el.appendChild(line);
  }
}
