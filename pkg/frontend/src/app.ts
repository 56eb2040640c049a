/** DOM wiring for the whole single-page app.
 *
 * Layout: label rail (with live counts), capture panel (camera + file drop +
 * the synced capture strip), training/testing dashboards (25 per page),
 * live classification, and the game screen. All numbers shown come from
 * agent replies verbatim.
 */

import { ApiClient, DashboardItem, DashboardPage, LabelInfo, PushEvent } from "./api.js";
import { decodeImageFile, grabFrame, openWebcam } from "./camera.js";
import { renderBarChart } from "./charts.js";
import { GameModel } from "./game.js";
import { clampPage, pageCount, pageWindow } from "./paging.js";
import { decodePPM, encodePPM, rgbToRgba } from "./ppm.js";
import { CaptureStrip } from "./strip.js";

function el<K extends keyof HTMLElementTagNameMap>(tag: K, cls?: string, text?: string): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (cls) node.className = cls;
  if (text !== undefined) node.textContent = text;
  return node;
}

async function drawThumb(api: ApiClient, digest: string, size = 72): Promise<HTMLCanvasElement> {
  const canvas = el("canvas", "thumb");
  canvas.width = size;
  canvas.height = size;
  try {
    const image = decodePPM(await api.fetchBlob(digest));
    const off = document.createElement("canvas");
    off.width = image.width;
    off.height = image.height;
    const imageData = new ImageData(image.width, image.height);
    imageData.data.set(rgbToRgba(image));
    off.getContext("2d")!.putImageData(imageData, 0, 0);
    canvas.getContext("2d")!.drawImage(off, 0, 0, size, size);
  } catch {
    canvas.getContext("2d")!.fillStyle = "#eee";
    canvas.getContext("2d")!.fillRect(0, 0, size, size);
  }
  return canvas;
}

export class App {
  private labels: LabelInfo[] = [];
  private activeLabel: string | null = null;
  private split: "training" | "testing" = "training";
  private page = 1;
  private strip: CaptureStrip;
  private game: GameModel;
  private liveOn = false;
  private liveTimer: number | null = null;
  private gameTimers: number[] = [];
  private video!: HTMLVideoElement;
  private root!: HTMLElement;

  constructor(private api: ApiClient) {
    this.strip = new CaptureStrip(api);
    this.game = new GameModel(api);
  }

  async mount(root: HTMLElement) {
    this.root = root;
    root.innerHTML = `
      <header>
        <h1>co:ml</h1>
        <span id="conn" class="pill">connecting…</span>
        <span id="proj" class="muted"></span>
      </header>
      <div id="banner" class="banner hidden"></div>
      <main>
        <aside id="labels-pane">
          <h2>Labels</h2>
          <ul id="label-list"></ul>
          <form id="label-form"><input id="label-name" placeholder="new label"/><button>add</button></form>
          <div id="stats-box" class="muted"></div>
        </aside>
        <section id="capture-pane">
          <h2>Capture</h2>
          <video id="cam" muted playsinline></video>
          <div class="row">
            <select id="split"><option value="training">training</option><option value="testing">testing</option></select>
            <input id="tags" placeholder="tags (comma separated)"/>
            <button id="snap" disabled>capture</button>
          </div>
          <div id="drop" class="drop">…or drop image files here</div>
          <h3>Recently added (all devices)</h3>
          <div id="strip" class="strip"></div>
        </section>
        <section id="dash-pane">
          <h2>
            <button id="tab-training" class="tab active">Training Data</button>
            <button id="tab-testing" class="tab">Testing Data</button>
          </h2>
          <div id="dash-meta" class="muted"></div>
          <div id="grid" class="grid"></div>
          <div class="row">
            <button id="prev">&lt;</button><span id="pageinfo"></span><button id="next">&gt;</button>
            <button id="retrain" class="primary">Train Model</button>
            <span id="accuracy" class="muted"></span>
          </div>
          <div id="detail" class="hidden"></div>
        </section>
        <section id="side-pane">
          <h2>Live Classification</h2>
          <button id="live-toggle">start live</button>
          <div id="live-chart"></div>
          <h2>Game</h2>
          <button id="game-start">play (90s)</button>
          <div id="game-box" class="hidden">
            <div class="game-target">show: <b id="game-target"></b></div>
            <div class="muted"><span id="game-clock"></span> · round <span id="game-round"></span> · <span id="game-roundclock"></span>s</div>
            <div>total so far: <b id="game-total"></b></div>
          </div>
          <div id="game-over" class="hidden"></div>
        </section>
      </main>`;

    this.video = root.querySelector("#cam")!;
    const stream = await openWebcam(this.video);
    (root.querySelector("#snap") as HTMLButtonElement).disabled = stream === null;

    root.querySelector("#label-form")!.addEventListener("submit", (e) => {
      e.preventDefault();
      this.addLabel();
    });
    root.querySelector("#snap")!.addEventListener("click", () => this.captureFromCamera());
    const drop = root.querySelector("#drop")!;
    drop.addEventListener("dragover", (e) => e.preventDefault());
    drop.addEventListener("drop", (e) => this.captureFromDrop(e as DragEvent));
    root.querySelector("#tab-training")!.addEventListener("click", () => this.switchSplit("training"));
    root.querySelector("#tab-testing")!.addEventListener("click", () => this.switchSplit("testing"));
    root.querySelector("#prev")!.addEventListener("click", () => this.turnPage(-1));
    root.querySelector("#next")!.addEventListener("click", () => this.turnPage(1));
    root.querySelector("#retrain")!.addEventListener("click", () => this.retrain());
    root.querySelector("#live-toggle")!.addEventListener("click", () => this.toggleLive());
    root.querySelector("#game-start")!.addEventListener("click", () => this.startGame());

    this.api.subscribe(
      (ev) => this.onPush(ev),
      () => this.setConnection("offline"),
    );

    const info = await this.api.projectInfo();
    (root.querySelector("#proj") as HTMLElement).textContent = `project ${info.project_id?.slice(0, 8)} · device ${info.device_id.slice(0, 8)}`;
    this.setConnection(info.connection);
    await this.refreshAll();
  }

  private setConnection(state: string) {
    const pill = this.root.querySelector("#conn") as HTMLElement;
    pill.textContent = state;
    pill.classList.toggle("ok", state === "live");
    const banner = this.root.querySelector("#banner") as HTMLElement;
    if (state === "live") {
      banner.classList.add("hidden");
    } else {
      banner.classList.remove("hidden");
      banner.textContent = "connection lost — captures are queued on this device and sync on reconnect";
    }
  }

  private onPush(ev: PushEvent) {
    if (ev.type === "PROJECT_CHANGED") {
      void this.refreshLabels();
      void this.refreshDashboard();
      void this.refreshStrip();
    } else if (ev.type === "MODEL_CHANGED") {
      void this.refreshDashboard();
      void this.refreshStats();
    } else if (ev.type === "LIVE_RESULT" && this.liveOn) {
      this.renderLive(ev as unknown as { confidences: number[]; label_order: string[]; top: string });
    } else if (ev.type === "CONNECTION") {
      this.setConnection(ev.state as string);
    }
  }

  private async refreshAll() {
    await this.refreshLabels();
    await this.refreshDashboard();
    await this.refreshStrip();
    await this.refreshStats();
  }

  // ---- labels ----

  private async refreshLabels() {
    const info = await this.api.projectInfo();
    this.labels = info.labels;
    if (this.activeLabel && !this.labels.some((l) => l.label_id === this.activeLabel)) this.activeLabel = null;
    if (!this.activeLabel && this.labels.length) this.activeLabel = this.labels[0].label_id;
    this.strip.setLabel(this.activeLabel);
    const list = this.root.querySelector("#label-list")!;
    list.innerHTML = "";
    for (const label of this.labels) {
      const li = el("li", label.label_id === this.activeLabel ? "active" : "");
      const name = el("span", "label-name", label.name);
      const badge = el("span", "badge", `${label.training_count}/${label.testing_count}`);
      badge.title = "training/testing images";
      li.append(name, badge);
      li.addEventListener("click", () => {
        this.activeLabel = label.label_id;
        void this.refreshLabels();
        void this.refreshStrip();
      });
      const rename = el("button", "mini", "✎");
      rename.addEventListener("click", async (e) => {
        e.stopPropagation();
        const next = prompt("rename label", label.name);
        if (next) {
          await this.api.renameLabel(label.label_id, next);
          await this.refreshLabels();
        }
      });
      const del = el("button", "mini", "✕");
      del.addEventListener("click", async (e) => {
        e.stopPropagation();
        if (confirm(`delete label "${label.name}" and all its images?`)) {
          await this.api.deleteLabel(label.label_id);
          await this.refreshAll();
        }
      });
      li.append(rename, del);
      list.appendChild(li);
    }
  }

  private async addLabel() {
    const input = this.root.querySelector("#label-name") as HTMLInputElement;
    if (!input.value.trim()) return;
    const { label_id } = await this.api.addLabel(input.value.trim());
    input.value = "";
    this.activeLabel = label_id;
    await this.refreshLabels();
  }

  // ---- capture ----

  private currentTags(): string[] {
    const raw = (this.root.querySelector("#tags") as HTMLInputElement).value;
    return raw.split(",").map((t) => t.trim()).filter(Boolean);
  }

  private async captureFromCamera() {
    if (!this.activeLabel) {
      alert("add a label first");
      return;
    }
    const frame = grabFrame(this.video);
    if (!frame) return;
    const split = (this.root.querySelector("#split") as HTMLSelectElement).value as "training" | "testing";
    await this.api.capture(this.activeLabel, split, encodePPM(frame), this.currentTags());
  }

  private async captureFromDrop(e: DragEvent) {
    e.preventDefault();
    if (!this.activeLabel || !e.dataTransfer) return;
    const split = (this.root.querySelector("#split") as HTMLSelectElement).value as "training" | "testing";
    for (const file of Array.from(e.dataTransfer.files)) {
      const image = await decodeImageFile(file);
      await this.api.capture(this.activeLabel, split, encodePPM(image), this.currentTags());
    }
  }

  private async refreshStrip() {
    const digests = await this.strip.refresh();
    const box = this.root.querySelector("#strip")!;
    box.innerHTML = "";
    for (const digest of digests) {
      box.appendChild(await drawThumb(this.api, digest, 56));
    }
  }

  // ---- dashboards ----

  private switchSplit(split: "training" | "testing") {
    this.split = split;
    this.page = 1;
    this.root.querySelector("#tab-training")!.classList.toggle("active", split === "training");
    this.root.querySelector("#tab-testing")!.classList.toggle("active", split === "testing");
    void this.refreshDashboard();
  }

  private turnPage(direction: number) {
    this.page += direction;
    void this.refreshDashboard();
  }

  private async refreshDashboard() {
    const probe = await this.api.dashboard(this.split, 1);
    this.page = clampPage(this.page, probe.total, probe.page_size);
    const reply: DashboardPage = this.page === 1 ? probe : await this.api.dashboard(this.split, this.page);
    const grid = this.root.querySelector("#grid")!;
    grid.innerHTML = "";
    for (const item of reply.items) {
      grid.appendChild(await this.dashboardCell(item));
    }
    const { from, to } = pageWindow(reply.page, reply.total, reply.page_size);
    (this.root.querySelector("#pageinfo") as HTMLElement).textContent =
      `${from}–${to} of ${reply.total} (page ${reply.page}/${pageCount(reply.total, reply.page_size)})`;
    (this.root.querySelector("#dash-meta") as HTMLElement).textContent =
      this.split === "testing" ? "misclassified samples first — tap one to inspect confidences" : "";
  }

  private async dashboardCell(item: DashboardItem): Promise<HTMLElement> {
    const cell = el("div", "cell");
    cell.appendChild(await drawThumb(this.api, item.digest));
    const caption = el("div", "caption", item.label_name ?? "");
    if (this.split === "testing") {
      const mark = el("span", item.correct ? "mark ok" : "mark bad", item.correct ? "✓" : "✗");
      caption.prepend(mark);
      cell.addEventListener("click", () => this.showDetail(item));
    }
    cell.appendChild(caption);
    return cell;
  }

  private showDetail(item: DashboardItem) {
    const detail = this.root.querySelector("#detail") as HTMLElement;
    detail.classList.remove("hidden");
    detail.innerHTML = "";
    detail.appendChild(el("h3", "", `true: ${item.label_name} — predicted: ${item.predicted_name}${item.correct ? "" : " (misclassified)"}`));
    const chart = el("div");
    detail.appendChild(chart);
    const names = new Map(this.labels.map((l) => [l.label_id, l.name]));
    const order = (item.confidence ?? []).map((value, i) => ({ value, i }));
    // confidence is aligned with the model's label_order; fetch it via stats label map
    void this.api.exportModel().then(({ model }) => {
      const header = JSON.parse(model.split("\n")[0]);
      renderBarChart(
        chart,
        header.label_order.map((labelId: string, i: number) => ({
          name: names.get(labelId) ?? labelId.slice(0, 8),
          value: order[i]?.value ?? 0,
          highlight: labelId === item.predicted,
        })),
      );
    });
    if (!item.correct) {
      const row = el("div", "row");
      const select = el("select") as HTMLSelectElement;
      for (const label of this.labels) {
        const opt = el("option", "", label.name) as HTMLOptionElement;
        opt.value = label.label_id;
        select.appendChild(opt);
      }
      const button = el("button", "", "relabel");
      button.addEventListener("click", async () => {
        await this.api.relabelSample(item.sample_id, select.value);
        detail.classList.add("hidden");
        await this.refreshDashboard();
      });
      row.append(el("span", "", "correct label: "), select, button);
      detail.appendChild(row);
    }
  }

  // ---- training / stats ----

  private async retrain() {
    const button = this.root.querySelector("#retrain") as HTMLButtonElement;
    button.disabled = true;
    button.textContent = "training…";
    try {
      const reply = await this.api.retrain(Math.floor(Math.random() * 2 ** 31));
      (this.root.querySelector("#accuracy") as HTMLElement).textContent =
        reply.weighted_accuracy === null ? "no test data yet" : `accuracy ${(reply.weighted_accuracy * 100).toFixed(0)}%`;
    } catch (err) {
      alert(String(err));
    } finally {
      button.disabled = false;
      button.textContent = "Train Model";
    }
    await this.refreshDashboard();
    await this.refreshStats();
  }

  private async refreshStats() {
    const stats = await this.api.stats();
    (this.root.querySelector("#stats-box") as HTMLElement).textContent =
      `${stats.training_total} training · ${stats.testing_total} testing · ` +
      `model v${stats.model_version ?? "–"} · retrained ${stats.retrain_count}× · high score ${stats.high_score.toFixed(1)}`;
  }

  // ---- live classification ----

  private async toggleLive() {
    const button = this.root.querySelector("#live-toggle") as HTMLButtonElement;
    if (this.liveOn) {
      this.liveOn = false;
      if (this.liveTimer !== null) clearInterval(this.liveTimer);
      await this.api.liveStop();
      button.textContent = "start live";
      return;
    }
    await this.api.liveStart(); // throws if there is no model yet
    this.liveOn = true;
    button.textContent = "stop live";
    this.liveTimer = window.setInterval(() => {
      const frame = grabFrame(this.video);
      if (frame) void this.api.liveFrame(encodePPM(frame)); // agent caps at 10/s
    }, 150);
  }

  private renderLive(result: { confidences: number[]; label_order: string[]; top: string }) {
    const names = new Map(this.labels.map((l) => [l.label_id, l.name]));
    renderBarChart(
      this.root.querySelector("#live-chart") as HTMLElement,
      result.label_order.map((labelId, i) => ({
        name: names.get(labelId) ?? labelId.slice(0, 8),
        value: result.confidences[i],
        highlight: labelId === result.top,
      })),
    );
  }

  // ---- game ----

  private clearGameTimers() {
    for (const t of this.gameTimers) clearInterval(t);
    this.gameTimers = [];
  }

  private async startGame() {
    const box = this.root.querySelector("#game-box") as HTMLElement;
    const over = this.root.querySelector("#game-over") as HTMLElement;
    over.classList.add("hidden");
    try {
      await this.game.start(Math.floor(Math.random() * 2 ** 31));
    } catch (err) {
      alert(String(err));
      return;
    }
    box.classList.remove("hidden");
    const names = new Map(this.labels.map((l) => [l.label_id, l.name]));
    const started = Date.now();
    let roundStarted = started;
    const update = () => {
      const leftS = Math.max(0, this.game.timeLimitS - (Date.now() - started) / 1000);
      (this.root.querySelector("#game-clock") as HTMLElement).textContent = `${leftS.toFixed(0)}s left`;
      (this.root.querySelector("#game-roundclock") as HTMLElement).textContent =
        Math.max(0, this.game.roundLengthS - (Date.now() - roundStarted) / 1000).toFixed(1);
      (this.root.querySelector("#game-target") as HTMLElement).textContent =
        this.game.target ? names.get(this.game.target) ?? "?" : "—";
      (this.root.querySelector("#game-round") as HTMLElement).textContent = String(this.game.roundsPlayed + 1);
      (this.root.querySelector("#game-total") as HTMLElement).textContent = this.game.totalSoFar.toFixed(1);
    };
    update();
    this.gameTimers.push(window.setInterval(update, 100));
    this.gameTimers.push(
      window.setInterval(async () => {
        roundStarted = Date.now();
        const frame = grabFrame(this.video);
        if (!frame || this.game.phase !== "running") return;
        const reply = await this.game.submitRound(encodePPM(frame));
        if (reply.over || this.game.phase !== "running") this.finishGame();
      }, this.game.roundLengthS * 1000),
    );
  }

  private finishGame() {
    this.clearGameTimers();
    const box = this.root.querySelector("#game-box") as HTMLElement;
    const over = this.root.querySelector("#game-over") as HTMLElement;
    box.classList.add("hidden");
    over.classList.remove("hidden");
    const session = this.game.session;
    if (!session) return;
    const names = new Map(this.labels.map((l) => [l.label_id, l.name]));
    over.innerHTML = `<h3>Game Over</h3>
      <div class="game-final">total <b>${this.game.displayedTotal.toFixed(1)}</b> · high score <b>${(this.game.displayedHighScore ?? 0).toFixed(1)}</b></div>`;
    const list = el("ul", "rounds");
    session.rounds.forEach((r, i) => {
      list.appendChild(
        el("li", "", `round ${i + 1}: ${names.get(r.target) ?? r.target.slice(0, 8)} — ${(r.final_confidence * 100).toFixed(0)}% → ${r.score.toFixed(1)} pts`),
      );
    });
    over.appendChild(list);
  }
}
