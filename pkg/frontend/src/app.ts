import type { Api } from "./api";
import { ServiceError } from "./api";
import type { AssistDoc, SessionState } from "./types";
import { ACTION_NAMES } from "./types";

// One tab drives one session. Every mutation round-trips through the
// service and the next render uses only what came back; the app queues
// user intents so a slow response can't interleave with the next click.

const KEY_TO_ACTION: Record<string, number> = {
  k: 0, a: 1, d: 2, l: 3, r: 4, s: 5,
  ArrowRight: 1, ArrowLeft: 2, ArrowUp: 3, ArrowDown: 4, " ": 0,
};

const ARROWS = ["", "→", "→→"]; // velocity glyph, one arrow per unit

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K, cls?: string, text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (cls) node.className = cls;
  if (text !== undefined) node.textContent = text;
  return node;
}

function pct(p: number): string {
  return `${(100 * p).toFixed(1)}%`;
}

export class App {
  api: Api;
  root: HTMLElement;

  state: SessionState | null = null;
  assist: AssistDoc | null = null;
  adaptedName: string | null = null;
  lastSeed: number | null = null;

  private work: Promise<void> = Promise.resolve();
  private pendingRetry: (() => Promise<void>) | null = null;

  // dom handles filled by buildSkeleton
  private grid!: HTMLElement;
  private buttons: HTMLButtonElement[] = [];
  private announcedBars!: HTMLElement;
  private predictedBars!: HTMLElement;
  private whatIfNote!: HTMLElement;
  private sparkline!: SVGSVGElement;
  private summaryBox!: HTMLElement;
  private statusLine!: HTMLElement;
  private banner!: HTMLElement;
  private bannerText!: HTMLElement;
  private startBtn!: HTMLButtonElement;
  private laneInput!: HTMLInputElement;
  private seedInput!: HTMLInputElement;
  private adaptBtn!: HTMLButtonElement;
  private rematchBtn!: HTMLButtonElement;

  private keyHandler = (ev: KeyboardEvent) => this.onKey(ev);

  constructor(root: HTMLElement, api: Api) {
    this.root = root;
    this.api = api;
    this.buildSkeleton();
    this.render();
    document.addEventListener("keydown", this.keyHandler);
  }

  destroy() {
    document.removeEventListener("keydown", this.keyHandler);
  }

  /** Resolves when every queued request/render has finished. */
  settle(): Promise<void> {
    return this.work;
  }

  private enqueue(run: () => Promise<void>) {
    this.work = this.work.then(run, run);
  }

  // ---- intents -----------------------------------------------------------

  start() {
    this.enqueue(() => this.guard(async () => {
      const lane = Number(this.laneInput.value) || 0;
      const seedRaw = this.seedInput.value.trim();
      const body: { x0: number[]; seed?: number; utility?: string } = {
        x0: [0, lane, 0],
      };
      if (seedRaw !== "") body.seed = Number(seedRaw);
      this.state = await this.api.create(body);
      this.lastSeed = this.state.seed;
      this.adaptedName = null;
      this.assist = null;
      await this.maybeFetchAssist();
      this.render();
    }));
  }

  submit(action: number) {
    if (!this.state || this.state.awaiting !== "driver_action") return;
    const id = this.state.session_id;
    this.enqueue(() => this.guard(async () => {
      this.state = await this.api.act(id, action);
      this.assist = null;
      await this.maybeFetchAssist();
      this.render();
    }));
  }

  adaptFromDriving() {
    if (!this.state || !this.state.finished) return;
    const id = this.state.session_id;
    this.enqueue(() => this.guard(async () => {
      const doc = await this.api.adapt(id);
      this.adaptedName = doc.utility;
      this.render();
    }));
  }

  rematch() {
    if (!this.adaptedName || !this.state) return;
    const body = {
      utility: this.adaptedName,
      x0: this.state.episode.x0,
      seed: this.lastSeed ?? undefined,
    };
    this.enqueue(() => this.guard(async () => {
      this.state = await this.api.create(body);
      this.lastSeed = this.state.seed;
      this.assist = null;
      await this.maybeFetchAssist();
      this.render();
    }));
  }

  retry() {
    const job = this.pendingRetry;
    this.pendingRetry = null;
    this.banner.hidden = true;
    if (job) this.enqueue(job);
  }

  private async maybeFetchAssist() {
    if (this.state && this.state.awaiting === "driver_action") {
      this.assist = await this.api.assist(this.state.session_id);
    }
  }

  /** Transport failure: banner + a retry that resyncs from the server. */
  private async guard(run: () => Promise<void>) {
    try {
      await run();
    } catch (err) {
      if (err instanceof ServiceError) {
        this.statusLine.textContent = `service: ${err.code}: ${err.message}`;
        return;
      }
      this.bannerText.textContent =
        "network trouble; nothing is lost, the server keeps the session";
      this.banner.hidden = false;
      this.pendingRetry = () => this.guard(async () => {
        if (this.state) {
          this.state = await this.api.state(this.state.session_id);
          this.assist = null;
          await this.maybeFetchAssist();
        }
        this.render();
      });
    }
  }

  private onKey(ev: KeyboardEvent) {
    if (ev.target instanceof HTMLInputElement) return;
    const action = KEY_TO_ACTION[ev.key];
    if (action === undefined) return;
    ev.preventDefault();
    this.submit(action);
  }

  // ---- dom ---------------------------------------------------------------

  private buildSkeleton() {
    const header = el("div", "topbar");
    header.append(el("h1", "", "codriver console"));
    const controls = el("div", "controls");
    this.laneInput = el("input");
    this.laneInput.id = "lane";
    this.laneInput.value = "1";
    this.laneInput.setAttribute("aria-label", "start lane");
    this.seedInput = el("input");
    this.seedInput.id = "seed";
    this.seedInput.placeholder = "seed (blank = random)";
    this.seedInput.setAttribute("aria-label", "seed");
    this.startBtn = el("button", "start", "start drive");
    this.startBtn.addEventListener("click", () => this.start());
    controls.append("lane", this.laneInput, this.seedInput, this.startBtn);
    header.append(controls);

    this.banner = el("div", "banner");
    this.banner.hidden = true;
    this.bannerText = el("span");
    const retryBtn = el("button", "retry", "retry");
    retryBtn.addEventListener("click", () => this.retry());
    this.banner.append(this.bannerText, retryBtn);

    this.grid = el("div", "grid");

    const actions = el("div", "actions");
    ACTION_NAMES.forEach((name, a) => {
      const b = el("button", "action", `${name} [${"kadlrs"[a]}]`);
      b.dataset.action = String(a);
      b.disabled = true;
      b.addEventListener("click", () => this.submit(a));
      b.addEventListener("mouseenter", () => this.showWhatIf(a));
      b.addEventListener("mouseleave", () => this.showWhatIf(null));
      this.buttons.push(b);
      actions.append(b);
    });

    const assistBox = el("div", "assist");
    assistBox.append(el("h2", "", "announced assistance"));
    this.announcedBars = el("div", "bars announced");
    assistBox.append(this.announcedBars);
    assistBox.append(el("h2", "", "predicted driver reply"));
    this.predictedBars = el("div", "bars predicted");
    assistBox.append(this.predictedBars);
    this.whatIfNote = el("div", "whatif-note");
    assistBox.append(this.whatIfNote);

    const rewardBox = el("div", "reward");
    rewardBox.append(el("h2", "", "accumulated reward"));
    this.sparkline = document.createElementNS("http://www.w3.org/2000/svg", "svg");
    this.sparkline.setAttribute("viewBox", "0 0 240 60");
    this.sparkline.classList.add("sparkline");
    rewardBox.append(this.sparkline);
    this.summaryBox = el("div", "summary");
    rewardBox.append(this.summaryBox);
    this.adaptBtn = el("button", "adapt", "adapt from my driving");
    this.adaptBtn.disabled = true;
    this.adaptBtn.addEventListener("click", () => this.adaptFromDriving());
    this.rematchBtn = el("button", "rematch", "rematch");
    this.rematchBtn.hidden = true;
    this.rematchBtn.addEventListener("click", () => this.rematch());
    rewardBox.append(this.adaptBtn, this.rematchBtn);

    this.statusLine = el("div", "status", "no session");

    const main = el("div", "panels");
    main.append(this.grid, actions, assistBox, rewardBox);
    this.root.append(header, this.banner, main, this.statusLine);
  }

  private showWhatIf(action: number | null) {
    for (const cell of this.grid.querySelectorAll(".whatif")) {
      cell.classList.remove("whatif");
    }
    if (action === null || !this.assist) {
      this.whatIfNote.textContent = "";
      return;
    }
    const w = this.assist.what_if[action];
    const cell = this.grid.querySelector(
      `[data-p="${w.x[0]}"][data-y="${w.x[1]}"]`,
    );
    if (cell) cell.classList.add("whatif");
    this.whatIfNote.textContent =
      `${w.action}: next [${w.x.join(",")}], outlook ${w.value.toFixed(2)}`;
  }

  // ---- rendering (presentation only, all numbers from the service) -------

  private render() {
    const s = this.state;
    const awaiting = !!s && s.awaiting === "driver_action";
    for (const b of this.buttons) b.disabled = !awaiting;
    this.adaptBtn.disabled = !(s && s.finished);
    this.rematchBtn.hidden = this.adaptedName === null;
    if (this.adaptedName !== null) {
      this.rematchBtn.textContent = `rematch with ${this.adaptedName}`;
    }

    this.renderGrid();
    this.renderBars();
    this.renderReward();

    if (!s) {
      this.statusLine.textContent = "no session";
    } else {
      const phase = s.finished
        ? (s.reached_goal ? "finished: parked at the goal" : "finished: did not reach the goal")
        : (awaiting ? "your move" : "planner is driving");
      this.statusLine.textContent =
        `session ${s.session_id} | utility ${s.utility} | t=${s.t} | ${phase}`;
    }
  }

  private renderGrid() {
    this.grid.textContent = "";
    const s = this.state;
    if (!s) return;
    const scn = s.episode.scenario;
    const { P, L } = scn.grid;
    this.grid.style.gridTemplateColumns = `repeat(${P}, 1fr)`;
    const obstacles = new Set(scn.obstacles.map((o) => `${o[0]},${o[1]}`));
    const [gp, gy] = scn.goal;
    const [vp, vy, vv] = s.x;
    // lane 0 at the bottom, so the "left" action moves up on screen
    for (let y = L - 1; y >= 0; y--) {
      for (let p = 0; p < P; p++) {
        const cell = el("div", "cell");
        cell.dataset.p = String(p);
        cell.dataset.y = String(y);
        if (obstacles.has(`${p},${y}`)) {
          cell.classList.add("obstacle");
          cell.textContent = "■";
        }
        if (p === gp && y === gy) {
          cell.classList.add("goal");
          cell.textContent = "⚐";
        }
        if (p === vp && y === vy) {
          cell.classList.add("car");
          cell.textContent = `▶${ARROWS[vv] ?? ""}`;
          cell.title = `v=${vv}`;
        }
        this.grid.append(cell);
      }
    }
  }

  private renderBars() {
    const draw = (box: HTMLElement, dist: number[] | null) => {
      box.textContent = "";
      if (!dist) {
        box.append(el("div", "bars-empty", "awaiting a decision stage"));
        return;
      }
      dist.forEach((prob, a) => {
        const row = el("div", "bar-row");
        row.append(el("span", "bar-label", ACTION_NAMES[a]));
        const track = el("div", "bar-track");
        const fill = el("div", "bar-fill");
        fill.style.width = pct(prob);
        track.append(fill);
        row.append(track);
        row.append(el("span", "bar-pct", pct(prob)));
        box.append(row);
      });
    };
    draw(this.announcedBars, this.assist ? this.assist.announced : this.state?.announced ?? null);
    draw(this.predictedBars, this.assist ? this.assist.predicted : this.state?.predicted ?? null);
  }

  private renderReward() {
    const s = this.state;
    this.sparkline.textContent = "";
    if (!s) {
      this.summaryBox.textContent = "";
      return;
    }
    const curve = s.episode.summary.reward_curve;
    if (curve.length > 0) {
      const lo = Math.min(...curve, 0);
      const hi = Math.max(...curve, 0);
      const span = hi - lo || 1;
      const step = curve.length > 1 ? 240 / (curve.length - 1) : 0;
      const points = curve
        .map((r, i) => `${(i * step).toFixed(1)},${(55 - (50 * (r - lo)) / span).toFixed(1)}`)
        .join(" ");
      const line = document.createElementNS("http://www.w3.org/2000/svg", "polyline");
      line.setAttribute("points", points);
      line.setAttribute("fill", "none");
      line.setAttribute("stroke", "currentColor");
      this.sparkline.append(line);
    }
    this.summaryBox.textContent = "";
    if (s.finished) {
      const badge = el("span", s.reached_goal ? "badge ok" : "badge bad",
        s.reached_goal ? "reached the goal" : "did not reach the goal");
      const sum = s.episode.summary;
      const stats = el("span", "stats",
        ` reward ${sum.final_reward.toFixed(2)}` +
        (sum.steps_to_goal !== null ? ` in ${sum.steps_to_goal} steps` : ` after ${s.t} steps`));
      this.summaryBox.append(badge, stats);
    }
  }
}

export function createApp(root: HTMLElement, api: Api): App {
  return new App(root, api);
}
