import { ApiClient, ApiError } from "./api.js";
import { legendEntries, renderChart } from "./chart.js";
import { compileFilterText, FilterSyntaxError, type Compiled } from "./filter.js";
import { escapeHtml, formatResult, formatSize, formatTimestamp, statusBadge } from "./format.js";
import { configTree, leafText, type TreeNode } from "./tree.js";
import type { Annotation, MetricSeries, RunRecord } from "./types.js";
import {
  PAGE_SIZE,
  stateFromQuery,
  stateToQuery,
  toggleSort,
  type ViewState,
} from "./viewstate.js";

const TOKEN_KEY = "altar-token";
const root = document.getElementById("app") as HTMLElement;

function client(): ApiClient {
  return new ApiClient("", sessionStorage.getItem(TOKEN_KEY));
}

function currentState(): ViewState {
  return stateFromQuery(window.location.search);
}

function pushState(state: ViewState): void {
  const url = `${window.location.pathname}${stateToQuery(state)}`;
  window.history.pushState(null, "", url);
  void render();
}

window.addEventListener("popstate", () => void render());

// ---------------------------------------------------------------------------
// Table view

interface TableData {
  total: number;
  runs: RunRecord[];
}

async function fetchTable(state: ViewState, compiled: Compiled): Promise<TableData> {
  const api = client();
  const sort = state.sort;
  if (compiled.where !== null) {
    return api.queryRuns({
      where: compiled.where,
      sort,
      skip: (state.page - 1) * PAGE_SIZE,
      limit: PAGE_SIZE,
    });
  }
  // Residual expression: fetch everything in server order, filter here.
  const all: RunRecord[] = [];
  for (let skip = 0; ; skip += 1000) {
    const page = await api.queryRuns({ sort, skip, limit: 1000 });
    all.push(...page.runs);
    if (all.length >= page.total || page.runs.length === 0) break;
  }
  const matched = all.filter(compiled.residual);
  const start = (state.page - 1) * PAGE_SIZE;
  return { total: matched.length, runs: matched.slice(start, start + PAGE_SIZE) };
}

const TABLE_COLUMNS: { label: string; path: string }[] = [
  { label: "run", path: "run_id" },
  { label: "experiment", path: "experiment.name" },
  { label: "status", path: "status" },
  { label: "started", path: "start_time" },
  { label: "result", path: "result" },
];

function runRow(run: RunRecord, state: ViewState): string {
  const badge = statusBadge(run);
  const checked = state.selectedRuns.has(run.run_id) ? "checked" : "";
  return `<tr>
    <td><input type="checkbox" data-select="${run.run_id}" ${checked}></td>
    <td><a href="#" data-open="${run.run_id}">${run.run_id}</a></td>
    <td>${escapeHtml(run.experiment.name)}</td>
    <td><span class="${badge.className}">${badge.label}</span>${
      badge.stale ? ' <span class="stale">stale</span>' : ""
    }</td>
    <td>${formatTimestamp(run.start_time)}</td>
    <td>${escapeHtml(formatResult(run.result))}</td>
  </tr>`;
}

async function renderTable(state: ViewState): Promise<void> {
  let compiled: Compiled;
  let filterError = "";
  try {
    compiled = compileFilterText(state.filterText);
  } catch (err) {
    compiled = { where: {}, residual: null };
    filterError = err instanceof FilterSyntaxError ? err.message : String(err);
  }

  let data: TableData = { total: 0, runs: [] };
  let loadError = "";
  if (!filterError) {
    try {
      data = await fetchTable(state, compiled);
    } catch (err) {
      loadError = describeError(err);
    }
  }

  const pages = Math.max(1, Math.ceil(data.total / PAGE_SIZE));
  const compareBlock = await renderCompare(state);

  root.innerHTML = `
    <header>
      <h1>Altar</h1>
      <button id="token-btn" type="button">access token</button>
    </header>
    <section class="toolbar">
      <input id="filter-box" type="text" spellcheck="false"
        placeholder='filter, e.g. experiment.name = "get_movie" and config.gain >= 10'
        value="${escapeHtml(state.filterText)}">
      <button id="apply-btn" type="button">apply</button>
    </section>
    ${filterError ? `<p class="error">${escapeHtml(filterError)}</p>` : ""}
    ${loadError ? `<p class="error">${escapeHtml(loadError)}</p>` : ""}
    ${compareBlock}
    <table class="runs">
      <thead><tr>
        <th></th>
        ${TABLE_COLUMNS.map((col) => {
          const active = state.sort?.path === col.path ? ` (${state.sort.direction})` : "";
          return `<th><a href="#" data-sort="${col.path}">${col.label}${active}</a></th>`;
        }).join("")}
      </tr></thead>
      <tbody>
        ${data.runs.map((run) => runRow(run, state)).join("")}
        ${data.runs.length === 0 && !loadError ? '<tr><td colspan="6" class="empty">no runs</td></tr>' : ""}
      </tbody>
    </table>
    <footer class="pager">
      <button id="prev-btn" type="button" ${state.page <= 1 ? "disabled" : ""}>prev</button>
      <span>page ${state.page} of ${pages} (${data.total} runs)</span>
      <button id="next-btn" type="button" ${state.page >= pages ? "disabled" : ""}>next</button>
      <span class="compare-controls">
        <input id="metric-box" type="text" placeholder="metric to compare"
          value="${escapeHtml(state.compareMetric ?? "")}">
        <button id="compare-btn" type="button" ${state.selectedRuns.size === 0 ? "disabled" : ""}>
          compare ${state.selectedRuns.size} selected
        </button>
      </span>
    </footer>
  `;

  bindTokenButton();
  const filterBox = document.getElementById("filter-box") as HTMLInputElement;
  const apply = () => pushState({ ...state, filterText: filterBox.value, page: 1 });
  document.getElementById("apply-btn")?.addEventListener("click", apply);
  filterBox.addEventListener("keydown", (ev) => {
    if (ev.key === "Enter") apply();
  });

  for (const link of root.querySelectorAll<HTMLAnchorElement>("a[data-sort]")) {
    link.addEventListener("click", (ev) => {
      ev.preventDefault();
      const path = link.dataset.sort as string;
      pushState({ ...state, sort: toggleSort(state, path), page: 1 });
    });
  }
  for (const link of root.querySelectorAll<HTMLAnchorElement>("a[data-open]")) {
    link.addEventListener("click", (ev) => {
      ev.preventDefault();
      pushState({ ...state, detailRun: Number(link.dataset.open) });
    });
  }
  for (const box of root.querySelectorAll<HTMLInputElement>("input[data-select]")) {
    box.addEventListener("change", () => {
      const id = Number(box.dataset.select);
      const selectedRuns = new Set(state.selectedRuns);
      if (box.checked) selectedRuns.add(id);
      else selectedRuns.delete(id);
      pushState({ ...state, selectedRuns });
    });
  }
  document.getElementById("prev-btn")?.addEventListener("click", () => {
    pushState({ ...state, page: state.page - 1 });
  });
  document.getElementById("next-btn")?.addEventListener("click", () => {
    pushState({ ...state, page: state.page + 1 });
  });
  document.getElementById("compare-btn")?.addEventListener("click", () => {
    const metric = (document.getElementById("metric-box") as HTMLInputElement).value;
    pushState({ ...state, compareMetric: metric || null });
  });
}

async function renderCompare(state: ViewState): Promise<string> {
  if (!state.compareMetric || state.selectedRuns.size === 0) return "";
  const api = client();
  const series = [];
  for (const runId of [...state.selectedRuns].sort((a, b) => a - b)) {
    try {
      const metric: MetricSeries = await api.getMetric(runId, state.compareMetric);
      series.push({ label: `run ${runId}`, steps: metric.steps, values: metric.values });
    } catch {
      // runs without the series are simply absent from the overlay
    }
  }
  const legend = legendEntries(series)
    .map(
      (entry) =>
        `<span class="legend-entry"><span class="swatch" style="background:${entry.color}"></span>${escapeHtml(entry.label)}</span>`,
    )
    .join(" ");
  return `<section class="compare">
    <h2>${escapeHtml(state.compareMetric)}</h2>
    ${renderChart(series)}
    <div class="legend">${legend}</div>
  </section>`;
}

// ---------------------------------------------------------------------------
// Detail view

function renderTreeNodes(nodes: TreeNode[]): string {
  return nodes
    .map((node) => {
      if (node.leaf) {
        return `<div class="leaf"><span class="key" title="${escapeHtml(node.path)}">${escapeHtml(node.key)}</span> = <span class="value">${escapeHtml(leafText(node.value))}</span></div>`;
      }
      return `<details open><summary>${escapeHtml(node.key)}</summary><div class="branch">${renderTreeNodes(node.children)}</div></details>`;
    })
    .join("");
}

function annotationBlock(notes: Annotation[]): string {
  if (notes.length === 0) return '<p class="empty">no annotations</p>';
  return notes
    .map(
      (note) => `<div class="annotation">
        <span class="author">${escapeHtml(note.author)}</span>
        <span class="when">${formatTimestamp(note.created_at)}</span>
        ${note.tags.map((t) => `<span class="tag">${escapeHtml(t)}</span>`).join(" ")}
        <p>${escapeHtml(note.note)}</p>
      </div>`,
    )
    .join("");
}

async function renderDetail(state: ViewState, runId: number): Promise<void> {
  const api = client();
  let run: RunRecord;
  try {
    run = await api.getRun(runId);
  } catch (err) {
    root.innerHTML = `<p class="error">${escapeHtml(describeError(err))}</p>
      <p><a href="#" id="back-link">back to runs</a></p>`;
    bindBack(state);
    bindTokenButton();
    return;
  }

  const badge = statusBadge(run);
  const metricCharts: string[] = [];
  for (const name of run.metric_names) {
    try {
      const series = await api.getMetric(runId, name);
      metricCharts.push(`<figure>
        <figcaption>${escapeHtml(name)} (${series.steps.length} points)</figcaption>
        ${renderChart([{ label: name, steps: series.steps, values: series.values }])}
      </figure>`);
    } catch (err) {
      metricCharts.push(`<p class="error">${escapeHtml(name)}: ${escapeHtml(describeError(err))}</p>`);
    }
  }

  let notes: Annotation[] = [];
  try {
    notes = await api.getAnnotations(runId);
  } catch {
    // annotations pane degrades to empty on fetch errors
  }

  const artifacts = run.artifacts
    .map(
      (ref) => `<tr>
        <td><a href="${api.artifactUrl(runId, ref.name)}" download>${escapeHtml(ref.name)}</a></td>
        <td><span class="kind kind-${ref.kind.toLowerCase()}">${ref.kind}</span></td>
        <td>${formatSize(ref.size_bytes)}</td>
        <td>${escapeHtml(ref.media_type)}</td>
        <td class="hash">${ref.content_hash.slice(0, 12)}…</td>
      </tr>`,
    )
    .join("");

  root.innerHTML = `
    <header>
      <h1><a href="#" id="back-link">Altar</a> / run ${run.run_id}</h1>
      <button id="token-btn" type="button">access token</button>
    </header>
    <section class="run-head">
      <h2>${escapeHtml(run.experiment.name)}</h2>
      <span class="${badge.className}">${badge.label}</span>
      ${badge.stale ? '<span class="stale">stale</span>' : ""}
      <dl>
        <dt>started</dt><dd>${formatTimestamp(run.start_time)}</dd>
        ${run.stop_time ? `<dt>stopped</dt><dd>${formatTimestamp(run.stop_time)}</dd>` : ""}
        ${run.result !== undefined ? `<dt>result</dt><dd>${escapeHtml(formatResult(run.result))}</dd>` : ""}
        <dt>host</dt><dd>${escapeHtml(run.host.hostname)} (${escapeHtml(run.host.os_name)}, ${escapeHtml(run.host.runtime_version)})</dd>
      </dl>
    </section>
    <section>
      <h3>configuration</h3>
      <div class="config-tree">${renderTreeNodes(configTree(run.config))}</div>
    </section>
    <section>
      <h3>metrics</h3>
      ${metricCharts.join("") || '<p class="empty">no metrics</p>'}
    </section>
    <section>
      <h3>artifacts</h3>
      ${
        run.artifacts.length
          ? `<table class="artifacts"><thead><tr><th>name</th><th>kind</th><th>size</th><th>type</th><th>sha256</th></tr></thead><tbody>${artifacts}</tbody></table>`
          : '<p class="empty">no artifacts</p>'
      }
    </section>
    <section>
      <h3>captured output</h3>
      <pre class="captured">${escapeHtml(run.captured_out || "(empty)")}</pre>
    </section>
    <section>
      <h3>annotations</h3>
      <div id="annotations">${annotationBlock(notes)}</div>
      <form id="annotate-form">
        <input id="ann-author" type="text" placeholder="author" required>
        <input id="ann-tags" type="text" placeholder="tags (comma separated)">
        <input id="ann-note" type="text" placeholder="note" required>
        <button type="submit">annotate</button>
      </form>
      <p id="ann-error" class="error"></p>
    </section>
  `;

  bindBack(state);
  bindTokenButton();
  const form = document.getElementById("annotate-form") as HTMLFormElement;
  form.addEventListener("submit", (ev) => {
    ev.preventDefault();
    const author = (document.getElementById("ann-author") as HTMLInputElement).value;
    const tags = (document.getElementById("ann-tags") as HTMLInputElement).value
      .split(",")
      .map((t) => t.trim())
      .filter(Boolean);
    const note = (document.getElementById("ann-note") as HTMLInputElement).value;
    void api
      .postAnnotation(runId, { author, tags, note })
      .then(() => render())
      .catch((err) => {
        const target = document.getElementById("ann-error");
        if (target) target.textContent = describeError(err);
      });
  });
}

// ---------------------------------------------------------------------------

function bindBack(state: ViewState): void {
  document.getElementById("back-link")?.addEventListener("click", (ev) => {
    ev.preventDefault();
    pushState({ ...state, detailRun: null });
  });
}

function bindTokenButton(): void {
  document.getElementById("token-btn")?.addEventListener("click", () => {
    const current = sessionStorage.getItem(TOKEN_KEY) ?? "";
    const entered = window.prompt("Access token (empty for none):", current);
    if (entered === null) return;
    if (entered === "") sessionStorage.removeItem(TOKEN_KEY);
    else sessionStorage.setItem(TOKEN_KEY, entered);
    void render();
  });
}

function describeError(err: unknown): string {
  if (err instanceof ApiError) {
    return err.status === 401
      ? "unauthorized: set the access token (top right)"
      : `${err.code}: ${err.detail}`;
  }
  return String(err);
}

async function render(): Promise<void> {
  const state = currentState();
  if (state.detailRun !== null) {
    await renderDetail(state, state.detailRun);
  } else {
    await renderTable(state);
  }
}

void render();
