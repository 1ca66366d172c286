// Every piece of view state lives in the URL query string, so any
// view is shareable and reloading reproduces it exactly.

export interface SortSpec {
  path: string;
  direction: "asc" | "desc";
}

export interface ViewState {
  filterText: string;
  sort: SortSpec | null;
  page: number; // 1-based
  selectedRuns: Set<number>;
  compareMetric: string | null;
  detailRun: number | null; // a run id switches to the detail view
}

export const PAGE_SIZE = 25;

export function defaultViewState(): ViewState {
  return {
    filterText: "",
    sort: null,
    page: 1,
    selectedRuns: new Set(),
    compareMetric: null,
    detailRun: null,
  };
}

export function stateToQuery(state: ViewState): string {
  const params = new URLSearchParams();
  if (state.filterText) params.set("f", state.filterText);
  if (state.sort) params.set("sort", `${state.sort.path}:${state.sort.direction}`);
  if (state.page > 1) params.set("page", String(state.page));
  if (state.selectedRuns.size > 0) {
    params.set("sel", [...state.selectedRuns].sort((a, b) => a - b).join(","));
  }
  if (state.compareMetric) params.set("metric", state.compareMetric);
  if (state.detailRun !== null) params.set("run", String(state.detailRun));
  const text = params.toString();
  return text ? `?${text}` : "";
}

export function stateFromQuery(search: string): ViewState {
  const params = new URLSearchParams(search.startsWith("?") ? search.slice(1) : search);
  const state = defaultViewState();

  state.filterText = params.get("f") ?? "";

  const sort = params.get("sort");
  if (sort) {
    const colon = sort.lastIndexOf(":");
    const path = colon > 0 ? sort.slice(0, colon) : sort;
    const direction = colon > 0 ? sort.slice(colon + 1) : "asc";
    // paths share the filter grammar's charset: word segments joined by dots
    const pathOk = /^[A-Za-z0-9_-]+(\.[A-Za-z0-9_-]+)*$/.test(path);
    if (pathOk && (direction === "asc" || direction === "desc")) {
      state.sort = { path, direction };
    }
  }

  const page = Number(params.get("page") ?? "1");
  state.page = Number.isInteger(page) && page >= 1 ? page : 1;

  const sel = params.get("sel");
  if (sel) {
    for (const part of sel.split(",")) {
      const id = Number(part);
      if (Number.isInteger(id) && id > 0) state.selectedRuns.add(id);
    }
  }

  state.compareMetric = params.get("metric");

  const run = Number(params.get("run") ?? "");
  state.detailRun = Number.isInteger(run) && run > 0 ? run : null;

  return state;
}

export function toggleSort(state: ViewState, path: string): SortSpec {
  // first click sorts ascending, second flips, applied to a fresh page
  if (state.sort && state.sort.path === path && state.sort.direction === "asc") {
    return { path, direction: "desc" };
  }
  return { path, direction: "asc" };
}
