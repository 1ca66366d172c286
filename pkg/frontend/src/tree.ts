// Configuration trees render as nested <details> elements: collapsible
// with no event wiring, and the full dotted path of every leaf is kept
// for copy-into-filter-box use.

export interface TreeNode {
  key: string;
  path: string;
  leaf: boolean;
  value: unknown;
  children: TreeNode[];
}

export function buildTree(value: unknown, key = "", path = ""): TreeNode {
  if (Array.isArray(value)) {
    return {
      key,
      path,
      leaf: false,
      value: null,
      children: value.map((item, i) =>
        buildTree(item, String(i), path ? `${path}.${i}` : String(i)),
      ),
    };
  }
  if (value !== null && typeof value === "object") {
    const map = value as Record<string, unknown>;
    return {
      key,
      path,
      leaf: false,
      value: null,
      children: Object.keys(map)
        .sort()
        .map((k) => buildTree(map[k], k, path ? `${path}.${k}` : k)),
    };
  }
  return { key, path, leaf: true, value, children: [] };
}

export function configTree(config: Record<string, unknown>): TreeNode[] {
  return buildTree(config).children;
}

export function leafText(value: unknown): string {
  return value === null ? "null" : JSON.stringify(value);
}
