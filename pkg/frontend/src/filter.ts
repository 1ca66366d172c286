// Filter box language, matching the server's query grammar:
//
//     or    := and ("or" and)*
//     and   := unary ("and" unary)*
//     unary := "not" unary | "(" or ")" | cmp
//     cmp   := path OP literal | path "exists" | path "in" "[" literals "]"
//
// OP is one of `= != < <= > >= ~` (`~` is substring). Keywords match
// case-insensitively; reserved words cannot start a path. A top-level
// conjunction compiles to the server's filter query parameter; `or`,
// `not`, and repeated operators on one path fall back to a client-side
// predicate over fetched documents.

export type Literal = string | number | boolean | null;

export interface Cmp {
  kind: "cmp";
  path: string;
  op: string; // "=", "!=", "<", "<=", ">", ">=", "~", "in", "exists"
  value: Literal | Literal[];
}
export interface NotNode {
  kind: "not";
  expr: FilterNode;
}
export interface AndNode {
  kind: "and";
  items: FilterNode[];
}
export interface OrNode {
  kind: "or";
  items: FilterNode[];
}
export type FilterNode = Cmp | NotNode | AndNode | OrNode;

export type Compiled =
  | { where: Record<string, unknown>; residual: null }
  | { where: null; residual: (doc: unknown) => boolean };

const CMP_OPS = ["=", "!=", "<", "<=", ">", ">=", "~"];
const RESERVED = new Set(["and", "or", "not", "in", "exists", "true", "false", "null"]);
const OP_TO_FILTER: Record<string, string> = {
  "=": "$eq",
  "!=": "$ne",
  "<": "$lt",
  "<=": "$lte",
  ">": "$gt",
  ">=": "$gte",
  "~": "$contains",
};

const INT_RE = /^-?\d+$/;
const FLOAT_RE = /^-?\d+(\.\d+)?([eE]-?\d+)?$/;
const WORD_RE = /[A-Za-z0-9_-]+/y;

export class FilterSyntaxError extends Error {
  constructor(
    public offset: number, // 1-based byte offset
    public expected: string[],
    public found: string,
  ) {
    expected = [...expected].sort();
    super(`offset ${offset}: expected ${expected.join(" | ")}, found ${found}`);
    this.expected = expected;
  }
}

// ---------------------------------------------------------------------------
// Tokenizer

interface Token {
  kind: string; // "word" | "string" | symbol text | "end"
  text: string;
  value?: string; // decoded string literal
  offset: number;
}

const SYMBOLS = ["!=", "<=", ">=", "=", "<", ">", "~", "(", ")", "[", "]", ",", "."];
const encoder = new TextEncoder();

function byteLen(text: string): number {
  return encoder.encode(text).length;
}

function tokenize(text: string): Token[] {
  const tokens: Token[] = [];
  let pos = 0;
  let offset = 1;
  outer: while (pos < text.length) {
    const ch = text[pos];
    if (ch === " " || ch === "\t" || ch === "\n" || ch === "\r") {
      pos += 1;
      offset += 1;
      continue;
    }
    if (ch === '"') {
      let end = pos + 1;
      while (end < text.length) {
        if (text[end] === "\\") {
          end += 2;
          continue;
        }
        if (text[end] === '"') break;
        end += 1;
      }
      if (end >= text.length) {
        throw new FilterSyntaxError(offset, ["closing quote"], "end of input");
      }
      const raw = text.slice(pos, end + 1);
      let value: string;
      try {
        value = JSON.parse(raw);
      } catch {
        throw new FilterSyntaxError(offset, ["string literal"], raw);
      }
      tokens.push({ kind: "string", text: raw, value, offset });
      offset += byteLen(raw);
      pos = end + 1;
      continue;
    }
    WORD_RE.lastIndex = pos;
    const word = WORD_RE.exec(text);
    if (word) {
      tokens.push({ kind: "word", text: word[0], offset });
      offset += byteLen(word[0]);
      pos += word[0].length;
      continue;
    }
    for (const sym of SYMBOLS) {
      if (text.startsWith(sym, pos)) {
        tokens.push({ kind: sym, text: sym, offset });
        offset += sym.length;
        pos += sym.length;
        continue outer;
      }
    }
    throw new FilterSyntaxError(offset, ["token"], JSON.stringify(ch));
  }
  tokens.push({ kind: "end", text: "", offset });
  return tokens;
}

// ---------------------------------------------------------------------------
// Parser

class Parser {
  private tokens: Token[];
  private pos = 0;

  constructor(text: string) {
    this.tokens = tokenize(text);
  }

  private peek(): Token {
    return this.tokens[this.pos];
  }

  private atKeyword(keyword: string): boolean {
    const token = this.peek();
    return token.kind === "word" && token.text.toLowerCase() === keyword;
  }

  private advance(): Token {
    return this.tokens[this.pos++];
  }

  private fail(expected: string[]): never {
    const token = this.peek();
    const found = token.kind === "end" ? "end of input" : token.text;
    throw new FilterSyntaxError(token.offset, expected, found);
  }

  private expect(kind: string): Token {
    if (this.peek().kind !== kind) this.fail([`'${kind}'`]);
    return this.advance();
  }

  parse(): FilterNode {
    const ast = this.parseOr();
    if (this.peek().kind !== "end") this.fail(["'and'", "'or'", "end of input"]);
    return ast;
  }

  private parseOr(): FilterNode {
    const items = [this.parseAnd()];
    while (this.atKeyword("or")) {
      this.advance();
      items.push(this.parseAnd());
    }
    return items.length === 1 ? items[0] : { kind: "or", items };
  }

  private parseAnd(): FilterNode {
    const items = [this.parseUnary()];
    while (this.atKeyword("and")) {
      this.advance();
      items.push(this.parseUnary());
    }
    return items.length === 1 ? items[0] : { kind: "and", items };
  }

  private parseUnary(): FilterNode {
    if (this.atKeyword("not")) {
      this.advance();
      return { kind: "not", expr: this.parseUnary() };
    }
    if (this.peek().kind === "(") {
      this.advance();
      const inner = this.parseOr();
      this.expect(")");
      return inner;
    }
    return this.parseCmp();
  }

  private parseCmp(): Cmp {
    const path = this.parsePath();
    const token = this.peek();
    if (this.atKeyword("exists")) {
      this.advance();
      return { kind: "cmp", path, op: "exists", value: true };
    }
    if (this.atKeyword("in")) {
      this.advance();
      this.expect("[");
      const values = [this.parseLiteral()];
      while (this.peek().kind === ",") {
        this.advance();
        values.push(this.parseLiteral());
      }
      this.expect("]");
      return { kind: "cmp", path, op: "in", value: values };
    }
    if (CMP_OPS.includes(token.kind)) {
      this.advance();
      return { kind: "cmp", path, op: token.kind, value: this.parseLiteral() };
    }
    this.fail(["comparison operator", "'exists'", "'in'"]);
  }

  private parsePath(): string {
    const token = this.peek();
    if (token.kind !== "word" || RESERVED.has(token.text.toLowerCase())) {
      this.fail(["path"]);
    }
    const segments = [this.advance().text];
    while (this.peek().kind === ".") {
      this.advance();
      if (this.peek().kind !== "word") this.fail(["path segment"]);
      segments.push(this.advance().text);
    }
    return segments.join(".");
  }

  private parseLiteral(): Literal {
    const token = this.peek();
    if (token.kind === "string") {
      this.advance();
      return token.value as string;
    }
    if (token.kind === "word") {
      const lowered = token.text.toLowerCase();
      if (lowered === "true") {
        this.advance();
        return true;
      }
      if (lowered === "false") {
        this.advance();
        return false;
      }
      if (lowered === "null") {
        this.advance();
        return null;
      }
      // Numbers may span tokens: "3" "." "14e-2" is 3.14e-2.
      if (this.tokens[this.pos + 1].kind === ".") {
        const frac = this.tokens[this.pos + 2];
        if (frac.kind === "word") {
          const joined = `${token.text}.${frac.text}`;
          if (FLOAT_RE.test(joined)) {
            this.pos += 3;
            return Number(joined);
          }
        }
      }
      if (INT_RE.test(token.text) || FLOAT_RE.test(token.text)) {
        this.advance();
        return Number(token.text);
      }
    }
    this.fail(["literal"]);
  }
}

export function parse(text: string): FilterNode {
  return new Parser(text).parse();
}

// ---------------------------------------------------------------------------
// Printer

function printLiteral(value: Literal): string {
  if (value === null) return "null";
  if (value === true) return "true";
  if (value === false) return "false";
  if (typeof value === "string") return JSON.stringify(value);
  // The grammar has no "+", so normalize exponents like 1e+22.
  return String(value).replace("e+", "e");
}

export function printFilter(ast: FilterNode): string {
  // Children the parser would flatten or rebind (an or under an and,
  // same-kind nesting) get parentheses so the text reparses to the
  // identical tree.
  switch (ast.kind) {
    case "or":
      return ast.items
        .map((item) => (item.kind === "or" ? `(${printFilter(item)})` : printFilter(item)))
        .join(" or ");
    case "and":
      return ast.items
        .map((item) =>
          item.kind === "and" || item.kind === "or"
            ? `(${printFilter(item)})`
            : printFilter(item),
        )
        .join(" and ");
    case "not": {
      const inner = printFilter(ast.expr);
      const wrapped =
        ast.expr.kind === "and" || ast.expr.kind === "or" ? `(${inner})` : inner;
      return `not ${wrapped}`;
    }
    case "cmp":
      if (ast.op === "exists") return `${ast.path} exists`;
      if (ast.op === "in") {
        const body = (ast.value as Literal[]).map(printLiteral).join(", ");
        return `${ast.path} in [${body}]`;
      }
      return `${ast.path} ${ast.op} ${printLiteral(ast.value as Literal)}`;
  }
}

// ---------------------------------------------------------------------------
// Evaluation (client side, for expressions the server cannot run)

export function resolvePath(doc: unknown, path: string): [boolean, unknown] {
  let node: unknown = doc;
  for (const segment of path.split(".")) {
    if (Array.isArray(node)) {
      if (!/^\d+$/.test(segment)) return [false, null];
      const index = Number(segment);
      if (index >= node.length) return [false, null];
      node = node[index];
    } else if (node !== null && typeof node === "object") {
      const map = node as Record<string, unknown>;
      if (!(segment in map)) return [false, null];
      node = map[segment];
    } else {
      return [false, null];
    }
  }
  return [true, node];
}

export function scalarEq(a: unknown, b: unknown): boolean {
  if (a === null || b === null) return a === null && b === null;
  if (typeof a === "boolean" || typeof b === "boolean") {
    return typeof a === "boolean" && typeof b === "boolean" && a === b;
  }
  if (typeof a === "number" && typeof b === "number") return a === b;
  if (typeof a === "string" && typeof b === "string") return a === b;
  return false;
}

function cmpMatches(node: Cmp, doc: unknown): boolean {
  const [found, value] = resolvePath(doc, node.path);
  if (node.op === "exists") return found;
  if (!found) return false;
  if (node.op === "=") return scalarEq(value, node.value);
  if (node.op === "!=") return !scalarEq(value, node.value);
  if (node.op === "~") {
    return (
      typeof value === "string" &&
      typeof node.value === "string" &&
      value.includes(node.value)
    );
  }
  if (node.op === "in") {
    return (node.value as Literal[]).some((item) => scalarEq(value, item));
  }
  const bothNumbers = typeof value === "number" && typeof node.value === "number";
  const bothStrings = typeof value === "string" && typeof node.value === "string";
  if (!bothNumbers && !bothStrings) return false;
  const left = value as number | string;
  const right = node.value as number | string;
  switch (node.op) {
    case "<":
      return left < right;
    case "<=":
      return left <= right;
    case ">":
      return left > right;
    case ">=":
      return left >= right;
  }
  throw new Error(`unknown comparison ${node.op}`);
}

export function evaluate(ast: FilterNode, doc: unknown): boolean {
  switch (ast.kind) {
    case "or":
      return ast.items.some((item) => evaluate(item, doc));
    case "and":
      return ast.items.every((item) => evaluate(item, doc));
    case "not":
      return !evaluate(ast.expr, doc);
    case "cmp":
      return cmpMatches(ast, doc);
  }
}

// ---------------------------------------------------------------------------
// Compilation to the server's filter parameter

export function compileFilter(ast: FilterNode): Compiled {
  const residual: Compiled = { where: null, residual: (doc) => evaluate(ast, doc) };
  const comparisons: Cmp[] = [];
  const stack: FilterNode[] = [ast];
  while (stack.length > 0) {
    const node = stack.pop() as FilterNode;
    if (node.kind === "and") {
      for (let i = node.items.length - 1; i >= 0; i--) stack.push(node.items[i]);
    } else if (node.kind === "cmp") {
      comparisons.push(node);
    } else {
      return residual;
    }
  }

  const conditions: Record<string, Record<string, unknown>> = {};
  for (const node of comparisons) {
    let op: string;
    let operand: unknown;
    if (node.op === "exists") {
      op = "$exists";
      operand = true;
    } else if (node.op === "in") {
      op = "$in";
      operand = node.value;
    } else {
      op = OP_TO_FILTER[node.op];
      operand = node.value;
    }
    const entry = (conditions[node.path] ??= {});
    if (op in entry) return residual;
    entry[op] = operand;
  }

  const where: Record<string, unknown> = {};
  for (const [path, cond] of Object.entries(conditions)) {
    const keys = Object.keys(cond);
    where[path] = keys.length === 1 && keys[0] === "$eq" ? cond["$eq"] : cond;
  }
  return { where, residual: null };
}

// Blank text selects everything; anything else must parse.
export function compileFilterText(text: string): Compiled {
  if (text.trim() === "") return { where: {}, residual: null };
  return compileFilter(parse(text));
}
