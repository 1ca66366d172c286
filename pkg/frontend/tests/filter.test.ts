import { describe, expect, it } from "vitest";

import {
  compileFilter,
  compileFilterText,
  evaluate,
  FilterSyntaxError,
  parse,
  printFilter,
  resolvePath,
  scalarEq,
  type Cmp,
  type FilterNode,
  type Literal,
} from "../src/filter.js";

const cmp = (path: string, op: string, value: Literal | Literal[]): Cmp => ({
  kind: "cmp",
  path,
  op,
  value,
});

describe("parse", () => {
  it("reads the experiment-name filter into one equality", () => {
    expect(parse('experiment.name = "get_movie"')).toEqual(
      cmp("experiment.name", "=", "get_movie"),
    );
  });

  it("binds and tighter than or", () => {
    const ast = parse("a = 1 or b = 2 and c = 3");
    expect(ast).toEqual({
      kind: "or",
      items: [
        cmp("a", "=", 1),
        { kind: "and", items: [cmp("b", "=", 2), cmp("c", "=", 3)] },
      ],
    });
  });

  it("parentheses regroup", () => {
    const ast = parse("(a = 1 or b = 2) and c = 3");
    expect(ast).toEqual({
      kind: "and",
      items: [
        { kind: "or", items: [cmp("a", "=", 1), cmp("b", "=", 2)] },
        cmp("c", "=", 3),
      ],
    });
  });

  it("keywords are case-insensitive", () => {
    expect(parse("a = 1 AND NOT b EXISTS")).toEqual({
      kind: "and",
      items: [cmp("a", "=", 1), { kind: "not", expr: cmp("b", "exists", true) }],
    });
    expect(parse("a IN [1, 2]")).toEqual(cmp("a", "in", [1, 2]));
    expect(parse("a = TRUE")).toEqual(cmp("a", "=", true));
  });

  it("numbers span word-dot-word tokens", () => {
    expect(parse("a = 3.14")).toEqual(cmp("a", "=", 3.14));
    expect(parse("a = -2.25")).toEqual(cmp("a", "=", -2.25));
    expect(parse("a = 1e-9")).toEqual(cmp("a", "=", 1e-9));
    expect(parse("a = 1.5e-9")).toEqual(cmp("a", "=", 1.5e-9));
    expect(parse("a = 1e22")).toEqual(cmp("a", "=", 1e22));
  });

  it("string escapes decode as JSON", () => {
    expect(parse('a = "he said \\"hi\\""')).toEqual(cmp("a", "=", 'he said "hi"'));
    expect(parse('a = "tab\\tend"')).toEqual(cmp("a", "=", "tab\tend"));
  });

  it("dotted paths take numeric segments", () => {
    expect(parse("sources.0.1 exists")).toEqual(cmp("sources.0.1", "exists", true));
  });

  it("reserved words cannot start a path", () => {
    expect(() => parse("exists = 1")).toThrow(FilterSyntaxError);
    expect(() => parse("OR = 1")).toThrow(FilterSyntaxError);
  });

  const failures: [string, number, string][] = [
    ["a = ", 5, "end of input"],
    ["= 1", 1, "="],
    ["a = 1 b = 2", 7, "b"],
    ['tag ~ "café" x', 15, "x"], // offsets count UTF-8 bytes
  ];
  for (const [text, offset, found] of failures) {
    it(`rejects ${JSON.stringify(text)} at byte offset ${offset}`, () => {
      let caught: FilterSyntaxError | null = null;
      try {
        parse(text);
      } catch (err) {
        caught = err as FilterSyntaxError;
      }
      expect(caught).toBeInstanceOf(FilterSyntaxError);
      expect(caught?.offset).toBe(offset);
      expect(caught?.found).toBe(found);
    });
  }
});

describe("printFilter", () => {
  it("renders canonical text", () => {
    expect(printFilter(parse('a=1 and b~"x" or not c exists'))).toBe(
      'a = 1 and b ~ "x" or not c exists',
    );
    expect(printFilter(parse("a in [1, 2.5, null]"))).toBe("a in [1, 2.5, null]");
  });

  it("parenthesizes children the parser would flatten", () => {
    const nested: FilterNode = {
      kind: "and",
      items: [
        cmp("a", "=", 1),
        { kind: "and", items: [cmp("b", "=", 2), cmp("c", "=", 3)] },
      ],
    };
    expect(printFilter(nested)).toBe("a = 1 and (b = 2 and c = 3)");
    expect(parse(printFilter(nested))).toEqual(nested);
  });

  it("normalizes exponent spelling to stay inside the grammar", () => {
    expect(printFilter(cmp("a", "=", 1e22))).toBe("a = 1e22");
    expect(parse(printFilter(cmp("a", "=", 1e22)))).toEqual(cmp("a", "=", 1e22));
  });
});

// deterministic generator for the round-trip property
function mulberry32(seed: number): () => number {
  return () => {
    seed |= 0;
    seed = (seed + 0x6d2b79f5) | 0;
    let t = Math.imul(seed ^ (seed >>> 15), 1 | seed);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

const SEGMENTS = ["config", "gain", "x-y", "_z", "0", "status", "name"];
const STRINGS = ["", "a", 'he said "hi"', "back\\slash", "München", "a.b", "get_movie"];
const FLOATS = [0.5, -2.25, 3.14159, 1e-9, 12345.678, 1e22, -1.5];

function pick<T>(rnd: () => number, pool: T[]): T {
  return pool[Math.floor(rnd() * pool.length)];
}

function randomLiteral(rnd: () => number): Literal {
  const kind = Math.floor(rnd() * 5);
  if (kind === 0) return Math.floor(rnd() * 101) - 50;
  if (kind === 1) return pick(rnd, FLOATS);
  if (kind === 2) return pick(rnd, STRINGS);
  if (kind === 3) return rnd() < 0.5;
  return null;
}

function randomPath(rnd: () => number): string {
  const count = 1 + Math.floor(rnd() * 3);
  return Array.from({ length: count }, () => pick(rnd, SEGMENTS)).join(".");
}

function randomCmp(rnd: () => number): Cmp {
  const roll = rnd();
  if (roll < 0.15) return cmp(randomPath(rnd), "exists", true);
  if (roll < 0.3) {
    const values = Array.from({ length: 1 + Math.floor(rnd() * 3) }, () =>
      randomLiteral(rnd),
    );
    return cmp(randomPath(rnd), "in", values);
  }
  const op = pick(rnd, ["=", "!=", "<", "<=", ">", ">=", "~"]);
  const value = op === "~" ? pick(rnd, STRINGS) : randomLiteral(rnd);
  return cmp(randomPath(rnd), op, value);
}

function randomAst(rnd: () => number, depth = 0): FilterNode {
  const roll = rnd();
  if (depth >= 3 || roll < 0.45) return randomCmp(rnd);
  if (roll < 0.6) return { kind: "not", expr: randomAst(rnd, depth + 1) };
  const items = Array.from({ length: 2 + Math.floor(rnd() * 2) }, () =>
    randomAst(rnd, depth + 1),
  );
  return roll < 0.8 ? { kind: "and", items } : { kind: "or", items };
}

describe("round trip", () => {
  it("200 random ASTs survive print-then-parse", () => {
    const rnd = mulberry32(990017);
    for (let i = 0; i < 200; i++) {
      const ast = randomAst(rnd);
      const text = printFilter(ast);
      expect(parse(text), text).toEqual(ast);
    }
  });

  it("printing is idempotent", () => {
    const rnd = mulberry32(7042);
    for (let i = 0; i < 50; i++) {
      const text = printFilter(randomAst(rnd));
      expect(printFilter(parse(text))).toBe(text);
    }
  });
});

describe("evaluate", () => {
  const doc = {
    experiment: { name: "get_movie" },
    config: { gain: 10, exposure: 100.0, on: true, note: null },
    tags: ["alpha", "beta"],
    status: "COMPLETED",
  };

  it("walks dotted paths and list indexes", () => {
    expect(resolvePath(doc, "config.gain")).toEqual([true, 10]);
    expect(resolvePath(doc, "tags.1")).toEqual([true, "beta"]);
    expect(resolvePath(doc, "tags.7")).toEqual([false, null]);
    expect(resolvePath(doc, "config.missing")).toEqual([false, null]);
    expect(resolvePath(doc, "config.note")).toEqual([true, null]);
  });

  it("equality separates bool from number but not int from float", () => {
    expect(scalarEq(1, 1.0)).toBe(true);
    expect(scalarEq(true, 1)).toBe(false);
    expect(scalarEq(null, null)).toBe(true);
    expect(scalarEq("1", 1)).toBe(false);
    expect(evaluate(parse("config.on = true"), doc)).toBe(true);
    expect(evaluate(parse("config.on = 1"), doc)).toBe(false);
  });

  it("ordering only compares like types", () => {
    expect(evaluate(parse("config.gain > 5"), doc)).toBe(true);
    expect(evaluate(parse('status > "A"'), doc)).toBe(true);
    expect(evaluate(parse('config.gain > "5"'), doc)).toBe(false);
    expect(evaluate(parse("config.on > 0"), doc)).toBe(false);
  });

  it("missing paths fail everything except negated exists", () => {
    expect(evaluate(parse("config.missing = 1"), doc)).toBe(false);
    expect(evaluate(parse("config.missing != 1"), doc)).toBe(false);
    expect(evaluate(parse("not config.missing exists"), doc)).toBe(true);
    expect(evaluate(parse("config.note exists"), doc)).toBe(true);
  });

  it("substring and membership", () => {
    expect(evaluate(parse('experiment.name ~ "movie"'), doc)).toBe(true);
    expect(evaluate(parse('experiment.name ~ "movies"'), doc)).toBe(false);
    expect(evaluate(parse("config.gain in [5, 10, 15]"), doc)).toBe(true);
    expect(evaluate(parse('tags.0 in ["alpha", "x"]'), doc)).toBe(true);
  });
});

describe("compileFilter", () => {
  it("compiles the experiment-name filter to its server form", () => {
    const compiled = compileFilterText('experiment.name = "get_movie"');
    expect(compiled.where).toEqual({ "experiment.name": "get_movie" });
  });

  it("merges distinct operators per path", () => {
    const compiled = compileFilter(parse("config.gain > 3 and config.gain <= 9"));
    expect(compiled.where).toEqual({ "config.gain": { $gt: 3, $lte: 9 } });
  });

  it("maps every comparison operator", () => {
    const compiled = compileFilter(
      parse('a != 1 and b ~ "x" and c exists and d in [1, 2] and e < 5 and f >= 0'),
    );
    expect(compiled.where).toEqual({
      a: { $ne: 1 },
      b: { $contains: "x" },
      c: { $exists: true },
      d: { $in: [1, 2] },
      e: { $lt: 5 },
      f: { $gte: 0 },
    });
  });

  it("blank text selects everything", () => {
    expect(compileFilterText("  ").where).toEqual({});
  });

  it("or, not, and duplicate operators fall back to a residual predicate", () => {
    for (const text of ["a = 1 or b = 2", "not a = 1", "a > 1 and a > 2"]) {
      const compiled = compileFilterText(text);
      expect(compiled.where).toBeNull();
      expect(typeof compiled.residual).toBe("function");
    }
    const compiled = compileFilterText("a = 1 or a = 2");
    expect(compiled.residual?.({ a: 2 })).toBe(true);
    expect(compiled.residual?.({ a: 3 })).toBe(false);
  });

  it("nested ands flatten into one conjunction", () => {
    const compiled = compileFilter(parse("(a = 1 and b = 2) and c = 3"));
    expect(compiled.where).toEqual({ a: 1, b: 2, c: 3 });
  });
});
