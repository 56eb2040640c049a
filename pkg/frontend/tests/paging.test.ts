import { describe, expect, it } from "vitest";
import { PAGE_SIZE, clampPage, pageCount, pageWindow } from "../src/paging.js";

describe("dashboard paging", () => {
  it("pages at exactly 25 items", () => {
    expect(PAGE_SIZE).toBe(25);
    expect(pageCount(0)).toBe(1);
    expect(pageCount(25)).toBe(1);
    expect(pageCount(26)).toBe(2);
    expect(pageCount(30)).toBe(2);
  });

  it("page 2 of 30 shows items 26-30", () => {
    expect(pageWindow(2, 30)).toEqual({ from: 26, to: 30 });
    expect(pageWindow(1, 30)).toEqual({ from: 1, to: 25 });
    expect(pageWindow(1, 0)).toEqual({ from: 0, to: 0 });
  });

  it("clamps out-of-range pages", () => {
    expect(clampPage(0, 30)).toBe(1);
    expect(clampPage(9, 30)).toBe(2);
    expect(clampPage(2, 0)).toBe(1);
  });
});
