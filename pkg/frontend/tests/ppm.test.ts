import { describe, expect, it } from "vitest";
import { decodePPM, encodePPM, rgbToRgba, rgbaToRgb } from "../src/ppm.js";

function randomImage(width: number, height: number, seed = 1) {
  let state = seed;
  const pixels = new Uint8Array(3 * width * height);
  for (let i = 0; i < pixels.length; i++) {
    state = (state * 1103515245 + 12345) & 0x7fffffff;
    pixels[i] = state % 256;
  }
  return { width, height, pixels };
}

describe("ppm codec", () => {
  it("round-trips the canonical encoding", () => {
    const image = randomImage(7, 5);
    const bytes = encodePPM(image);
    const header = new TextDecoder().decode(bytes.subarray(0, 10));
    expect(header).toBe("P6\n7 5\n255");
    const back = decodePPM(bytes);
    expect(back.width).toBe(7);
    expect(back.height).toBe(5);
    expect(Array.from(back.pixels)).toEqual(Array.from(image.pixels));
  });

  it("accepts any single whitespace separators", () => {
    const body = new Uint8Array([1, 2, 3]);
    const head = new TextEncoder().encode("P6 1 1 255 ");
    const data = new Uint8Array(head.length + body.length);
    data.set(head);
    data.set(body, head.length);
    expect(Array.from(decodePPM(data).pixels)).toEqual([1, 2, 3]);
  });

  it("rejects bad input", () => {
    expect(() => decodePPM(new TextEncoder().encode("P5\n1 1\n255\nabc"))).toThrow(/magic/);
    const wrongMax = new TextEncoder().encode("P6\n1 1\n254\n");
    expect(() => decodePPM(new Uint8Array([...wrongMax, 0, 0, 0]))).toThrow(/maxval/);
    const short = new TextEncoder().encode("P6\n2 1\n255\n");
    expect(() => decodePPM(new Uint8Array([...short, 0, 0, 0]))).toThrow(/raster/);
  });

  it("converts to and from canvas RGBA", () => {
    const image = randomImage(4, 3);
    const rgba = rgbToRgba(image);
    expect(rgba.length).toBe(4 * 12);
    expect(rgba[3]).toBe(255);
    const back = rgbaToRgb(rgba, 4, 3);
    expect(Array.from(back.pixels)).toEqual(Array.from(image.pixels));
  });
});
