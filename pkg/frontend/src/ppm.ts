/** Binary PPM (P6) codec: the only image format the agent accepts.
 *
 * Camera frames and dropped files are converted to PPM in the browser; the
 * agent never needs an image decoder beyond this exact grammar (magic "P6",
 * ASCII width/height, maxval 255, single whitespace separators, raw RGB8).
 */

export interface RgbImage {
  width: number;
  height: number;
  pixels: Uint8Array; // RGB8 row-major, 3*width*height bytes
}

const WHITESPACE = new Set([0x20, 0x09, 0x0a, 0x0d, 0x0b, 0x0c]);
export const MAX_DIMENSION = 4096;

export function encodePPM(image: RgbImage): Uint8Array {
  const { width, height, pixels } = image;
  if (pixels.length !== 3 * width * height) {
    throw new Error(`pixel payload is ${pixels.length} bytes, expected ${3 * width * height}`);
  }
  const header = new TextEncoder().encode(`P6\n${width} ${height}\n255\n`);
  const out = new Uint8Array(header.length + pixels.length);
  out.set(header);
  out.set(pixels, header.length);
  return out;
}

export function decodePPM(data: Uint8Array): RgbImage {
  if (data[0] !== 0x50 || data[1] !== 0x36) throw new Error("missing P6 magic");
  let pos = 2;
  if (!WHITESPACE.has(data[pos])) throw new Error("magic not followed by whitespace");
  pos += 1;
  const fields: number[] = [];
  for (let i = 0; i < 3; i++) {
    let token = "";
    while (pos < data.length && !WHITESPACE.has(data[pos])) {
      token += String.fromCharCode(data[pos]);
      pos += 1;
    }
    if (!token || pos >= data.length) throw new Error("bad header token");
    if (!/^[0-9]+$/.test(token)) throw new Error(`non-numeric header token ${token}`);
    fields.push(parseInt(token, 10));
    pos += 1; // the single whitespace terminator
  }
  const [width, height, maxval] = fields;
  if (maxval !== 255) throw new Error(`maxval ${maxval}, only 255 supported`);
  if (width < 1 || width > MAX_DIMENSION || height < 1 || height > MAX_DIMENSION) {
    throw new Error(`dimensions ${width}x${height} out of range`);
  }
  const pixels = data.subarray(pos);
  if (pixels.length !== 3 * width * height) {
    throw new Error(`raster is ${pixels.length} bytes, expected ${3 * width * height}`);
  }
  return { width, height, pixels: new Uint8Array(pixels) };
}

/** RGBA (canvas ImageData layout) -> RGB. */
export function rgbaToRgb(rgba: Uint8ClampedArray | Uint8Array, width: number, height: number): RgbImage {
  const pixels = new Uint8Array(3 * width * height);
  for (let i = 0; i < width * height; i++) {
    pixels[3 * i] = rgba[4 * i];
    pixels[3 * i + 1] = rgba[4 * i + 1];
    pixels[3 * i + 2] = rgba[4 * i + 2];
  }
  return { width, height, pixels };
}

/** RGB -> RGBA bytes ready for `new ImageData(...)`. */
export function rgbToRgba(image: RgbImage): Uint8ClampedArray {
  const out = new Uint8ClampedArray(4 * image.width * image.height);
  for (let i = 0; i < image.width * image.height; i++) {
    out[4 * i] = image.pixels[3 * i];
    out[4 * i + 1] = image.pixels[3 * i + 1];
    out[4 * i + 2] = image.pixels[3 * i + 2];
    out[4 * i + 3] = 255;
  }
  return out;
}
