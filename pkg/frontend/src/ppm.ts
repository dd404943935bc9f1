/**
 * Minimal binary PPM/PGM (P5/P6) reader and PGM writer.
 *
 * Color input reduces to BT.601 luma with the same rounding as the
 * pruning toolkit (floor(0.299R + 0.587G + 0.114B + 0.5)), so both sides
 * see identical patch grids for a shared fixture.
 */

export interface GrayImage {
  width: number;
  height: number;
  /** row-major luminance samples */
  pixels: Uint8Array;
}

function parseHeader(buf: Buffer): { magic: string; values: number[]; offset: number } {
  let pos = 0;
  const readToken = (): string => {
    // skip whitespace and #-comments
    for (;;) {
      while (pos < buf.length && /\s/.test(String.fromCharCode(buf[pos]))) pos++;
      if (pos < buf.length && buf[pos] === 0x23) {
        while (pos < buf.length && buf[pos] !== 0x0a) pos++;
      } else {
        break;
      }
    }
    const start = pos;
    while (pos < buf.length && !/\s/.test(String.fromCharCode(buf[pos]))) pos++;
    return buf.subarray(start, pos).toString("ascii");
  };
  const magic = readToken();
  const values = [Number(readToken()), Number(readToken()), Number(readToken())];
  pos++; // single whitespace byte after maxval
  return { magic, values, offset: pos };
}

export function decodePpm(buf: Buffer): GrayImage {
  const { magic, values, offset } = parseHeader(buf);
  const [width, height, maxval] = values;
  if (magic !== "P5" && magic !== "P6") {
    throw new Error(`unsupported image magic ${JSON.stringify(magic)} (binary P5/P6 only)`);
  }
  if (!Number.isInteger(width) || !Number.isInteger(height) || width < 1 || height < 1) {
    throw new Error(`bad image dimensions ${width}x${height}`);
  }
  if (maxval !== 255) {
    throw new Error(`unsupported maxval ${maxval} (8-bit only)`);
  }
  const channels = magic === "P6" ? 3 : 1;
  const need = width * height * channels;
  const data = buf.subarray(offset, offset + need);
  if (data.length !== need) {
    throw new Error(`truncated pixel data: have ${data.length}, need ${need}`);
  }
  const pixels = new Uint8Array(width * height);
  if (channels === 1) {
    pixels.set(data);
  } else {
    for (let i = 0; i < width * height; i++) {
      const r = data[3 * i];
      const g = data[3 * i + 1];
      const b = data[3 * i + 2];
      const luma = Math.floor(0.299 * r + 0.587 * g + 0.114 * b + 0.5);
      pixels[i] = Math.min(255, Math.max(0, luma));
    }
  }
  return { width, height, pixels };
}

export function encodePgm(img: GrayImage): Buffer {
  const header = Buffer.from(`P5\n${img.width} ${img.height}\n255\n`, "ascii");
  return Buffer.concat([header, Buffer.from(img.pixels)]);
}
