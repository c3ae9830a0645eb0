// Binary PPM (P6) decoding for the base64 frame payloads.

export interface DecodedFrame {
  width: number;
  height: number;
  rgba: Uint8ClampedArray<ArrayBuffer>;
}

function base64ToBytes(b64: string): Uint8Array {
  // atob exists in every browser and in node >= 16, which covers the tests
  const bin = atob(b64);
  const out = new Uint8Array(bin.length);
  for (let i = 0; i < bin.length; i++) out[i] = bin.charCodeAt(i);
  return out;
}

export function decodePpmBase64(b64: string): DecodedFrame {
  const bytes = base64ToBytes(b64);
  // header: "P6" <ws> width <ws> height <ws> maxval <single ws> payload
  let pos = 0;
  const token = (): string => {
    while (pos < bytes.length && isSpace(bytes[pos])) pos++;
    const start = pos;
    while (pos < bytes.length && !isSpace(bytes[pos])) pos++;
    return String.fromCharCode(...bytes.subarray(start, pos));
  };
  const magic = token();
  if (magic !== "P6") throw new Error(`not a P6 ppm (magic ${magic})`);
  const width = parseInt(token(), 10);
  const height = parseInt(token(), 10);
  const maxval = parseInt(token(), 10);
  if (!(width > 0 && height > 0) || maxval !== 255) {
    throw new Error(`unsupported ppm header ${width}x${height}/${maxval}`);
  }
  pos++; // the single whitespace after maxval
  const need = width * height * 3;
  if (bytes.length - pos < need) {
    throw new Error(`short ppm payload: ${bytes.length - pos} < ${need}`);
  }
  const rgba = new Uint8ClampedArray(width * height * 4);
  for (let i = 0, j = pos; i < width * height; i++, j += 3) {
    rgba[4 * i] = bytes[j];
    rgba[4 * i + 1] = bytes[j + 1];
    rgba[4 * i + 2] = bytes[j + 2];
    rgba[4 * i + 3] = 255;
  }
  return { width, height, rgba };
}

function isSpace(b: number): boolean {
  return b === 0x20 || b === 0x09 || b === 0x0a || b === 0x0d;
}
