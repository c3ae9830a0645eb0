import { describe, expect, it } from "vitest";

import { decodePpmBase64 } from "../src/ppm.js";

function ppm(width: number, height: number, rgb: number[]): string {
  const header = Buffer.from(`P6\n${width} ${height}\n255\n`, "ascii");
  return Buffer.concat([header, Buffer.from(rgb)]).toString("base64");
}

describe("ppm decode", () => {
  it("decodes a 2x2 frame into rgba", () => {
    const f = decodePpmBase64(ppm(2, 2, [
      255, 0, 0, 0, 255, 0,
      0, 0, 255, 9, 9, 9,
    ]));
    expect(f.width).toBe(2);
    expect(f.height).toBe(2);
    expect(Array.from(f.rgba.subarray(0, 8))).toEqual([255, 0, 0, 255, 0, 255, 0, 255]);
    expect(f.rgba[15]).toBe(255); // alpha everywhere
  });

  it("rejects wrong magic bytes", () => {
    const bad = Buffer.from("P5\n2 2\n255\n0000", "ascii").toString("base64");
    expect(() => decodePpmBase64(bad)).toThrow(/P6/);
  });

  it("rejects short payloads", () => {
    expect(() => decodePpmBase64(ppm(4, 4, [1, 2, 3]))).toThrow(/short/);
  });
});
