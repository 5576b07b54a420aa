/**
 * QTOE binary format: magic "QTOE", u32 version=1, u64 numEntities,
 * u64 numRelations, u64 dim, then entity blocks followed by relation
 * blocks, each of dim interleaved (f64 re, f64 im) pairs. Little-endian.
 */

import type { ComplexTable } from "./complex.js";
import { asArrayBuffer } from "./safetensors.js";

export class QtoeError extends Error {}

const MAGIC = [0x51, 0x54, 0x4f, 0x45]; // "QTOE"

export function encodeQtoe(entities: ComplexTable, relations: ComplexTable): Uint8Array {
  if (entities.dim !== relations.dim) {
    throw new QtoeError("entity/relation dimension mismatch");
  }
  const d = entities.dim;
  const total = 4 + 4 + 24 + (entities.rows + relations.rows) * d * 16;
  const out = new Uint8Array(total);
  const view = new DataView(out.buffer);
  out.set(MAGIC, 0);
  view.setUint32(4, 1, true);
  view.setBigUint64(8, BigInt(entities.rows), true);
  view.setBigUint64(16, BigInt(relations.rows), true);
  view.setBigUint64(24, BigInt(d), true);
  let cursor = 32;
  for (const table of [entities, relations]) {
    for (let i = 0; i < table.rows * d; i++) {
      view.setFloat64(cursor, table.re[i], true);
      view.setFloat64(cursor + 8, table.im[i], true);
      cursor += 16;
    }
  }
  return out;
}

export function parseQtoe(input: Uint8Array | ArrayBuffer): { entities: ComplexTable; relations: ComplexTable } {
  const buffer = asArrayBuffer(input);
  const bytes = new Uint8Array(buffer);
  if (bytes.length < 32 || !MAGIC.every((b, i) => bytes[i] === b)) {
    throw new QtoeError("not a QTOE file");
  }
  const view = new DataView(buffer);
  const version = view.getUint32(4, true);
  if (version !== 1) {
    throw new QtoeError(`unsupported QTOE version ${version}`);
  }
  const rowsE = Number(view.getBigUint64(8, true));
  const rowsR = Number(view.getBigUint64(16, true));
  const d = Number(view.getBigUint64(24, true));
  const expected = 32 + (rowsE + rowsR) * d * 16;
  if (buffer.byteLength !== expected) {
    throw new QtoeError(
      `file length ${buffer.byteLength} does not match header (expected ${expected})`
    );
  }
  let cursor = 32;
  const read = (rows: number): ComplexTable => {
    const re = new Float64Array(rows * d);
    const im = new Float64Array(rows * d);
    for (let i = 0; i < rows * d; i++) {
      re[i] = view.getFloat64(cursor, true);
      im[i] = view.getFloat64(cursor + 8, true);
      cursor += 16;
    }
    return { rows, dim: d, re, im };
  };
  const entities = read(rowsE);
  const relations = read(rowsR);
  return { entities, relations };
}
