/**
 * Minimal safetensors reader/writer: u64-LE header length, JSON header
 * mapping tensor names to {dtype, shape, data_offsets}, raw row-major
 * little-endian data. Only F32/F64 are supported here.
 */

export interface TensorView {
  dtype: "F32" | "F64";
  shape: number[];
  /** Values upcast to f64 in row-major order. */
  data: Float64Array;
}

export class SafetensorsError extends Error {}

interface HeaderEntry {
  dtype: string;
  shape: number[];
  data_offsets: [number, number];
}

export function asArrayBuffer(data: Uint8Array | ArrayBuffer): ArrayBuffer {
  if (data instanceof ArrayBuffer) return data;
  return data.buffer.slice(data.byteOffset, data.byteOffset + data.byteLength) as ArrayBuffer;
}

export function parseSafetensors(input: Uint8Array | ArrayBuffer): Map<string, TensorView> {
  const buffer = asArrayBuffer(input);
  if (buffer.byteLength < 8) {
    throw new SafetensorsError("file too short for a safetensors header");
  }
  const view = new DataView(buffer);
  const headerSize = Number(view.getBigUint64(0, true));
  if (8 + headerSize > buffer.byteLength) {
    throw new SafetensorsError("header length exceeds file size");
  }
  let header: Record<string, HeaderEntry>;
  try {
    header = JSON.parse(new TextDecoder("utf-8").decode(buffer.slice(8, 8 + headerSize)));
  } catch (err) {
    throw new SafetensorsError(`invalid header JSON: ${err}`);
  }
  const dataStart = 8 + headerSize;
  const tensors = new Map<string, TensorView>();
  for (const [name, entry] of Object.entries(header)) {
    if (name === "__metadata__") continue;
    const { dtype, shape, data_offsets } = entry;
    if (dtype !== "F32" && dtype !== "F64") {
      throw new SafetensorsError(`tensor ${name}: unsupported dtype ${dtype}`);
    }
    const [start, end] = data_offsets;
    const count = shape.reduce((a, b) => a * b, 1);
    const itemSize = dtype === "F32" ? 4 : 8;
    if (end - start !== count * itemSize || dataStart + end > buffer.byteLength) {
      throw new SafetensorsError(`tensor ${name}: data offsets inconsistent with shape`);
    }
    const slice = buffer.slice(dataStart + start, dataStart + end);
    const data =
      dtype === "F32"
        ? Float64Array.from(new Float32Array(slice))
        : new Float64Array(slice);
    tensors.set(name, { dtype, shape, data });
  }
  return tensors;
}

export function encodeSafetensors(
  tensors: Map<string, { dtype: "F32" | "F64"; shape: number[]; data: Float64Array }>
): Uint8Array {
  const header: Record<string, HeaderEntry> = {};
  let offset = 0;
  const blobs: Uint8Array[] = [];
  for (const [name, t] of tensors) {
    const count = t.shape.reduce((a, b) => a * b, 1);
    if (count !== t.data.length) {
      throw new SafetensorsError(`tensor ${name}: shape does not match data length`);
    }
    const bytes =
      t.dtype === "F32"
        ? new Uint8Array(Float32Array.from(t.data).buffer)
        : new Uint8Array(Float64Array.from(t.data).buffer);
    header[name] = { dtype: t.dtype, shape: t.shape, data_offsets: [offset, offset + bytes.length] };
    offset += bytes.length;
    blobs.push(bytes);
  }
  const headerBytes = new TextEncoder().encode(JSON.stringify(header));
  const out = new Uint8Array(8 + headerBytes.length + offset);
  new DataView(out.buffer).setBigUint64(0, BigInt(headerBytes.length), true);
  out.set(headerBytes, 8);
  let cursor = 8 + headerBytes.length;
  for (const blob of blobs) {
    out.set(blob, cursor);
    cursor += blob.length;
  }
  return out;
}
