/**
 * Checkpoint-to-QTOE conversion and export verification.
 *
 * The checkpoint is a safetensors file holding complex embeddings as real
 * tensors of shape [rows, 2*dim], either "split" (first dim columns real,
 * last dim imaginary) or "interleaved" ((re, im) pairs). Entity rows must
 * match the entity vocab; relation rows must equal twice the raw relation
 * vocab (forward/inverse pairs, engine id order) unless inverse rows are
 * derived explicitly as complex conjugates.
 */

import * as fs from "node:fs";

import { complexScore, type ComplexTable } from "./complex.js";
import { encodeQtoe, parseQtoe } from "./qtoe.js";
import { parseSafetensors, type TensorView } from "./safetensors.js";

export type Layout = "split" | "interleaved";

export interface ExportManifest {
  checkpointPath: string;
  entityVocabPath: string;
  relationVocabPath: string;
  outputPath: string;
  layout: Layout;
  entityTensor?: string;
  relationTensor?: string;
  /** Synthesize inverse-relation rows as conjugates when the checkpoint
   * stores only forward relations. Off by default: conventions differ
   * between checkpoints and verification cannot guard a silent guess. */
  deriveInverses?: boolean;
}

export interface ExportReport {
  numEntities: number;
  numRelations: number;
  dim: number;
  outputPath: string;
}

export interface VerifyReport {
  sampled: number;
  matched: number;
  mismatches: { h: number; r: number; t: number; source: number; exported: number }[];
  headerOk: boolean;
}

export class ExportError extends Error {}

export function readVocab(path: string): string[] {
  const text = fs.readFileSync(path, "utf-8");
  const lines = text.split("\n");
  if (lines.length && lines[lines.length - 1] === "") lines.pop();
  return lines;
}

export function toComplexTable(tensor: TensorView, layout: Layout, name: string): ComplexTable {
  if (tensor.shape.length !== 2) {
    throw new ExportError(`tensor ${name}: expected 2 dimensions, got ${tensor.shape.length}`);
  }
  const [rows, width] = tensor.shape;
  if (width % 2 !== 0) {
    throw new ExportError(`tensor ${name}: width ${width} is not even (re/im halves)`);
  }
  const dim = width / 2;
  const re = new Float64Array(rows * dim);
  const im = new Float64Array(rows * dim);
  for (let i = 0; i < rows; i++) {
    const rowOff = i * width;
    for (let k = 0; k < dim; k++) {
      if (layout === "split") {
        re[i * dim + k] = tensor.data[rowOff + k];
        im[i * dim + k] = tensor.data[rowOff + dim + k];
      } else {
        re[i * dim + k] = tensor.data[rowOff + 2 * k];
        im[i * dim + k] = tensor.data[rowOff + 2 * k + 1];
      }
    }
  }
  return { rows, dim, re, im };
}

function conjugateInverses(forward: ComplexTable): ComplexTable {
  // engine relation ids are 2k (forward) / 2k+1 (inverse); for the
  // trilinear form the inverse relation's embedding is the conjugate
  const rows = forward.rows * 2;
  const d = forward.dim;
  const re = new Float64Array(rows * d);
  const im = new Float64Array(rows * d);
  for (let k = 0; k < forward.rows; k++) {
    for (let j = 0; j < d; j++) {
      re[(2 * k) * d + j] = forward.re[k * d + j];
      im[(2 * k) * d + j] = forward.im[k * d + j];
      re[(2 * k + 1) * d + j] = forward.re[k * d + j];
      im[(2 * k + 1) * d + j] = -forward.im[k * d + j];
    }
  }
  return { rows, dim: d, re, im };
}

export function loadCheckpointTables(manifest: ExportManifest): {
  entities: ComplexTable;
  relations: ComplexTable;
} {
  const tensors = parseSafetensors(fs.readFileSync(manifest.checkpointPath));
  const entityName = manifest.entityTensor ?? "entity_embeddings";
  const relationName = manifest.relationTensor ?? "relation_embeddings";
  for (const name of [entityName, relationName]) {
    if (!tensors.has(name)) {
      throw new ExportError(
        `checkpoint has no tensor ${name} (found: ${[...tensors.keys()].join(", ")})`
      );
    }
  }
  const entities = toComplexTable(tensors.get(entityName)!, manifest.layout, entityName);
  let relations = toComplexTable(tensors.get(relationName)!, manifest.layout, relationName);

  const numEntities = readVocab(manifest.entityVocabPath).length;
  const numRawRelations = readVocab(manifest.relationVocabPath).length;
  if (entities.rows !== numEntities) {
    throw new ExportError(
      `entity rows ${entities.rows} do not match vocab size ${numEntities}`
    );
  }
  if (relations.rows === numRawRelations && manifest.deriveInverses) {
    relations = conjugateInverses(relations);
  }
  if (relations.rows !== 2 * numRawRelations) {
    throw new ExportError(
      `relation rows ${relations.rows} do not match 2x vocab size ${2 * numRawRelations} ` +
        `(forward/inverse pairs; pass --derive-inverses for forward-only checkpoints)`
    );
  }
  if (entities.dim !== relations.dim) {
    throw new ExportError(
      `entity dim ${entities.dim} does not match relation dim ${relations.dim}`
    );
  }
  return { entities, relations };
}

export function exportEmbeddings(manifest: ExportManifest): ExportReport {
  const { entities, relations } = loadCheckpointTables(manifest);
  fs.writeFileSync(manifest.outputPath, encodeQtoe(entities, relations));
  return {
    numEntities: entities.rows,
    numRelations: relations.rows,
    dim: entities.dim,
    outputPath: manifest.outputPath,
  };
}

/** Deterministic 32-bit PRNG for reproducible sampling. */
export function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

export function verifyExport(
  qtoePath: string,
  manifest: ExportManifest,
  sample: number,
  seed = 1,
  tolerance = 1e-9
): VerifyReport {
  const source = loadCheckpointTables(manifest);
  const exported = parseQtoe(fs.readFileSync(qtoePath));
  const headerOk =
    exported.entities.rows === source.entities.rows &&
    exported.relations.rows === source.relations.rows &&
    exported.entities.dim === source.entities.dim;
  const report: VerifyReport = { sampled: 0, matched: 0, mismatches: [], headerOk };
  if (!headerOk || sample === 0) {
    return report;
  }
  const rand = mulberry32(seed);
  const nv = source.entities.rows;
  const nr = source.relations.rows;
  for (let i = 0; i < sample; i++) {
    const h = Math.floor(rand() * nv);
    const r = Math.floor(rand() * nr);
    const t = Math.floor(rand() * nv);
    const a = complexScore(source.entities, source.relations, h, r, t);
    const b = complexScore(exported.entities, exported.relations, h, r, t);
    report.sampled++;
    if (Math.abs(a - b) <= tolerance) {
      report.matched++;
    } else {
      report.mismatches.push({ h, r, t, source: a, exported: b });
    }
  }
  return report;
}
