#!/usr/bin/env node
/**
 * export-embeddings --checkpoint p --entities e.txt --relations r.txt
 *                   --out emb.qtoe [--layout split|interleaved]
 *                   [--verify N] [--seed S] [--derive-inverses]
 *                   [--entity-tensor NAME] [--relation-tensor NAME]
 *
 * Exit codes: 0 ok, 1 verification mismatch, 2 bad input.
 */

import { ExportError, exportEmbeddings, verifyExport, type ExportManifest, type Layout } from "./exporter.js";
import { QtoeError } from "./qtoe.js";
import { SafetensorsError } from "./safetensors.js";

interface Args {
  [key: string]: string | boolean;
}

function parseArgs(argv: string[]): Args {
  const args: Args = {};
  for (let i = 0; i < argv.length; i++) {
    const token = argv[i];
    if (!token.startsWith("--")) {
      throw new ExportError(`unexpected argument ${token}`);
    }
    const key = token.slice(2);
    if (i + 1 < argv.length && !argv[i + 1].startsWith("--")) {
      args[key] = argv[++i];
    } else {
      args[key] = true;
    }
  }
  return args;
}

function requireString(args: Args, key: string): string {
  const value = args[key];
  if (typeof value !== "string") {
    throw new ExportError(`missing required flag --${key}`);
  }
  return value;
}

export function main(argv: string[]): number {
  let args: Args;
  try {
    args = parseArgs(argv);
  } catch (err) {
    console.error(`error: ${(err as Error).message}`);
    return 2;
  }
  try {
    const layout = (args["layout"] as string | undefined) ?? "split";
    if (layout !== "split" && layout !== "interleaved") {
      throw new ExportError(`unknown layout ${layout}`);
    }
    const manifest: ExportManifest = {
      checkpointPath: requireString(args, "checkpoint"),
      entityVocabPath: requireString(args, "entities"),
      relationVocabPath: requireString(args, "relations"),
      outputPath: requireString(args, "out"),
      layout: layout as Layout,
      entityTensor: args["entity-tensor"] as string | undefined,
      relationTensor: args["relation-tensor"] as string | undefined,
      deriveInverses: Boolean(args["derive-inverses"]),
    };
    const report = exportEmbeddings(manifest);
    console.log(
      `wrote ${report.outputPath}: ${report.numEntities} entities, ` +
        `${report.numRelations} relations, dim ${report.dim}`
    );
    const sample = args["verify"] ? Number(args["verify"]) : 0;
    if (args["verify"] !== undefined) {
      const seed = args["seed"] ? Number(args["seed"]) : 1;
      const verification = verifyExport(report.outputPath, manifest, sample, seed);
      if (!verification.headerOk) {
        console.error("verification failed: header does not match the checkpoint");
        return 1;
      }
      console.log(`${verification.matched}/${verification.sampled} sampled scores match`);
      if (verification.mismatches.length > 0) {
        for (const m of verification.mismatches.slice(0, 10)) {
          console.error(
            `mismatch at (${m.h}, ${m.r}, ${m.t}): source ${m.source} vs exported ${m.exported}`
          );
        }
        return 1;
      }
    }
    return 0;
  } catch (err) {
    if (err instanceof ExportError || err instanceof QtoeError || err instanceof SafetensorsError) {
      console.error(`error: ${err.message}`);
      return 2;
    }
    throw err;
  }
}

import { pathToFileURL } from "node:url";

if (process.argv[1] && import.meta.url === pathToFileURL(process.argv[1]).href) {
  process.exit(main(process.argv.slice(2)));
}
