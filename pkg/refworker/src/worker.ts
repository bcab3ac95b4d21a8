#!/usr/bin/env node
/** Reference evaluation worker.
 *
 * Serves the line-delimited JSON protocol on stdin/stdout: one response per
 * request line, matched by id.  `evaluate` scores an architecture document
 * with a documented toy objective (`--trainer` swaps in a tiny deterministic
 * regression fit); `freeze` records the frozen architecture and acknowledges.
 * Malformed lines get an error response with id 0 (or the request's id when
 * one can be parsed).  Exits cleanly when stdin closes.
 */

import { stdin, stdout, argv } from "node:process";
import * as readline from "node:readline";

import { pureScore, trainerScore } from "./objective.js";
import type { ArchitectureDocument, Request, Response } from "./protocol.js";

interface WorkerState {
  frozen: ArchitectureDocument | null;
  evaluations: number;
  useTrainer: boolean;
}

function respond(res: Response): void {
  stdout.write(JSON.stringify(res) + "\n");
}

function requestId(value: unknown): number {
  if (value !== null && typeof value === "object") {
    const id = (value as { id?: unknown }).id;
    if (typeof id === "number" && Number.isInteger(id) && id >= 0) {
      return id;
    }
  }
  return 0;
}

export function handleLine(line: string, state: WorkerState): Response {
  let parsed: unknown;
  try {
    parsed = JSON.parse(line);
  } catch (err) {
    return { id: 0, error: `malformed JSON line: ${(err as Error).message}` };
  }
  const id = requestId(parsed);
  if (id === 0) {
    return { id: 0, error: "request must carry a positive integer id" };
  }
  const msg = parsed as Partial<Request>;
  if (msg.kind === "evaluate") {
    if (msg.arch === undefined || typeof msg.arch !== "object") {
      return { id, error: "evaluate request without an arch document" };
    }
    state.evaluations += 1;
    const score = state.useTrainer ? trainerScore(msg.arch) : pureScore(msg.arch);
    return { id, score };
  }
  if (msg.kind === "freeze") {
    if (msg.arch === undefined || typeof msg.arch !== "object") {
      return { id, error: "freeze request without an arch document" };
    }
    state.frozen = msg.arch;
    return { id, ack: true };
  }
  return { id, error: `unknown request kind ${JSON.stringify(msg.kind)}` };
}

export async function serve(): Promise<void> {
  const state: WorkerState = {
    frozen: null,
    evaluations: 0,
    useTrainer: argv.includes("--trainer"),
  };
  const lines = readline.createInterface({ input: stdin, crlfDelay: Infinity });
  for await (const line of lines) {
    if (line.trim().length === 0) {
      continue;
    }
    respond(handleLine(line, state));
  }
}

const isMain = import.meta.url === `file://${process.argv[1]}`;
if (isMain) {
  serve()
    .then(() => process.exit(0))
    .catch((err) => {
      console.error(`worker fatal error: ${err}`);
      process.exit(1);
    });
}
