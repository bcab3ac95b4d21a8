/** Toy scoring objectives for the reference worker.
 *
 * Default objective (pure function, no ML dependencies):
 *   utility = sum over backbone records of
 *               0.30 * [t == 3]           (mid temporal kernel preferred)
 *             + 0.15 * [k == 5]           (larger spatial kernel, slight)
 *             + 0.20 * e                  (expansion rate, as a fraction of 6)
 *           + 0.25 * (active fusion taps / total taps)
 *           + 0.10 * (enabled attention bits / total bits)
 *   averaged per record, squashed with a logistic around 0.5, plus a
 *   hash-derived jitter of at most 0.02 that makes distinct architectures
 *   almost surely score differently.  Deterministic and canonical: key or
 *   record order and derived cost fields never change the score.
 *
 * Optional toy trainer (--trainer): fits y = w*x on a tiny synthetic
 *   dataset seeded from the architecture hash and maps the residual loss
 *   into [0, 1].  Exists to demonstrate a worker that does real numeric
 *   work; still deterministic.
 */

import { createHash } from "node:crypto";

import { archHash, canonicalize, hashUnit } from "./canonical.js";
import type { ArchitectureDocument } from "./protocol.js";

function logistic(x: number): number {
  return 1 / (1 + Math.exp(-x));
}

export function designUtility(doc: ArchitectureDocument): number {
  const arch = canonicalize(doc);
  let utility = 0;
  const backbone = arch.backbone ?? [];
  if (backbone.length > 0) {
    let sum = 0;
    for (const rec of backbone) {
      const expansion = rec.e.num / rec.e.den;
      sum += 0.3 * (rec.t === 3 ? 1 : 0) + 0.15 * (rec.k === 5 ? 1 : 0) + 0.2 * (expansion / 6);
    }
    utility += sum / backbone.length;
  }
  const fusion = arch.fusion ?? [];
  if (fusion.length > 0) {
    const active = fusion.filter((f) => f.op.kind !== "none").length;
    utility += 0.25 * (active / fusion.length);
  }
  const attention = arch.attention ?? [];
  if (attention.length > 0) {
    const enabled = attention.filter((a) => a.enabled === 1).length;
    utility += 0.1 * (enabled / attention.length);
  }
  return utility;
}

export function pureScore(doc: ArchitectureDocument): number {
  const centered = designUtility(doc) - 0.4;
  const jitter = 0.02 * hashUnit(doc);
  const score = logistic(3 * centered) * 0.96 + jitter;
  return Math.min(1, Math.max(0, score));
}

/** Deterministic uniform stream from the architecture hash. */
function* hashStream(doc: ArchitectureDocument): Generator<number> {
  let state = archHash(doc);
  while (true) {
    for (let i = 0; i + 6 <= state.length; i += 6) {
      yield state.readUIntBE(i, 6) / 2 ** 48;
    }
    state = createHash("sha256").update(state).digest();
  }
}

export function trainerScore(doc: ArchitectureDocument): number {
  const rng = hashStream(doc);
  const next = () => rng.next().value as number;
  const trueW = 0.5 + designUtility(doc);
  const xs: number[] = [];
  const ys: number[] = [];
  for (let i = 0; i < 32; i++) {
    const x = 2 * next() - 1;
    xs.push(x);
    ys.push(trueW * x + 0.05 * (2 * next() - 1));
  }
  let w = 0;
  const lr = 0.25;
  for (let epoch = 0; epoch < 40; epoch++) {
    let grad = 0;
    for (let i = 0; i < xs.length; i++) {
      grad += (w * xs[i] - ys[i]) * xs[i];
    }
    w -= (lr * grad) / xs.length;
  }
  let loss = 0;
  for (let i = 0; i < xs.length; i++) {
    loss += (w * xs[i] - ys[i]) ** 2;
  }
  loss /= xs.length;
  // low residual -> high score; recovered weight carries the design signal
  const score = logistic(2 * (w - 0.9)) * (1 - Math.min(1, loss));
  return Math.min(1, Math.max(0, score));
}
