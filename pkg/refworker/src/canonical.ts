/** Canonical form of an architecture document.
 *
 * Scores must not depend on JSON key order, record order, or derived fields,
 * so every score-affecting field is pulled into a sorted structure and
 * serialized with sorted keys before hashing.
 */

import { createHash } from "node:crypto";

import type { ArchitectureDocument } from "./protocol.js";

export interface CanonicalArch {
  backbone: ArchitectureDocument["backbone"];
  fusion: ArchitectureDocument["fusion"];
  attention: ArchitectureDocument["attention"];
  streams: string[];
}

export function canonicalize(doc: ArchitectureDocument): CanonicalArch {
  const backbone = [...(doc.backbone ?? [])].sort(
    (a, b) => a.stream.localeCompare(b.stream) || a.group - b.group,
  );
  const fusion = [...(doc.fusion ?? [])].sort((a, b) => a.location - b.location);
  const attention = [...(doc.attention ?? [])].sort(
    (a, b) => a.stream.localeCompare(b.stream) || a.location - b.location,
  );
  return {
    backbone,
    fusion,
    attention,
    streams: [...(doc.streams ?? [])].sort(),
  };
}

/** JSON.stringify with recursively sorted object keys. */
export function stableStringify(value: unknown): string {
  if (Array.isArray(value)) {
    return `[${value.map(stableStringify).join(",")}]`;
  }
  if (value !== null && typeof value === "object") {
    const entries = Object.entries(value as Record<string, unknown>)
      .filter(([, v]) => v !== undefined)
      .sort(([a], [b]) => (a < b ? -1 : a > b ? 1 : 0))
      .map(([k, v]) => `${JSON.stringify(k)}:${stableStringify(v)}`);
    return `{${entries.join(",")}}`;
  }
  return JSON.stringify(value);
}

export function archHash(doc: ArchitectureDocument): Buffer {
  return createHash("sha256").update(stableStringify(canonicalize(doc))).digest();
}

/** First 6 hash bytes mapped into [0, 1). */
export function hashUnit(doc: ArchitectureDocument): number {
  const digest = archHash(doc);
  const value = digest.readUIntBE(0, 6);
  return value / 2 ** 48;
}
