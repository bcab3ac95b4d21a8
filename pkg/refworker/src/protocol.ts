/** Wire types for the line-delimited JSON evaluation protocol.
 *
 * One JSON document per line on stdin/stdout, UTF-8, no trailing data after
 * the closing brace.  Responses carry the request's id; ordering is free.
 */

export interface EvaluateRequest {
  id: number;
  kind: "evaluate";
  arch: ArchitectureDocument;
  step?: string;
}

export interface FreezeRequest {
  id: number;
  kind: "freeze";
  arch: ArchitectureDocument;
}

export type Request = EvaluateRequest | FreezeRequest;

export interface ScoreResponse {
  id: number;
  score: number;
}

export interface AckResponse {
  id: number;
  ack: true;
}

export interface ErrorResponse {
  id: number;
  error: string;
}

export type Response = ScoreResponse | AckResponse | ErrorResponse;

export interface Rational {
  num: number;
  den: number;
}

export interface BackboneRecord {
  stream: string;
  stage: number;
  group: number;
  t: number;
  k: number;
  c_out: number;
  e: Rational;
}

export interface FusionRecord {
  location: number;
  op: { kind: string; tau?: number; gamma?: number };
}

export interface AttentionRecord {
  stream: string;
  location: number;
  enabled: number;
}

export interface ArchitectureDocument {
  schema_version?: number;
  space_fingerprint?: string;
  streams?: string[];
  backbone?: BackboneRecord[];
  fusion?: FusionRecord[];
  attention?: AttentionRecord[];
  /** derived summary; never score-affecting */
  cost?: Record<string, number>;
}
