import { spawn, type ChildProcessWithoutNullStreams } from "node:child_process";
import * as readline from "node:readline";
import { fileURLToPath } from "node:url";
import { dirname, join } from "node:path";

import { afterEach, describe, expect, it } from "vitest";

const WORKER = join(dirname(fileURLToPath(import.meta.url)), "..", "dist", "worker.js");

interface Reply {
  id: number;
  score?: number;
  ack?: boolean;
  error?: string;
}

class WorkerHandle {
  proc: ChildProcessWithoutNullStreams;
  private replies: Reply[] = [];
  private waiters: ((reply: Reply) => void)[] = [];

  constructor(args: string[] = []) {
    this.proc = spawn("node", [WORKER, ...args], { stdio: ["pipe", "pipe", "pipe"] });
    const lines = readline.createInterface({ input: this.proc.stdout });
    lines.on("line", (line) => {
      const reply = JSON.parse(line) as Reply;
      const waiter = this.waiters.shift();
      if (waiter) {
        waiter(reply);
      } else {
        this.replies.push(reply);
      }
    });
  }

  sendRaw(line: string): void {
    this.proc.stdin.write(line + "\n");
  }

  send(msg: object): void {
    this.sendRaw(JSON.stringify(msg));
  }

  next(timeoutMs = 5000): Promise<Reply> {
    const queued = this.replies.shift();
    if (queued) {
      return Promise.resolve(queued);
    }
    return new Promise((resolve, reject) => {
      const timer = setTimeout(() => reject(new Error("no reply")), timeoutMs);
      this.waiters.push((reply) => {
        clearTimeout(timer);
        resolve(reply);
      });
    });
  }

  close(): Promise<number | null> {
    if (this.proc.exitCode !== null) {
      return Promise.resolve(this.proc.exitCode);
    }
    this.proc.stdin.end();
    return new Promise((resolve) => this.proc.once("exit", resolve));
  }
}

function sampleArch(tweak = 0) {
  return {
    schema_version: 1,
    space_fingerprint: "abc123",
    streams: ["sparse", "dense"],
    backbone: [
      { stream: "sparse", stage: 1, group: 0, t: 3, k: 3, c_out: 40 + 8 * tweak, e: { num: 3, den: 2 } },
      { stream: "dense", stage: 1, group: 0, t: 1, k: 5, c_out: 8, e: { num: 9, den: 4 } },
    ],
    fusion: [{ location: 0, op: { kind: "time_strided_conv", tau: 5, gamma: 2 } }],
    attention: [
      { stream: "sparse", location: 1, enabled: 1 },
      { stream: "dense", location: 1, enabled: 0 },
    ],
  };
}

describe("reference worker", () => {
  let worker: WorkerHandle;

  afterEach(async () => {
    if (worker) {
      await worker.close();
    }
  });

  it("scores evaluate requests with matching ids", async () => {
    worker = new WorkerHandle();
    worker.send({ id: 1, kind: "evaluate", arch: sampleArch(), step: "one_step" });
    const reply = await worker.next();
    expect(reply.id).toBe(1);
    expect(reply.score).toBeGreaterThanOrEqual(0);
    expect(reply.score).toBeLessThanOrEqual(1);
  });

  it("is deterministic across processes", async () => {
    worker = new WorkerHandle();
    worker.send({ id: 1, kind: "evaluate", arch: sampleArch() });
    const first = await worker.next();
    await worker.close();
    worker = new WorkerHandle();
    worker.send({ id: 9, kind: "evaluate", arch: sampleArch() });
    const second = await worker.next();
    expect(second.score).toBe(first.score);
  });

  it("canonicalizes score-affecting fields", async () => {
    worker = new WorkerHandle();
    const arch = sampleArch();
    worker.send({ id: 1, kind: "evaluate", arch });
    const base = await worker.next();

    const permuted = {
      attention: [...arch.attention].reverse(),
      backbone: [...arch.backbone].reverse(),
      fusion: arch.fusion,
      streams: [...arch.streams].reverse(),
      space_fingerprint: arch.space_fingerprint,
      schema_version: arch.schema_version,
      cost: { per_view_flops: 123456789, params: 42 },
    };
    worker.send({ id: 2, kind: "evaluate", arch: permuted });
    const same = await worker.next();
    expect(same.score).toBe(base.score);

    worker.send({ id: 3, kind: "evaluate", arch: sampleArch(1) });
    const different = await worker.next();
    expect(different.score).not.toBe(base.score);
  });

  it("acknowledges freeze and keeps serving", async () => {
    worker = new WorkerHandle();
    worker.send({ id: 5, kind: "freeze", arch: sampleArch() });
    const ack = await worker.next();
    expect(ack).toEqual({ id: 5, ack: true });
    worker.send({ id: 6, kind: "evaluate", arch: sampleArch() });
    const reply = await worker.next();
    expect(reply.id).toBe(6);
    expect(reply.score).toBeDefined();
  });

  it("answers malformed lines with an id-0 error", async () => {
    worker = new WorkerHandle();
    worker.sendRaw("this is not json");
    const reply = await worker.next();
    expect(reply.id).toBe(0);
    expect(reply.error).toMatch(/malformed/);
    worker.send({ id: 2, kind: "evaluate", arch: sampleArch() });
    const next = await worker.next();
    expect(next.id).toBe(2);
  });

  it("rejects unknown kinds and missing archs with the request id", async () => {
    worker = new WorkerHandle();
    worker.send({ id: 4, kind: "mystery" });
    expect((await worker.next()).error).toMatch(/unknown request kind/);
    worker.send({ id: 5, kind: "evaluate" });
    expect((await worker.next()).error).toMatch(/without an arch/);
  });

  it("supports the optional toy trainer", async () => {
    worker = new WorkerHandle(["--trainer"]);
    worker.send({ id: 1, kind: "evaluate", arch: sampleArch() });
    const a = await worker.next();
    worker.send({ id: 2, kind: "evaluate", arch: sampleArch() });
    const b = await worker.next();
    expect(a.score).toBe(b.score);
    expect(a.score).toBeGreaterThanOrEqual(0);
    expect(a.score).toBeLessThanOrEqual(1);
  });

  it("exits cleanly when stdin closes", async () => {
    worker = new WorkerHandle();
    worker.send({ id: 1, kind: "evaluate", arch: sampleArch() });
    await worker.next();
    const code = await worker.close();
    expect(code).toBe(0);
  });
});
