/**
 * Async batch iterator over a `vidpipe run-loader --stream` child
 * process. Single consumer: overlapping next() calls are a contract
 * violation and throw. Dropping the iterator (break / return / error)
 * kills the child; backpressure pauses the child's stdout instead of
 * buffering unboundedly.
 */

import { type ChildProcessByStdio, spawn } from "node:child_process";
import type { Readable } from "node:stream";

import type { Batch, DType, TypedArray } from "./types.js";
import { SUPPORTED_SCHEMA } from "./types.js";
import { type Frame, FrameDecoder } from "./wire.js";

export interface LoaderOptions {
  manifest: string;
  workers?: number;
  queue?: number;
  batch?: number;
  frames?: number;
  window?: number;
  seed?: number;
  epochs?: number;
  batches?: number;
  pipeline?: "fused" | "reference";
  policy?: "fail_fast" | "skip";
  /** vidpipe config file forwarded as --config. */
  config?: string;
  /** CLI binary; default "vidpipe" (or VIDPIPE_BIN). */
  bin?: string;
}

/** Frames buffered before the child's stdout is paused. */
const HIGH_WATER_FRAMES = 2;

function cliArgs(opts: LoaderOptions): string[] {
  const args = ["run-loader", "--stream", "--manifest", opts.manifest];
  const flag = (name: string, v: number | string | undefined) => {
    if (v !== undefined) args.push(name, String(v));
  };
  flag("--config", opts.config);
  flag("--workers", opts.workers);
  flag("--queue", opts.queue);
  flag("--batch", opts.batch);
  flag("--frames", opts.frames);
  flag("--window", opts.window);
  flag("--seed", opts.seed);
  flag("--epochs", opts.epochs);
  flag("--batches", opts.batches);
  flag("--pipeline", opts.pipeline);
  flag("--policy", opts.policy);
  return args;
}

function toBatch(frame: Frame): Batch {
  const { header, tensor } = frame;
  if (header.schema_version !== SUPPORTED_SCHEMA) {
    throw new Error(
      `stream schema ${header.schema_version}, bindings speak ` +
        `${SUPPORTED_SCHEMA}`,
    );
  }
  const [b] = header.shape;
  const perClip = tensor.data.length / b;
  return {
    epoch: header.epoch,
    batchIndex: header.batch,
    sampleIds: header.sample_ids,
    skippedIds: header.skipped_ids,
    timestamps: header.timestamps,
    shape: header.shape,
    dtype: header.dtype as DType,
    data: tensor.data,
    clip(index: number): TypedArray {
      if (index < 0 || index >= b) {
        throw new RangeError(`clip ${index} outside batch of ${b}`);
      }
      return tensor.data.subarray(
        index * perClip,
        (index + 1) * perClip,
      ) as TypedArray;
    },
  };
}

export class LoaderStream implements AsyncIterable<Batch> {
  private child: ChildProcessByStdio<null, Readable, Readable>;
  private decoder = new FrameDecoder();
  private ready: Frame[] = [];
  private waiter: (() => void) | null = null;
  private nextInFlight = false;
  private iterating = false;
  private stdoutDone = false;
  private exitCode: number | null = null;
  private closed = false;
  private error: Error | null = null;
  private stderrTail = "";

  constructor(private opts: LoaderOptions) {
    const bin = opts.bin ?? process.env.VIDPIPE_BIN ?? "vidpipe";
    this.child = spawn(bin, cliArgs(opts), {
      stdio: ["ignore", "pipe", "pipe"],
    });
    this.child.stdout.on("data", (chunk: Buffer) => {
      try {
        this.ready.push(...this.decoder.push(chunk));
      } catch (err) {
        this.fail(err as Error);
        return;
      }
      if (this.ready.length > HIGH_WATER_FRAMES) this.child.stdout.pause();
      this.wake();
    });
    this.child.stdout.on("end", () => {
      this.stdoutDone = true;
      this.wake();
    });
    this.child.stderr.on("data", (chunk: Buffer) => {
      this.stderrTail = (this.stderrTail + chunk.toString()).slice(-4096);
    });
    this.child.on("error", (err) => this.fail(err));
    this.child.on("exit", (code, signal) => {
      this.exitCode = code ?? (signal ? 1 : 0);
      this.wake();
    });
    this.child.on("close", () => {
      this.closed = true;
      this.wake();
    });
  }

  /** Resolves once the child process and its pipes are fully closed. */
  exited(): Promise<number> {
    if (this.closed) return Promise.resolve(this.exitCode ?? 0);
    return new Promise((resolve) =>
      this.child.on("close", (code) => resolve(code ?? 0)),
    );
  }

  get pid(): number | undefined {
    return this.child.pid;
  }

  /** Kill the child and end iteration; idempotent. */
  async close(): Promise<void> {
    if (this.exitCode === null) this.child.kill("SIGTERM");
    await this.exited();
    this.wake();
  }

  [Symbol.asyncIterator](): AsyncIterator<Batch> {
    if (this.iterating) {
      throw new Error("loader stream is single-consumer");
    }
    this.iterating = true;
    return {
      next: () => this.next(),
      return: async () => {
        await this.close();
        return { value: undefined, done: true };
      },
      throw: async (err?: unknown) => {
        await this.close();
        throw err;
      },
    };
  }

  private async next(): Promise<IteratorResult<Batch>> {
    if (this.nextInFlight) {
      throw new Error("concurrent next() on a single-consumer stream");
    }
    this.nextInFlight = true;
    try {
      for (;;) {
        if (this.error) throw this.error;
        const frame = this.ready.shift();
        if (frame) {
          if (this.ready.length <= HIGH_WATER_FRAMES) {
            this.child.stdout.resume();
          }
          return { value: toBatch(frame), done: false };
        }
        if (this.exitCode !== null && this.exitCode !== 0) {
          throw new Error(
            `vidpipe run-loader exited ${this.exitCode}: ` +
              this.stderrTail.trim(),
          );
        }
        // finish only once the pipe has drained AND the exit code is in,
        // so a nonzero exit is never swallowed by an early stdout EOF
        if (this.stdoutDone && this.exitCode !== null) {
          if (this.decoder.pending() > 0) {
            throw new Error("stream ended mid-frame");
          }
          return { value: undefined, done: true };
        }
        await new Promise<void>((resolve) => {
          this.waiter = resolve;
        });
      }
    } finally {
      this.nextInFlight = false;
    }
  }

  private wake(): void {
    const w = this.waiter;
    this.waiter = null;
    w?.();
  }

  private fail(err: Error): void {
    this.error = err;
    this.child.kill("SIGKILL");
    this.wake();
  }
}

export function runLoader(opts: LoaderOptions): LoaderStream {
  return new LoaderStream(opts);
}
