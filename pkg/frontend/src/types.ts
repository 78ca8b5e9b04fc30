/** Core wire schema this package speaks; must match the producer's. */
export const SUPPORTED_SCHEMA = 1;

export type DType = "uint8" | "uint16" | "float32" | "int64";

export type TypedArray =
  | Uint8Array
  | Uint16Array
  | Float32Array
  | BigInt64Array;

/** One decoded tensor: C-order data plus its shape. */
export interface Tensor {
  dtype: DType;
  shape: number[];
  data: TypedArray;
}

/** JSON header preceding each streamed batch tensor. */
export interface BatchHeader {
  schema_version: number;
  epoch: number;
  batch: number;
  sample_ids: number[];
  skipped_ids: number[];
  timestamps: number[][];
  /** Authoritative [B, T, C, H, W]; the tensor itself arrives folded 4-D. */
  shape: number[];
  dtype: DType;
}

/** One training batch, frames viewed at the header's full shape. */
export interface Batch {
  epoch: number;
  batchIndex: number;
  sampleIds: number[];
  skippedIds: number[];
  timestamps: number[][];
  /** [B, T, C, H, W] */
  shape: number[];
  dtype: DType;
  /** C-order pixel data; a view into the stream buffer, not a copy. */
  data: TypedArray;
  /** Zero-copy view of one clip's frames, shape [T, C, H, W]. */
  clip(index: number): TypedArray;
}
