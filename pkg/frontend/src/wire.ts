/**
 * Wire formats emitted by `vidpipe run-loader --stream`:
 *
 *   frame  := u32-LE header length | JSON BatchHeader | VPC1 tensor
 *   VPC1   := "VPC1" | dtype u8 | ndim u8 | 4x dims u32-LE | C-order data
 *
 * Parsing is incremental and zero-copy: tensors are typed-array views
 * into the accumulated stream buffer (the one staging allocation per
 * batch), never re-copied.
 */

import type { BatchHeader, DType, Tensor, TypedArray } from "./types.js";

export const VPC1_MAGIC = 0x31435056; // "VPC1" little-endian
export const VPC1_HEADER_BYTES = 4 + 1 + 1 + 4 * 4;

interface DTypeInfo {
  name: DType;
  bytes: number;
  view(buf: ArrayBufferLike, offset: number, count: number): TypedArray;
}

const DTYPES: Record<number, DTypeInfo> = {
  0: { name: "uint8", bytes: 1, view: (b, o, n) => new Uint8Array(b, o, n) },
  1: {
    name: "float32",
    bytes: 4,
    view: (b, o, n) => new Float32Array(b, o, n),
  },
  2: {
    name: "int64",
    bytes: 8,
    view: (b, o, n) => new BigInt64Array(b, o, n),
  },
  3: {
    name: "uint16",
    bytes: 2,
    view: (b, o, n) => new Uint16Array(b, o, n),
  },
};

/** Parse one VPC1 container at `offset`; throws on malformed input,
 * returns null if the buffer does not hold the whole tensor yet. */
export function readVpc1(
  buf: Uint8Array,
  offset = 0,
): { tensor: Tensor; bytesRead: number } | null {
  if (buf.byteLength - offset < VPC1_HEADER_BYTES) return null;
  const dv = new DataView(buf.buffer, buf.byteOffset + offset);
  if (dv.getUint32(0, true) !== VPC1_MAGIC) {
    throw new Error("VPC1: bad magic");
  }
  const code = dv.getUint8(4);
  const ndim = dv.getUint8(5);
  const info = DTYPES[code];
  if (!info || ndim < 1 || ndim > 4) {
    throw new Error(`VPC1: bad header (dtype ${code}, ndim ${ndim})`);
  }
  const shape: number[] = [];
  let count = 1;
  for (let i = 0; i < ndim; i++) {
    const d = dv.getUint32(6 + 4 * i, true);
    shape.push(d);
    count *= d;
  }
  const dataBytes = count * info.bytes;
  if (buf.byteLength - offset < VPC1_HEADER_BYTES + dataBytes) return null;
  // typed-array views need element-aligned offsets; pixel streams are
  // uint8 so the copy branch is only taken for wider dtypes that land
  // unaligned inside a larger buffer
  const abs = buf.byteOffset + offset + VPC1_HEADER_BYTES;
  const data =
    abs % info.bytes === 0
      ? info.view(buf.buffer, abs, count)
      : info.view(buf.buffer.slice(abs, abs + dataBytes), 0, count);
  return {
    tensor: { dtype: info.name, shape, data },
    bytesRead: VPC1_HEADER_BYTES + dataBytes,
  };
}

/** Serialize a tensor (test helper and the write half of the format). */
export function writeVpc1(tensor: Tensor): Uint8Array {
  const { shape, data } = tensor;
  if (shape.length < 1 || shape.length > 4) {
    throw new Error(`VPC1: ndim ${shape.length} outside 1..4`);
  }
  const body = new Uint8Array(data.buffer, data.byteOffset, data.byteLength);
  const out = new Uint8Array(VPC1_HEADER_BYTES + body.byteLength);
  const dv = new DataView(out.buffer);
  dv.setUint32(0, VPC1_MAGIC, true);
  const code = Object.entries(DTYPES).find(
    ([, v]) => v.name === tensor.dtype,
  )?.[0];
  if (code === undefined) throw new Error(`VPC1: bad dtype ${tensor.dtype}`);
  dv.setUint8(4, Number(code));
  dv.setUint8(5, shape.length);
  for (let i = 0; i < 4; i++) {
    dv.setUint32(6 + 4 * i, shape[i] ?? 1, true);
  }
  out.set(body, VPC1_HEADER_BYTES);
  return out;
}

export interface Frame {
  header: BatchHeader;
  tensor: Tensor;
}

/**
 * Incremental frame splitter. Feed it stream chunks in any sizes; it
 * returns every frame completed so far and keeps the partial tail.
 */
export class FrameDecoder {
  private buf: Uint8Array = new Uint8Array(0);

  push(chunk: Uint8Array): Frame[] {
    if (this.buf.byteLength === 0) {
      this.buf = chunk;
    } else {
      // the single staging copy: join the partial tail with new bytes
      const joined = new Uint8Array(this.buf.byteLength + chunk.byteLength);
      joined.set(this.buf, 0);
      joined.set(chunk, this.buf.byteLength);
      this.buf = joined;
    }

    const frames: Frame[] = [];
    let offset = 0;
    for (;;) {
      const parsed = this.tryParse(offset);
      if (!parsed) break;
      frames.push(parsed.frame);
      offset += parsed.bytesRead;
    }
    if (offset > 0) this.buf = this.buf.slice(offset);
    return frames;
  }

  /** Bytes held back waiting for the rest of a frame. */
  pending(): number {
    return this.buf.byteLength;
  }

  private tryParse(
    offset: number,
  ): { frame: Frame; bytesRead: number } | null {
    const avail = this.buf.byteLength - offset;
    if (avail < 4) return null;
    const dv = new DataView(this.buf.buffer, this.buf.byteOffset + offset);
    const jsonLen = dv.getUint32(0, true);
    if (avail < 4 + jsonLen + VPC1_HEADER_BYTES) return null;
    const headerBytes = this.buf.subarray(
      offset + 4,
      offset + 4 + jsonLen,
    );
    const header = JSON.parse(
      new TextDecoder().decode(headerBytes),
    ) as BatchHeader;
    const parsed = readVpc1(this.buf, offset + 4 + jsonLen);
    if (!parsed) return null;
    return {
      frame: { header, tensor: parsed.tensor },
      bytesRead: 4 + jsonLen + parsed.bytesRead,
    };
  }
}
