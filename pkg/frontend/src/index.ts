export { LoaderStream, runLoader, type LoaderOptions } from "./loader.js";
export {
  FrameDecoder,
  readVpc1,
  writeVpc1,
  VPC1_HEADER_BYTES,
  type Frame,
} from "./wire.js";
export {
  SUPPORTED_SCHEMA,
  type Batch,
  type BatchHeader,
  type DType,
  type Tensor,
  type TypedArray,
} from "./types.js";
