export { CdfSpec, StreamError, TableError, fastDecode, fastEncode, validateSpec } from "./rangecoder";
export { FuzzCase, GOLDEN_SEED, SplitMix64, genCase } from "./cases";
export { Capabilities, VERSION, defaultGoldenPath, probe } from "./probe";
