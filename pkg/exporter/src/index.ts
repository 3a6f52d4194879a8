export { NFF1_MAGIC, FEATURE_DIMS, FEATURE_SIZE, encodeNff1, decodeNff1 } from './nff1.js';
export type { Nff1Record } from './nff1.js';
export { StubDetector } from './detector.js';
export type { Detection, Detector } from './detector.js';
export { DEFAULT_THRESHOLD, exportFeatures } from './export.js';
export type { ExportOptions, ExportResult, SkipEntry } from './export.js';
