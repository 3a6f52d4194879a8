/**
 * Batch export: run the detector over an image directory and write the
 * retained RoI features as one NFF1 file plus a JSON manifest.
 */
import { readdir, writeFile } from 'fs/promises';
import { basename, join } from 'path';

import { Detector } from './detector.js';
import { Nff1Record, encodeNff1 } from './nff1.js';

export interface ExportOptions {
  imageDir: string;
  /** image id (file name without extension) -> vessel mmsi */
  mmsiMap: Map<string, bigint>;
  outPath: string;
  manifestPath: string;
  detector: Detector;
  /** Minimum post-NMS confidence; detections below it are skipped. */
  threshold?: number;
  log?: (message: string) => void;
}

export interface SkipEntry {
  imageId: string;
  reason: 'unreadable' | 'no-detection' | 'below-threshold' | 'unknown-mmsi';
  confidence?: number;
}

export interface ExportResult {
  exported: number;
  skipped: SkipEntry[];
}

export const DEFAULT_THRESHOLD = 0.7;

function imageIdOf(fileName: string): string {
  const dot = fileName.lastIndexOf('.');
  return dot > 0 ? fileName.slice(0, dot) : fileName;
}

export async function exportFeatures(opts: ExportOptions): Promise<ExportResult> {
  const threshold = opts.threshold ?? DEFAULT_THRESHOLD;
  const log = opts.log ?? (() => {});
  const files = (await readdir(opts.imageDir)).sort();
  const records: Nff1Record[] = [];
  const skipped: SkipEntry[] = [];
  for (const file of files) {
    const imageId = imageIdOf(basename(file));
    const mmsi = opts.mmsiMap.get(imageId);
    if (mmsi === undefined) {
      skipped.push({ imageId, reason: 'unknown-mmsi' });
      log(`skip ${imageId}: no mmsi mapping`);
      continue;
    }
    let detection;
    try {
      detection = await opts.detector.detect(join(opts.imageDir, file));
    } catch (err) {
      skipped.push({ imageId, reason: 'unreadable' });
      log(`skip ${imageId}: unreadable (${err})`);
      continue;
    }
    if (detection === null) {
      skipped.push({ imageId, reason: 'no-detection' });
      log(`skip ${imageId}: no detection`);
      continue;
    }
    if (detection.confidence < threshold) {
      skipped.push({ imageId, reason: 'below-threshold', confidence: detection.confidence });
      log(`skip ${imageId}: confidence ${detection.confidence.toFixed(3)} < ${threshold}`);
      continue;
    }
    records.push({ imageId, mmsi, confidence: detection.confidence, feature: detection.feature });
  }
  await writeFile(opts.outPath, encodeNff1(records));
  const manifest = {
    detector: opts.detector.id,
    threshold,
    exported: records.length,
    skipped,
  };
  await writeFile(opts.manifestPath, JSON.stringify(manifest, null, 2) + '\n');
  log(`exported ${records.length} records, skipped ${skipped.length}`);
  return { exported: records.length, skipped };
}
