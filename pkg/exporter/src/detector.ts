/**
 * Detector abstraction.
 *
 * The exporter only needs the RoI-pooled feature map of the single box with
 * the highest confidence after non-maximum suppression, so the interface is
 * deliberately narrow. Any two-stage detector backend can be plugged in; the
 * stub below derives deterministic pseudo-features from the image bytes so
 * the pipeline can be exercised without model weights.
 */
import { createHash } from 'crypto';
import { readFile } from 'fs/promises';

import { FEATURE_SIZE } from './nff1.js';

export interface Detection {
  /** Post-NMS confidence score in [0, 1]. */
  confidence: number;
  /** RoI-pooled (256, 7, 7) feature map, flattened to 12544 values. */
  feature: Float32Array;
}

export interface Detector {
  readonly id: string;
  /** Best (highest-confidence) detection in the image, or null when empty. */
  detect(imagePath: string): Promise<Detection | null>;
}

/** Small deterministic PRNG (mulberry32) seeded from a byte digest. */
function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

export class StubDetector implements Detector {
  readonly id = 'stub-sha256-v1';

  async detect(imagePath: string): Promise<Detection | null> {
    const bytes = await readFile(imagePath);
    if (bytes.length === 0) {
      return null; // nothing detectable in an empty image
    }
    const digest = createHash('sha256').update(bytes).digest();
    const rand = mulberry32(digest.readUInt32LE(0));
    // confidence spans [0.5, 1.0) so threshold rejection paths get exercised
    const confidence = 0.5 + rand() * 0.5;
    const feature = new Float32Array(FEATURE_SIZE);
    for (let i = 0; i < FEATURE_SIZE; i++) {
      feature[i] = Math.fround(rand() * 2 - 1);
    }
    return { confidence, feature };
  }
}
