/**
 * NFF1 binary interchange format (little-endian).
 *
 * Layout: magic "NFF1", u32 record count, u32 x 3 feature dims (256, 7, 7),
 * then per record: u64 mmsi, u16 image-id byte length, the utf-8 id bytes,
 * f32 confidence and 12544 f32 feature values.
 */

export const NFF1_MAGIC = 'NFF1';
export const FEATURE_DIMS: readonly [number, number, number] = [256, 7, 7];
export const FEATURE_SIZE = 256 * 7 * 7;

export interface Nff1Record {
  imageId: string;
  mmsi: bigint;
  confidence: number;
  /** Flattened (256, 7, 7) feature map, row-major, length 12544. */
  feature: Float32Array;
}

export function encodeNff1(records: Nff1Record[]): Buffer {
  const parts: Buffer[] = [];
  const header = Buffer.alloc(20);
  header.write(NFF1_MAGIC, 0, 'ascii');
  header.writeUInt32LE(records.length, 4);
  header.writeUInt32LE(FEATURE_DIMS[0], 8);
  header.writeUInt32LE(FEATURE_DIMS[1], 12);
  header.writeUInt32LE(FEATURE_DIMS[2], 16);
  parts.push(header);
  for (const r of records) {
    if (r.feature.length !== FEATURE_SIZE) {
      throw new Error(
        `record ${r.imageId}: feature length ${r.feature.length} != ${FEATURE_SIZE}`,
      );
    }
    const idBytes = Buffer.from(r.imageId, 'utf-8');
    const head = Buffer.alloc(10);
    head.writeBigUInt64LE(r.mmsi, 0);
    head.writeUInt16LE(idBytes.length, 8);
    const conf = Buffer.alloc(4);
    conf.writeFloatLE(r.confidence, 0);
    const values = Buffer.alloc(FEATURE_SIZE * 4);
    for (let i = 0; i < FEATURE_SIZE; i++) {
      values.writeFloatLE(r.feature[i], i * 4);
    }
    parts.push(head, idBytes, conf, values);
  }
  return Buffer.concat(parts);
}

export function decodeNff1(data: Buffer): Nff1Record[] {
  if (data.toString('ascii', 0, 4) !== NFF1_MAGIC) {
    throw new Error('not an NFF1 buffer (bad magic)');
  }
  const count = data.readUInt32LE(4);
  const dims = [data.readUInt32LE(8), data.readUInt32LE(12), data.readUInt32LE(16)];
  if (dims[0] !== FEATURE_DIMS[0] || dims[1] !== FEATURE_DIMS[1] || dims[2] !== FEATURE_DIMS[2]) {
    throw new Error(`unexpected feature dims (${dims.join(', ')})`);
  }
  let off = 20;
  const records: Nff1Record[] = [];
  for (let k = 0; k < count; k++) {
    const mmsi = data.readBigUInt64LE(off);
    const idLen = data.readUInt16LE(off + 8);
    off += 10;
    const imageId = data.toString('utf-8', off, off + idLen);
    off += idLen;
    const confidence = data.readFloatLE(off);
    off += 4;
    const feature = new Float32Array(FEATURE_SIZE);
    for (let i = 0; i < FEATURE_SIZE; i++) {
      feature[i] = data.readFloatLE(off + i * 4);
    }
    off += FEATURE_SIZE * 4;
    records.push({ imageId, mmsi, confidence, feature });
  }
  if (off !== data.length) {
    throw new Error('trailing bytes after last NFF1 record');
  }
  return records;
}
