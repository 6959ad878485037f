/**
 * Reader for the shared binary parity fixture ("CCLF").
 *
 * The file is produced by the core package (`python -m condcl.parity OUT`)
 * and carries random test vectors together with core-recorded expected
 * outputs, so this package can prove numerical parity without linking
 * against the core. All integers are little-endian; layout:
 *
 *   magic "CCLF" | version u16 | lossCount u32 | loss entries
 *   | wmCount u32 | weight-matrix entries
 *
 * Loss entry: kind u8 | tau f64 | lambda f64 | n u32 | d u32
 *   | anchors n*d f64 | candidates n*d f64 | weights n*n f64
 *   | expectedValue f64 | expectedGradAnchor n*d f64
 *   | expectedGradCandidate n*d f64
 *
 * Weight-matrix entry: family u8 | sigma f64 | n u32 | pCont u32 | pCat u32
 *   | continuous n*pCont f64 | categorical n*pCat i64 | expectedW n*n f64
 */

import { readFileSync } from "node:fs";

export interface LossEntry {
  kind: number;
  tau: number;
  lambda: number;
  n: number;
  d: number;
  anchors: Float64Array;
  candidates: Float64Array;
  weights: Float64Array;
  expectedValue: number;
  expectedGradAnchor: Float64Array;
  expectedGradCandidate: Float64Array;
}

export interface WeightMatrixEntry {
  family: number;
  sigma: number;
  n: number;
  pCont: number;
  pCat: number;
  continuous: Float64Array;
  categorical: BigInt64Array;
  expectedW: Float64Array;
}

export interface Fixture {
  losses: LossEntry[];
  weightMatrices: WeightMatrixEntry[];
}

class Cursor {
  private pos = 0;
  private view: DataView;

  constructor(private buf: Uint8Array) {
    this.view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength);
  }

  u8(): number {
    const v = this.view.getUint8(this.pos);
    this.pos += 1;
    return v;
  }

  u16(): number {
    const v = this.view.getUint16(this.pos, true);
    this.pos += 2;
    return v;
  }

  u32(): number {
    const v = this.view.getUint32(this.pos, true);
    this.pos += 4;
    return v;
  }

  f64(): number {
    const v = this.view.getFloat64(this.pos, true);
    this.pos += 8;
    return v;
  }

  f64Array(count: number): Float64Array {
    const out = new Float64Array(count);
    for (let i = 0; i < count; i++) out[i] = this.f64();
    return out;
  }

  i64Array(count: number): BigInt64Array {
    const out = new BigInt64Array(count);
    for (let i = 0; i < count; i++) {
      out[i] = this.view.getBigInt64(this.pos, true);
      this.pos += 8;
    }
    return out;
  }

  done(): boolean {
    return this.pos === this.buf.byteLength;
  }
}

export function readFixture(path: string): Fixture {
  const raw = readFileSync(path);
  const buf = new Uint8Array(raw.buffer, raw.byteOffset, raw.byteLength);
  if (buf.length < 6 || String.fromCharCode(buf[0], buf[1], buf[2], buf[3]) !== "CCLF") {
    throw new Error(`not a CCLF fixture: ${path}`);
  }
  const cur = new Cursor(buf.subarray(4));
  const version = cur.u16();
  if (version !== 1) {
    throw new Error(`unsupported fixture version ${version}`);
  }

  const losses: LossEntry[] = [];
  const lossCount = cur.u32();
  for (let e = 0; e < lossCount; e++) {
    const kind = cur.u8();
    const tau = cur.f64();
    const lambda = cur.f64();
    const n = cur.u32();
    const d = cur.u32();
    losses.push({
      kind,
      tau,
      lambda,
      n,
      d,
      anchors: cur.f64Array(n * d),
      candidates: cur.f64Array(n * d),
      weights: cur.f64Array(n * n),
      expectedValue: cur.f64(),
      expectedGradAnchor: cur.f64Array(n * d),
      expectedGradCandidate: cur.f64Array(n * d),
    });
  }

  const weightMatrices: WeightMatrixEntry[] = [];
  const wmCount = cur.u32();
  for (let e = 0; e < wmCount; e++) {
    const family = cur.u8();
    const sigma = cur.f64();
    const n = cur.u32();
    const pCont = cur.u32();
    const pCat = cur.u32();
    weightMatrices.push({
      family,
      sigma,
      n,
      pCont,
      pCat,
      continuous: cur.f64Array(n * pCont),
      categorical: cur.i64Array(n * pCat),
      expectedW: cur.f64Array(n * n),
    });
  }
  if (!cur.done()) {
    throw new Error("trailing bytes after the last fixture entry");
  }
  return { losses, weightMatrices };
}
