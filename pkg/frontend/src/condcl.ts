/**
 * Foreign-callable surface for the condcl contrastive losses.
 *
 * The functions below form a flat, versioned symbol set operating on raw
 * caller-owned buffers: features and kernel weights come in as contiguous
 * row-major Float64Arrays with explicit shapes, results are written into
 * caller-provided output buffers, and every call returns an integer status
 * instead of throwing across the boundary. After a non-zero status,
 * `condcl_last_error_message()` carries the diagnostic. No input buffer is
 * retained past a call and nothing mutates caller memory except the
 * designated outputs.
 *
 * Host training loops register the returned gradients with their own
 * autodiff (the pair (value, grad) is exactly what a custom differentiable
 * function needs); this module deliberately knows nothing about any
 * framework's graph internals.
 *
 * The numbers must match the core implementation: the shared fixture file
 * (see fixture.ts) carries core-recorded expected outputs, and the test
 * suite holds every entry to 1e-6 relative for losses and 1e-12 for weight
 * matrices.
 */

// status codes
export const CONDCL_OK = 0;
export const CONDCL_SHAPE_MISMATCH = 1;
export const CONDCL_BANDWIDTH_ERROR = 2;
export const CONDCL_DEGENERATE_WEIGHTS = 3;
export const CONDCL_ALL_SIMILAR = 4;
export const CONDCL_UNKNOWN_FAMILY = 5;
export const CONDCL_INVALID_ARGUMENT = 6;
export const CONDCL_INTERNAL_ERROR = 7;

// loss kinds
export const LOSS_YAWARE_INFONCE = 0;
export const LOSS_CONDITIONAL_ALIGNMENT = 1;
export const LOSS_GLOBAL_UNIFORMITY = 2;
export const LOSS_CONDITIONAL_UNIFORMITY = 3;
export const LOSS_COMBINED = 4;

// kernel families
export const FAMILY_RBF = 0;
export const FAMILY_CATEGORICAL = 1;
export const FAMILY_PRODUCT = 2;

const EPSILON = 1e-12;
const NORM_TOL = 1e-4; // boundary tolerance; callers normalize in their own framework

// per-module last error; worker threads get their own module instance, so
// this is thread-local by construction in Node
let lastError = "";

export function condcl_last_error_message(): string {
  return lastError;
}

function fail(status: number, message: string): number {
  lastError = message;
  return status;
}

function allFinite(a: Float64Array): boolean {
  for (let i = 0; i < a.length; i++) {
    if (!Number.isFinite(a[i])) return false;
  }
  return true;
}

function rowsUnitNorm(f: Float64Array, n: number, d: number): boolean {
  for (let i = 0; i < n; i++) {
    let sq = 0;
    for (let k = 0; k < d; k++) sq += f[i * d + k] * f[i * d + k];
    if (Math.abs(Math.sqrt(sq) - 1) > NORM_TOL) return false;
  }
  return true;
}

/** s[i][j] = view1_i . view2_j / tau, row-major n x n. */
function scores(v1: Float64Array, v2: Float64Array, n: number, d: number, tau: number): Float64Array {
  const s = new Float64Array(n * n);
  for (let i = 0; i < n; i++) {
    for (let j = 0; j < n; j++) {
      let dot = 0;
      for (let k = 0; k < d; k++) dot += v1[i * d + k] * v2[j * d + k];
      s[i * n + j] = dot / tau;
    }
  }
  return s;
}

/** log((1/n) sum_j e^{row_j}) per row, max-shifted. */
function logMeanExpRows(s: Float64Array, n: number): Float64Array {
  const out = new Float64Array(n);
  for (let i = 0; i < n; i++) {
    let hi = -Infinity;
    for (let j = 0; j < n; j++) hi = Math.max(hi, s[i * n + j]);
    let acc = 0;
    for (let j = 0; j < n; j++) acc += Math.exp(s[i * n + j] - hi);
    out[i] = hi + Math.log(acc / n);
  }
  return out;
}

function softmaxRows(s: Float64Array, n: number): Float64Array {
  const p = new Float64Array(n * n);
  for (let i = 0; i < n; i++) {
    let hi = -Infinity;
    for (let j = 0; j < n; j++) hi = Math.max(hi, s[i * n + j]);
    let total = 0;
    for (let j = 0; j < n; j++) {
      const e = Math.exp(s[i * n + j] - hi);
      p[i * n + j] = e;
      total += e;
    }
    for (let j = 0; j < n; j++) p[i * n + j] /= total;
  }
  return p;
}

/** grad1 = (1/tau) G view2, grad2 = (1/tau) G^T view1, accumulated into outputs. */
function chainGrads(
  g: Float64Array,
  v1: Float64Array,
  v2: Float64Array,
  n: number,
  d: number,
  tau: number,
  scale: number,
  out1: Float64Array,
  out2: Float64Array,
): void {
  const c = scale / tau;
  for (let i = 0; i < n; i++) {
    for (let k = 0; k < d; k++) {
      let acc = 0;
      for (let j = 0; j < n; j++) acc += g[i * n + j] * v2[j * d + k];
      out1[i * d + k] += c * acc;
    }
  }
  for (let j = 0; j < n; j++) {
    for (let k = 0; k < d; k++) {
      let acc = 0;
      for (let i = 0; i < n; i++) acc += g[i * n + j] * v1[i * d + k];
      out2[j * d + k] += c * acc;
    }
  }
}

interface TermResult {
  status: number;
  value: number;
  g: Float64Array; // d(loss)/d(scores)
}

function rowMeans(w: Float64Array, n: number): Float64Array {
  const z = new Float64Array(n);
  for (let i = 0; i < n; i++) {
    let acc = 0;
    for (let j = 0; j < n; j++) acc += w[i * n + j];
    z[i] = acc / n;
  }
  return z;
}

function attractionWeights(w: Float64Array, z: Float64Array, n: number): Float64Array | null {
  for (let i = 0; i < n; i++) {
    if (z[i] < EPSILON) return null;
  }
  const rw = new Float64Array(n * n);
  for (let i = 0; i < n; i++) {
    for (let j = 0; j < n; j++) rw[i * n + j] = w[i * n + j] / (n * z[i]);
  }
  return rw;
}

function yawareTerm(s: Float64Array, w: Float64Array, n: number): TermResult {
  const rw = attractionWeights(w, rowMeans(w, n), n);
  if (rw === null) {
    return { status: fail(CONDCL_DEGENERATE_WEIGHTS, "an anchor has mean kernel weight below 1e-12"), value: 0, g: new Float64Array(0) };
  }
  const lme = logMeanExpRows(s, n);
  const p = softmaxRows(s, n);
  let value = 0;
  const g = new Float64Array(n * n);
  for (let i = 0; i < n; i++) {
    for (let j = 0; j < n; j++) {
      value += rw[i * n + j] * (lme[i] - s[i * n + j]);
      g[i * n + j] = (p[i * n + j] - rw[i * n + j]) / n;
    }
  }
  return { status: CONDCL_OK, value: value / n, g };
}

function alignmentTerm(s: Float64Array, w: Float64Array, n: number): TermResult {
  const rw = attractionWeights(w, rowMeans(w, n), n);
  if (rw === null) {
    return { status: fail(CONDCL_DEGENERATE_WEIGHTS, "an anchor has mean kernel weight below 1e-12"), value: 0, g: new Float64Array(0) };
  }
  let value = 0;
  const g = new Float64Array(n * n);
  for (let i = 0; i < n; i++) {
    for (let j = 0; j < n; j++) {
      value -= rw[i * n + j] * s[i * n + j];
      g[i * n + j] = -rw[i * n + j] / n;
    }
  }
  return { status: CONDCL_OK, value: value / n, g };
}

function globalUniformityTerm(s: Float64Array, n: number): TermResult {
  const lme = logMeanExpRows(s, n);
  const p = softmaxRows(s, n);
  let value = 0;
  for (let i = 0; i < n; i++) value += lme[i];
  const g = new Float64Array(n * n);
  for (let i = 0; i < n * n; i++) g[i] = p[i] / n;
  return { status: CONDCL_OK, value: value / n, g };
}

function conditionalUniformityTerm(s: Float64Array, w: Float64Array, n: number): TermResult {
  const z = rowMeans(w, n);
  for (let i = 0; i < n; i++) {
    if (1 - z[i] < EPSILON) {
      return {
        status: fail(CONDCL_ALL_SIMILAR, "meta-data are kernel-identical for an anchor; the dissimilarity weights are undefined"),
        value: 0,
        g: new Float64Array(0),
      };
    }
  }
  const nu = new Float64Array(n * n);
  let shift = -Infinity;
  for (let i = 0; i < n; i++) {
    for (let j = 0; j < n; j++) {
      const v = (1 - w[i * n + j]) / (1 - z[i]);
      nu[i * n + j] = v;
      if (v > 0) shift = Math.max(shift, s[i * n + j]);
    }
  }
  const terms = new Float64Array(n * n);
  let total = 0;
  for (let i = 0; i < n * n; i++) {
    terms[i] = nu[i] > 0 ? nu[i] * Math.exp(s[i] - shift) : 0;
    total += terms[i];
  }
  const value = shift + Math.log(total) - 2 * Math.log(n);
  const g = new Float64Array(n * n);
  for (let i = 0; i < n * n; i++) g[i] = terms[i] / total;
  return { status: CONDCL_OK, value, g };
}

/**
 * Evaluate one loss on raw buffers.
 *
 * kind: 0 weighted InfoNCE | 1 conditional alignment | 2 global uniformity
 *     | 3 conditional uniformity | 4 alignment + lambda * conditional uniformity.
 * featuresView1/featuresView2: n*d row-major unit rows (within 1e-4).
 * metaWeights: n*n raw kernel values with sup-norm 1; the per-anchor mean
 * is derived here.
 * Outputs: outValue[0], outGradView1 (n*d), outGradView2 (n*d).
 */
export function condcl_loss_eval_v1(
  kind: number,
  featuresView1: Float64Array,
  featuresView2: Float64Array,
  metaWeights: Float64Array,
  n: number,
  d: number,
  tau: number,
  lambda: number,
  outValue: Float64Array,
  outGradView1: Float64Array,
  outGradView2: Float64Array,
): number {
  try {
    if (!Number.isInteger(kind) || kind < 0 || kind > 4) {
      return fail(CONDCL_INVALID_ARGUMENT, `unknown loss kind ${kind}`);
    }
    if (!Number.isInteger(n) || n < 1 || !Number.isInteger(d) || d < 1) {
      return fail(CONDCL_SHAPE_MISMATCH, `bad shape n=${n}, d=${d}`);
    }
    if (featuresView1.length !== n * d || featuresView2.length !== n * d) {
      return fail(
        CONDCL_SHAPE_MISMATCH,
        `feature buffers must hold ${n * d} values, got ${featuresView1.length} and ${featuresView2.length}`,
      );
    }
    if (metaWeights.length !== n * n) {
      return fail(CONDCL_SHAPE_MISMATCH, `weight buffer must hold ${n * n} values, got ${metaWeights.length}`);
    }
    if (outValue.length < 1 || outGradView1.length !== n * d || outGradView2.length !== n * d) {
      return fail(CONDCL_SHAPE_MISMATCH, "output buffers have the wrong size");
    }
    if (!Number.isFinite(tau) || tau <= 0) {
      return fail(CONDCL_INVALID_ARGUMENT, `tau must be > 0, got ${tau}`);
    }
    if (!Number.isFinite(lambda) || lambda < 0) {
      return fail(CONDCL_INVALID_ARGUMENT, `lambda must be >= 0, got ${lambda}`);
    }
    if (!allFinite(featuresView1) || !allFinite(featuresView2) || !allFinite(metaWeights)) {
      return fail(CONDCL_SHAPE_MISMATCH, "inputs contain non-finite entries");
    }
    if (!rowsUnitNorm(featuresView1, n, d) || !rowsUnitNorm(featuresView2, n, d)) {
      return fail(CONDCL_SHAPE_MISMATCH, `feature rows must be unit-norm within ${NORM_TOL}`);
    }

    const s = scores(featuresView1, featuresView2, n, d, tau);
    outGradView1.fill(0);
    outGradView2.fill(0);

    let value: number;
    if (kind === LOSS_COMBINED) {
      const align = alignmentTerm(s, metaWeights, n);
      if (align.status !== CONDCL_OK) return align.status;
      const unif = conditionalUniformityTerm(s, metaWeights, n);
      if (unif.status !== CONDCL_OK) return unif.status;
      value = align.value + lambda * unif.value;
      chainGrads(align.g, featuresView1, featuresView2, n, d, tau, 1, outGradView1, outGradView2);
      chainGrads(unif.g, featuresView1, featuresView2, n, d, tau, lambda, outGradView1, outGradView2);
    } else {
      let term: TermResult;
      if (kind === LOSS_YAWARE_INFONCE) term = yawareTerm(s, metaWeights, n);
      else if (kind === LOSS_CONDITIONAL_ALIGNMENT) term = alignmentTerm(s, metaWeights, n);
      else if (kind === LOSS_GLOBAL_UNIFORMITY) term = globalUniformityTerm(s, n);
      else term = conditionalUniformityTerm(s, metaWeights, n);
      if (term.status !== CONDCL_OK) return term.status;
      value = term.value;
      chainGrads(term.g, featuresView1, featuresView2, n, d, tau, 1, outGradView1, outGradView2);
    }
    outValue[0] = value;
    return CONDCL_OK;
  } catch (err) {
    return fail(CONDCL_INTERNAL_ERROR, `internal error: ${String(err)}`);
  }
}

/**
 * Kernel weight matrix over meta-data records.
 *
 * metaContinuous: n*pCont row-major floats; metaCategorical: n*pCat int64
 * codes. family: 0 rbf | 1 categorical | 2 product. sigma is the rbf
 * bandwidth (ignored for the categorical family). Writes the n*n matrix
 * into outW; the diagonal is exactly 1 and the matrix exactly symmetric.
 */
export function condcl_weight_matrix_v1(
  metaContinuous: Float64Array,
  metaCategorical: BigInt64Array,
  n: number,
  pCont: number,
  pCat: number,
  family: number,
  sigma: number,
  outW: Float64Array,
): number {
  try {
    if (family !== FAMILY_RBF && family !== FAMILY_CATEGORICAL && family !== FAMILY_PRODUCT) {
      return fail(CONDCL_UNKNOWN_FAMILY, `unknown kernel family ${family}`);
    }
    if (!Number.isInteger(n) || n < 1 || pCont < 0 || pCat < 0) {
      return fail(CONDCL_SHAPE_MISMATCH, `bad shape n=${n}, pCont=${pCont}, pCat=${pCat}`);
    }
    if (metaContinuous.length !== n * pCont || metaCategorical.length !== n * pCat) {
      return fail(CONDCL_SHAPE_MISMATCH, "meta buffers do not match the declared shapes");
    }
    if (outW.length !== n * n) {
      return fail(CONDCL_SHAPE_MISMATCH, `output buffer must hold ${n * n} values`);
    }
    const needsSigma = family === FAMILY_RBF || family === FAMILY_PRODUCT;
    if (needsSigma && (!Number.isFinite(sigma) || sigma <= 0)) {
      return fail(CONDCL_BANDWIDTH_ERROR, `sigma must be > 0 for this family, got ${sigma}`);
    }
    if (!allFinite(metaContinuous)) {
      return fail(CONDCL_SHAPE_MISMATCH, "continuous meta-data contains non-finite entries");
    }
    for (let i = 0; i < metaCategorical.length; i++) {
      if (metaCategorical[i] < 0n) return fail(CONDCL_SHAPE_MISMATCH, "categorical codes must be >= 0");
    }

    for (let i = 0; i < n; i++) {
      outW[i * n + i] = 1;
      for (let j = i + 1; j < n; j++) {
        let value = 1;
        if (needsSigma) {
          let d2 = 0;
          for (let k = 0; k < pCont; k++) {
            const diff = metaContinuous[i * pCont + k] - metaContinuous[j * pCont + k];
            d2 += diff * diff;
          }
          value = Math.exp(-d2 / (2 * sigma * sigma));
        }
        if (family !== FAMILY_RBF) {
          for (let k = 0; k < pCat; k++) {
            if (metaCategorical[i * pCat + k] !== metaCategorical[j * pCat + k]) {
              value = 0;
              break;
            }
          }
        }
        outW[i * n + j] = value;
        outW[j * n + i] = value;
      }
    }
    return CONDCL_OK;
  } catch (err) {
    return fail(CONDCL_INTERNAL_ERROR, `internal error: ${String(err)}`);
  }
}
