/**
 * Complex embedding table (separate re/im planes) and the trilinear
 * scoring function Re(sum_k r_k * h_k * conj(t_k)).
 */

export interface ComplexTable {
  rows: number;
  dim: number;
  re: Float64Array; // rows * dim, row-major
  im: Float64Array;
}

export function complexScore(
  entities: ComplexTable,
  relations: ComplexTable,
  h: number,
  r: number,
  t: number
): number {
  const d = entities.dim;
  const hOff = h * d;
  const tOff = t * d;
  const rOff = r * d;
  let score = 0;
  for (let k = 0; k < d; k++) {
    const a = relations.re[rOff + k];
    const b = relations.im[rOff + k];
    const c = entities.re[hOff + k];
    const e = entities.im[hOff + k];
    // (a + bi)(c + ei) = (ac - be) + (ae + bc)i
    const x = a * c - b * e;
    const y = a * e + b * c;
    // Re((x + yi) * conj(u + vi)) = x*u + y*v
    score += x * entities.re[tOff + k] + y * entities.im[tOff + k];
  }
  return score;
}
