//! View-conditioned bias injection for visual token grids.
//!
//! A token matrix `X` (N tokens x D features) is mean-pooled into a context
//! vector `c`, passed through a bias-free bottleneck MLP
//! `b = W2 · relu(W1 · c)` and the resulting bias is added to every token.
//! `W2` starts at zero, so a freshly initialised module is the identity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major `rows x cols` matrix of token features.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TokenMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("token matrix needs N >= 1 and D >= 1"));
        }
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("token matrix entries must be finite"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch {
                expected: cols,
                got: bad.len(),
            });
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Number of tokens.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Feature dimension.
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols)
    }
}

/// Bottleneck weights. `w1` is `hidden x dim`, `w2` is `dim x hidden`,
/// both row-major, with `hidden = dim / ratio`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamsRepr", into = "ParamsRepr")]
pub struct MetaNetParams {
    dim: usize,
    ratio: usize,
    w1: Vec<f64>,
    w2: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsRepr {
    #[serde(rename = "D")]
    dim: usize,
    r: usize,
    #[serde(rename = "W1")]
    w1: Vec<f64>,
    #[serde(rename = "W2")]
    w2: Vec<f64>,
}

impl TryFrom<ParamsRepr> for MetaNetParams {
    type Error = Error;

    fn try_from(p: ParamsRepr) -> Result<Self> {
        MetaNetParams::from_weights(p.dim, p.r, p.w1, p.w2)
    }
}

impl From<MetaNetParams> for ParamsRepr {
    fn from(p: MetaNetParams) -> Self {
        ParamsRepr {
            dim: p.dim,
            r: p.ratio,
            w1: p.w1,
            w2: p.w2,
        }
    }
}

fn check_shape(dim: usize, ratio: usize) -> Result<usize> {
    if dim == 0 || ratio == 0 {
        return Err(Error::invalid(
            "dimension and bottleneck ratio must be positive",
        ));
    }
    if !dim.is_multiple_of(ratio) {
        return Err(Error::invalid(format!(
            "dimension {dim} is not divisible by bottleneck ratio {ratio}"
        )));
    }
    Ok(dim / ratio)
}

impl MetaNetParams {
    pub fn from_weights(dim: usize, ratio: usize, w1: Vec<f64>, w2: Vec<f64>) -> Result<Self> {
        let hidden = check_shape(dim, ratio)?;
        for w in [&w1, &w2] {
            if w.len() != hidden * dim {
                return Err(Error::DimensionMismatch {
                    expected: hidden * dim,
                    got: w.len(),
                });
            }
            if w.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("weights must be finite"));
            }
        }
        Ok(Self { dim, ratio, w1, w2 })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ratio(&self) -> usize {
        self.ratio
    }

    pub fn hidden(&self) -> usize {
        self.dim / self.ratio
    }

    pub fn w1(&self) -> &[f64] {
        &self.w1
    }

    pub fn w2(&self) -> &[f64] {
        &self.w2
    }

    pub fn w1_mut(&mut self) -> &mut [f64] {
        &mut self.w1
    }

    pub fn w2_mut(&mut self) -> &mut [f64] {
        &mut self.w2
    }

    /// `2 * D^2 / r`.
    pub fn parameter_count(&self) -> usize {
        self.w1.len() + self.w2.len()
    }

    /// Flat little-endian encoding: `D`, `r` as u64 followed by `W1` and
    /// `W2` as f64, row-major.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * self.parameter_count());
        out.extend_from_slice(&(self.dim as u64).to_le_bytes());
        out.extend_from_slice(&(self.ratio as u64).to_le_bytes());
        for v in self.w1.iter().chain(&self.w2) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let word = |i: usize| -> Result<[u8; 8]> {
            bytes
                .get(i * 8..i * 8 + 8)
                .map(|s| s.try_into().expect("8-byte slice"))
                .ok_or_else(|| Error::invalid("truncated parameter blob"))
        };
        let dim = u64::from_le_bytes(word(0)?) as usize;
        let ratio = u64::from_le_bytes(word(1)?) as usize;
        let hidden = check_shape(dim, ratio)?;
        let n = hidden * dim;
        if bytes.len() != 16 + 16 * n {
            return Err(Error::invalid(format!(
                "parameter blob has {} bytes, expected {}",
                bytes.len(),
                16 + 16 * n
            )));
        }
        let floats: Vec<f64> = (0..2 * n)
            .map(|i| word(i + 2).map(f64::from_le_bytes))
            .collect::<Result<_>>()?;
        let (w1, w2) = floats.split_at(n);
        Self::from_weights(dim, ratio, w1.to_vec(), w2.to_vec())
    }
}

/// `W1 ~ U[-1/sqrt(D), 1/sqrt(D)]` from `seed`, `W2 = 0`.
pub fn init_params(dim: usize, ratio: usize, seed: u64) -> Result<MetaNetParams> {
    let hidden = check_shape(dim, ratio)?;
    let bound = 1.0 / (dim as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w1 = (0..hidden * dim)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Ok(MetaNetParams {
        dim,
        ratio,
        w1,
        w2: vec![0.0; hidden * dim],
    })
}

/// Column means of `x`. Each column is summed in sorted order, so the
/// result is bitwise independent of the token order.
pub fn gap(x: &TokenMatrix) -> Vec<f64> {
    let n = x.rows as f64;
    let mut column = vec![0.0; x.rows];
    (0..x.cols)
        .map(|j| {
            for (slot, row) in column.iter_mut().zip(x.iter_rows()) {
                *slot = row[j];
            }
            column.sort_by(f64::total_cmp);
            column.iter().sum::<f64>() / n
        })
        .collect()
}

fn hidden_preactivation(p: &MetaNetParams, c: &[f64]) -> Vec<f64> {
    p.w1.chunks_exact(p.dim)
        .map(|row| row.iter().zip(c).map(|(w, x)| w * x).sum())
        .collect()
}

fn relu(z: &[f64]) -> Vec<f64> {
    z.iter().map(|&v| v.max(0.0)).collect()
}

/// `W2 · relu(W1 · c)`.
pub fn meta_forward(p: &MetaNetParams, c: &[f64]) -> Result<Vec<f64>> {
    if c.len() != p.dim {
        return Err(Error::DimensionMismatch {
            expected: p.dim,
            got: c.len(),
        });
    }
    let h = relu(&hidden_preactivation(p, c));
    Ok(p.w2
        .chunks_exact(p.hidden())
        .map(|row| row.iter().zip(&h).map(|(w, x)| w * x).sum())
        .collect())
}

/// Adds `b` to every row. Zero bias entries leave the column untouched,
/// so signed zeros in `x` survive.
pub fn inject(x: &TokenMatrix, b: &[f64]) -> Result<TokenMatrix> {
    if b.len() != x.cols {
        return Err(Error::DimensionMismatch {
            expected: x.cols,
            got: b.len(),
        });
    }
    let mut out = x.clone();
    for row in out.data.chunks_exact_mut(x.cols) {
        for (v, &bias) in row.iter_mut().zip(b) {
            if bias != 0.0 {
                *v += bias;
            }
        }
    }
    Ok(out)
}

pub fn vcmn_forward(p: &MetaNetParams, x: &TokenMatrix) -> Result<TokenMatrix> {
    let b = meta_forward(p, &gap(x))?;
    inject(x, &b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VcmnGradients {
    pub d_w1: Vec<f64>,
    pub d_w2: Vec<f64>,
    pub d_x: TokenMatrix,
}

/// Gradients of `sum(grad_out ⊙ vcmn_forward(p, x))` with respect to the
/// weights and the input. The ReLU derivative at exactly 0 is taken as 0.
pub fn vcmn_backward(
    p: &MetaNetParams,
    x: &TokenMatrix,
    grad_out: &TokenMatrix,
) -> Result<VcmnGradients> {
    if x.cols != p.dim {
        return Err(Error::DimensionMismatch {
            expected: p.dim,
            got: x.cols,
        });
    }
    if grad_out.rows != x.rows || grad_out.cols != x.cols {
        return Err(Error::DimensionMismatch {
            expected: x.rows * x.cols,
            got: grad_out.rows * grad_out.cols,
        });
    }
    let (dim, hidden) = (p.dim, p.hidden());
    let c = gap(x);
    let z = hidden_preactivation(p, &c);
    let h = relu(&z);

    // Every row receives the same bias, so its gradient is the row sum.
    let mut g_b = vec![0.0; dim];
    for row in grad_out.iter_rows() {
        for (s, g) in g_b.iter_mut().zip(row) {
            *s += g;
        }
    }

    let mut d_w2 = vec![0.0; dim * hidden];
    for (d, gb) in g_b.iter().enumerate() {
        for (j, hj) in h.iter().enumerate() {
            d_w2[d * hidden + j] = gb * hj;
        }
    }

    let g_z: Vec<f64> = (0..hidden)
        .map(|j| {
            if z[j] > 0.0 {
                (0..dim).map(|d| p.w2[d * hidden + j] * g_b[d]).sum()
            } else {
                0.0
            }
        })
        .collect();

    let mut d_w1 = vec![0.0; hidden * dim];
    for (j, gz) in g_z.iter().enumerate() {
        for (d, cd) in c.iter().enumerate() {
            d_w1[j * dim + d] = gz * cd;
        }
    }

    let n = x.rows as f64;
    let g_c: Vec<f64> = (0..dim)
        .map(|d| (0..hidden).map(|j| p.w1[j * dim + d] * g_z[j]).sum::<f64>() / n)
        .collect();
    let mut d_x = grad_out.clone();
    for row in d_x.data.chunks_exact_mut(dim) {
        for (v, g) in row.iter_mut().zip(&g_c) {
            *v += g;
        }
    }

    Ok(VcmnGradients { d_w1, d_w2, d_x })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> TokenMatrix {
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        TokenMatrix::new(rows, cols, data).unwrap()
    }

    fn random_params(rng: &mut ChaCha8Rng, dim: usize, ratio: usize) -> MetaNetParams {
        let n = dim * dim / ratio;
        let w1 = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w2 = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        MetaNetParams::from_weights(dim, ratio, w1, w2).unwrap()
    }

    fn loss(p: &MetaNetParams, x: &TokenMatrix, g: &TokenMatrix) -> f64 {
        let y = vcmn_forward(p, x).unwrap();
        y.as_slice()
            .iter()
            .zip(g.as_slice())
            .map(|(a, b)| a * b)
            .sum()
    }

    /// Norm-based relative error; zero when both sides vanish.
    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt()
            + b.iter().map(|x| x * x).sum::<f64>().sqrt();
        if scale < 1e-12 {
            0.0
        } else {
            diff / scale
        }
    }

    #[test]
    fn gap_examples() {
        let x = TokenMatrix::from_rows(&[vec![1.0, 3.0], vec![3.0, 1.0]]).unwrap();
        assert_eq!(gap(&x), vec![2.0, 2.0]);
        let one = TokenMatrix::from_rows(&[vec![0.25, -4.0, 7.0]]).unwrap();
        assert_eq!(gap(&one), vec![0.25, -4.0, 7.0]);
    }

    #[test]
    fn meta_forward_examples() {
        let p = MetaNetParams::from_weights(2, 2, vec![1.0, -1.0], vec![0.5, -0.5]).unwrap();
        assert_eq!(meta_forward(&p, &[2.0, 2.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(meta_forward(&p, &[3.0, 1.0]).unwrap(), vec![1.0, -1.0]);
        assert!(meta_forward(&p, &[1.0]).is_err());
        let fresh = init_params(32, 16, 5).unwrap();
        assert!(meta_forward(&fresh, &[3.0; 32])
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn inject_examples() {
        let x = TokenMatrix::from_rows(&[vec![0.0, 0.0]]).unwrap();
        assert_eq!(inject(&x, &[1.0, -1.0]).unwrap().as_slice(), &[1.0, -1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_matrix(&mut rng, 4, 3);
        assert_eq!(inject(&x, &[0.0; 3]).unwrap(), x);
        let b = [0.5, 0.25, -0.125];
        let neg: Vec<f64> = b.iter().map(|v| -v).collect();
        assert_eq!(inject(&inject(&x, &b).unwrap(), &neg).unwrap(), x);
        assert!(inject(&x, &[1.0]).is_err());
    }

    #[test]
    fn identical_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = random_params(&mut rng, 4, 2);
        let row = vec![0.3, -0.2, 0.9, 0.1];
        let x = TokenMatrix::from_rows(&vec![row.clone(); 3]).unwrap();
        let y = vcmn_forward(&p, &x).unwrap();
        let b = meta_forward(&p, &row).unwrap();
        for out in y.iter_rows() {
            for ((o, r), bias) in out.iter().zip(&row).zip(&b) {
                assert!((o - (r + bias)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn init_shapes_and_determinism() {
        let p = init_params(16, 16, 42).unwrap();
        assert_eq!((p.hidden(), p.w1().len()), (1, 16));
        assert!(p.w2().iter().all(|&v| v == 0.0));
        assert_eq!(p, init_params(16, 16, 42).unwrap());
        assert_ne!(p, init_params(16, 16, 43).unwrap());
        let bound = 1.0 / 4.0;
        assert!(p.w1().iter().all(|v| v.abs() <= bound));
        assert!(init_params(20, 16, 0).is_err());
        assert_eq!(init_params(1024, 16, 0).unwrap().parameter_count(), 131_072);
    }

    #[test]
    fn zero_w2_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = init_params(8, 2, 3).unwrap();
        let x = random_matrix(&mut rng, 5, 8);
        let g = random_matrix(&mut rng, 5, 8);
        let grads = vcmn_backward(&p, &x, &g).unwrap();
        assert_eq!(grads.d_x, g);
        assert!(grads.d_w1.iter().all(|&v| v == 0.0));
        assert!(grads.d_w2.iter().any(|&v| v != 0.0));

        let p = random_params(&mut rng, 8, 2);
        let zero = TokenMatrix::zeros(5, 8);
        let grads = vcmn_backward(&p, &x, &zero).unwrap();
        assert!(grads
            .d_w1
            .iter()
            .chain(&grads.d_w2)
            .chain(grads.d_x.as_slice())
            .all(|&v| v == 0.0));
    }

    #[test]
    fn finite_difference_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let h = 1e-5;
        for _ in 0..10 {
            let ratio = [1, 2, 4][rng.random_range(0..3)];
            let dim = ratio * rng.random_range(1..=4);
            let rows = rng.random_range(1..=6);
            let p = random_params(&mut rng, dim, ratio);
            let x = random_matrix(&mut rng, rows, dim);
            let g = random_matrix(&mut rng, rows, dim);
            let grads = vcmn_backward(&p, &x, &g).unwrap();

            let mut num_w1 = vec![0.0; p.w1().len()];
            for (i, slot) in num_w1.iter_mut().enumerate() {
                let (mut hi, mut lo) = (p.clone(), p.clone());
                hi.w1_mut()[i] += h;
                lo.w1_mut()[i] -= h;
                *slot = (loss(&hi, &x, &g) - loss(&lo, &x, &g)) / (2.0 * h);
            }
            let mut num_w2 = vec![0.0; p.w2().len()];
            for (i, slot) in num_w2.iter_mut().enumerate() {
                let (mut hi, mut lo) = (p.clone(), p.clone());
                hi.w2_mut()[i] += h;
                lo.w2_mut()[i] -= h;
                *slot = (loss(&hi, &x, &g) - loss(&lo, &x, &g)) / (2.0 * h);
            }
            let mut num_x = vec![0.0; x.as_slice().len()];
            for (i, slot) in num_x.iter_mut().enumerate() {
                let (mut hi, mut lo) = (x.clone(), x.clone());
                hi.as_mut_slice()[i] += h;
                lo.as_mut_slice()[i] -= h;
                *slot = (loss(&p, &hi, &g) - loss(&p, &lo, &g)) / (2.0 * h);
            }
            assert!(rel_err(&grads.d_w1, &num_w1) < 1e-5);
            assert!(rel_err(&grads.d_w2, &num_w2) < 1e-5);
            assert!(rel_err(grads.d_x.as_slice(), &num_x) < 1e-5);
        }
    }

    #[test]
    fn serialization_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = random_params(&mut rng, 8, 4);
        let json = serde_json::to_string(&p).unwrap();
        assert!(json.starts_with("{\"D\":8,\"r\":4,\"W1\":["));
        let back: MetaNetParams = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p);
        assert!(back
            .w1()
            .iter()
            .zip(p.w1())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(MetaNetParams::from_bytes(&p.to_bytes()).unwrap(), p);
        assert!(MetaNetParams::from_bytes(&p.to_bytes()[..20]).is_err());
        assert!(serde_json::from_str::<MetaNetParams>(r#"{"D":3,"r":2,"W1":[],"W2":[]}"#).is_err());
    }

    #[test]
    fn shape_errors() {
        let p = init_params(4, 2, 0).unwrap();
        let x = TokenMatrix::zeros(2, 3);
        assert!(vcmn_forward(&p, &x).is_err());
        let x = TokenMatrix::zeros(2, 4);
        assert!(vcmn_backward(&p, &x, &TokenMatrix::zeros(3, 4)).is_err());
        assert!(TokenMatrix::new(0, 4, vec![]).is_err());
        assert!(TokenMatrix::new(2, 2, vec![0.0; 3]).is_err());
        assert!(TokenMatrix::new(1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn permutation_equivariance_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let rows = rng.random_range(2..=8);
            let p = random_params(&mut rng, 16, 4);
            let x = random_matrix(&mut rng, rows, 16);
            let mut perm: Vec<usize> = (0..rows).collect();
            for i in (1..rows).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            let permuted: Vec<Vec<f64>> = perm.iter().map(|&i| x.row(i).to_vec()).collect();
            let y = vcmn_forward(&p, &x).unwrap();
            let yp = vcmn_forward(&p, &TokenMatrix::from_rows(&permuted).unwrap()).unwrap();
            for (k, &i) in perm.iter().enumerate() {
                assert!(yp
                    .row(k)
                    .iter()
                    .zip(y.row(i))
                    .all(|(a, b)| a.to_bits() == b.to_bits()));
            }
        }
    }
}
