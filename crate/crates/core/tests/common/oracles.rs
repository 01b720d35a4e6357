//! Reference computations written directly from the problem's formulas,
//! sharing no code with the library.

use noma_beam::channel::sample_rayleigh;
use noma_beam::{CMatrix, ChannelSet, DirectionMatrix, RngStream, C64};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

pub fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| rel(x, y)).fold(0.0, f64::max)
}

fn inner(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// `|h_k^H u_i|^2`, indexed `[k][i]`.
pub fn gains(c: &ChannelSet, u: &CMatrix) -> Vec<Vec<f64>> {
    (0..c.k())
        .map(|k| (0..u.cols()).map(|i| inner(c.user(k), u.col(i)).norm_sqr()).collect())
        .collect()
}

/// The power-recovery matrix: `g_kk / gamma_k` on the diagonal, `-g_ki`
/// above it, zero below.
pub fn psi(c: &ChannelSet, u: &CMatrix, gamma: &[f64]) -> Vec<Vec<f64>> {
    let g = gains(c, u);
    let k = c.k();
    (0..k)
        .map(|r| {
            (0..k)
                .map(|i| match i.cmp(&r) {
                    std::cmp::Ordering::Equal => g[r][r] / gamma[r],
                    std::cmp::Ordering::Greater => -g[r][i],
                    std::cmp::Ordering::Less => 0.0,
                })
                .collect()
        })
        .collect()
}

/// Gaussian elimination with partial pivoting on a dense square system.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for j in col..n {
                a[row][j] -= f * a[col][j];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|j| a[row][j] * x[j]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// SINR of every user from the powers and directions, interference from
/// users `i > k` only.
pub fn sinr(c: &ChannelSet, u: &CMatrix, p: &[f64]) -> Vec<f64> {
    let g = gains(c, u);
    (0..c.k())
        .map(|k| {
            let interference: f64 = (k + 1..c.k()).map(|i| p[i] * g[k][i]).sum();
            p[k] * g[k][k] / (interference + c.sigma2())
        })
        .collect()
}

/// Single-antenna cascade: the optimum for `N = 1` and any `K`.
/// `p_K = gamma sigma2 / |h_K|^2`, then backwards
/// `p_k = gamma (sum_{i>k} p_i |h_k|^2 + sigma2) / |h_k|^2`.
pub fn cascade(h2: &[f64], gamma: f64, sigma2: f64) -> Vec<f64> {
    let k = h2.len();
    let mut p = vec![0.0; k];
    for j in (0..k).rev() {
        let above: f64 = p[j + 1..].iter().sum();
        p[j] = gamma * (above * h2[j] + sigma2) / h2[j];
    }
    p
}

pub fn channel(n: usize, k: usize, sigma2: f64, seed: u64, stream: u64) -> ChannelSet {
    sample_rayleigh::<f64>(n, k, sigma2, RngStream::new(seed, stream)).unwrap()
}

pub fn random_directions(rng: &mut impl Rng, n: usize, k: usize) -> DirectionMatrix {
    let cols: Vec<Vec<C64>> = (0..k)
        .map(|_| {
            (0..n)
                .map(|_| C64::new(StandardNormal.sample(rng), StandardNormal.sample(rng)))
                .collect()
        })
        .collect();
    DirectionMatrix::normalized(CMatrix::from_columns(n, &cols)).unwrap()
}
