//! Fixed bank of 84 zero-sum length-9 kernels with dilations, per-combination
//! channel choice and data-fitted biases, pooled by proportion of positive
//! values (PPV).

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds::{mix, rng_from_seed};

pub const KERNEL_LENGTH: usize = 9;
pub const NUM_KERNELS: usize = 84;
pub const DEFAULT_NUM_FEATURES: usize = 2520;
/// Cap on distinct dilation grid points per kernel.
pub const MAX_DILATIONS_PER_KERNEL: usize = 32;

const CENTER: usize = KERNEL_LENGTH / 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channel {
    I,
    Q,
    /// I + Q
    Sum,
}

impl Channel {
    const CYCLE: [Channel; 3] = [Channel::I, Channel::Q, Channel::Sum];

    pub fn code(self) -> u8 {
        match self {
            Channel::I => 0,
            Channel::Q => 1,
            Channel::Sum => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::CYCLE.get(code as usize).copied()
    }

    pub fn extract(self, y: &[Complex64]) -> Vec<f64> {
        match self {
            Channel::I => y.iter().map(|c| c.re).collect(),
            Channel::Q => y.iter().map(|c| c.im).collect(),
            Channel::Sum => y.iter().map(|c| c.re + c.im).collect(),
        }
    }
}

/// `Same` keeps all `n_s` output positions and extends the input by
/// replicating its edge samples; `Valid` keeps only positions whose taps
/// all fall inside the sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Padding {
    Same,
    Valid,
}

impl Padding {
    pub fn code(self) -> u8 {
        match self {
            Padding::Same => 0,
            Padding::Valid => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Padding::Same),
            1 => Some(Padding::Valid),
            _ => None,
        }
    }

    /// Output positions `[start, end)` for a given dilation.
    pub fn range(self, n_s: usize, dilation: usize) -> (usize, usize) {
        match self {
            Padding::Same => (0, n_s),
            Padding::Valid => (CENTER * dilation, n_s - CENTER * dilation),
        }
    }
}

/// Positions of the three `2` weights; the other six taps are `-1`.
pub type Kernel = [u8; 3];

/// All C(9, 3) placements in lexicographic order.
pub fn all_kernels() -> Vec<Kernel> {
    let mut out = Vec::with_capacity(NUM_KERNELS);
    for a in 0..KERNEL_LENGTH as u8 {
        for b in a + 1..KERNEL_LENGTH as u8 {
            for c in b + 1..KERNEL_LENGTH as u8 {
                out.push([a, b, c]);
            }
        }
    }
    out
}

pub fn kernel_weights(kernel: &Kernel) -> [f64; KERNEL_LENGTH] {
    let mut w = [-1.0; KERNEL_LENGTH];
    for &p in kernel {
        w[p as usize] = 2.0;
    }
    w
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Combination {
    pub kernel: usize,
    pub dilation_index: usize,
    pub dilation: usize,
    pub channel: Channel,
    pub padding: Padding,
    pub n_biases: usize,
    /// Index of the training example the biases were fitted on.
    pub fit_example: Option<usize>,
    pub biases: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KernelBank {
    pub n_s: usize,
    pub num_features: usize,
    pub seed: u64,
    pub kernels: Vec<Kernel>,
    pub dilations: Vec<usize>,
    /// Combinations ordered dilation-major, then kernel.
    pub combinations: Vec<Combination>,
}

/// Geometric dilation grid `floor(2^(j log2(d_max) / (J - 1)))`, deduplicated,
/// with the multiplicity of each distinct value.
pub fn dilation_grid(n_s: usize, grid_points: usize) -> Vec<(usize, usize)> {
    let d_max = ((n_s - 1) / (KERNEL_LENGTH - 1)).max(1);
    let exponent = (d_max as f64).log2();
    let mut out: Vec<(usize, usize)> = Vec::new();
    for j in 0..grid_points {
        let d = if grid_points == 1 {
            1
        } else {
            (2f64.powf(j as f64 * exponent / (grid_points - 1) as f64) + 1e-9).floor() as usize
        };
        let d = d.clamp(1, d_max);
        match out.last_mut() {
            Some((last, count)) if *last == d => *count += 1,
            _ => out.push((d, 1)),
        }
    }
    out
}

/// Builds the bank skeleton: kernels, dilations, channels and padding.
/// Biases stay empty until [`KernelBank::fit_biases`].
pub fn build_kernel_bank(n_s: usize, num_features: usize, seed: u64) -> Result<KernelBank> {
    if n_s < KERNEL_LENGTH {
        return Err(Error::InvalidParameter(format!(
            "sequence length {n_s} shorter than the kernel length {KERNEL_LENGTH}"
        )));
    }
    if num_features < NUM_KERNELS {
        return Err(Error::InvalidParameter(format!(
            "need at least {NUM_KERNELS} features, got {num_features}"
        )));
    }
    let per_kernel = num_features / NUM_KERNELS;
    let grid_points = per_kernel.min(MAX_DILATIONS_PER_KERNEL);
    let grid = dilation_grid(n_s, grid_points);
    let multiplier = per_kernel / grid_points;
    let mut counts: Vec<usize> = grid.iter().map(|&(_, c)| c * multiplier).collect();
    let mut remainder = per_kernel - counts.iter().sum::<usize>();
    let mut i = 0;
    while remainder > 0 {
        counts[i] += 1;
        remainder -= 1;
        i = (i + 1) % counts.len();
    }

    let kernels = all_kernels();
    let dilations: Vec<usize> = grid.iter().map(|&(d, _)| d).collect();
    let mut combinations = Vec::with_capacity(dilations.len() * NUM_KERNELS);
    for (di, (&dilation, &n_biases)) in dilations.iter().zip(&counts).enumerate() {
        for k in 0..NUM_KERNELS {
            combinations.push(Combination {
                kernel: k,
                dilation_index: di,
                dilation,
                channel: Channel::CYCLE[(k + di) % 3],
                padding: if (k + di) % 2 == 0 {
                    Padding::Same
                } else {
                    Padding::Valid
                },
                n_biases,
                fit_example: None,
                biases: Vec::new(),
            });
        }
    }
    Ok(KernelBank {
        n_s,
        num_features: per_kernel * NUM_KERNELS,
        seed,
        kernels,
        dilations,
        combinations,
    })
}

/// Linear-interpolated empirical quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    }
}

/// Shifted views of one channel at one dilation, with edge replication.
struct DilatedTaps {
    taps: Vec<Vec<f64>>,
    sum: Vec<f64>,
}

impl DilatedTaps {
    fn new(x: &[f64], dilation: usize) -> Self {
        let n = x.len() as isize;
        let taps: Vec<Vec<f64>> = (0..KERNEL_LENGTH)
            .map(|k| {
                let shift = (k as isize - CENTER as isize) * dilation as isize;
                (0..n)
                    .map(|t| x[(t + shift).clamp(0, n - 1) as usize])
                    .collect()
            })
            .collect();
        let sum = (0..x.len())
            .map(|t| taps.iter().map(|tap| tap[t]).sum())
            .collect();
        Self { taps, sum }
    }

    /// `3 (x_a + x_b + x_c) - sum` over `[start, end)`, written into `out`.
    fn convolve(&self, kernel: &Kernel, start: usize, end: usize, out: &mut Vec<f64>) {
        let (a, b, c) = (
            &self.taps[kernel[0] as usize][start..end],
            &self.taps[kernel[1] as usize][start..end],
            &self.taps[kernel[2] as usize][start..end],
        );
        out.clear();
        out.extend(
            a.iter()
                .zip(b)
                .zip(c)
                .zip(&self.sum[start..end])
                .map(|(((a, b), c), s)| 3.0 * (a + b + c) - s),
        );
    }
}

impl KernelBank {
    pub fn is_fitted(&self) -> bool {
        self.combinations
            .iter()
            .all(|c| c.biases.len() == c.n_biases)
    }

    /// Deterministic training-example index per combination, derived from
    /// the bank seed and a fingerprint of the training set.
    pub fn fit_indices(&self, n_examples: usize, fingerprint: u64) -> Result<Vec<usize>> {
        if n_examples == 0 {
            return Err(Error::Degenerate("bias fitting needs a nonempty training subset".into()));
        }
        let mut rng = rng_from_seed(mix(&[self.seed, fingerprint, 0xB1A5]));
        Ok(self
            .combinations
            .iter()
            .map(|_| rng.random_range(0..n_examples))
            .collect())
    }

    /// Sets the biases of every combination to quantiles
    /// `(2k - 1) / (2B)`, `k = 1..B`, of its convolution output on one
    /// training example. `fetch(i)` returns training example `i`.
    pub fn fit_biases<F>(&mut self, n_examples: usize, fingerprint: u64, mut fetch: F) -> Result<()>
    where
        F: FnMut(usize) -> Result<Vec<Complex64>>,
    {
        let indices = self.fit_indices(n_examples, fingerprint)?;
        let mut order: Vec<usize> = (0..indices.len()).collect();
        order.sort_by_key(|&c| (indices[c], c));

        let mut conv = Vec::with_capacity(self.n_s);
        let mut current: Option<(usize, Vec<Complex64>)> = None;
        for c in order {
            let idx = indices[c];
            if current.as_ref().map(|(i, _)| *i) != Some(idx) {
                let example = fetch(idx)?;
                if example.len() != self.n_s {
                    return Err(Error::LengthMismatch {
                        expected: self.n_s,
                        actual: example.len(),
                    });
                }
                current = Some((idx, example));
            }
            let example = &current.as_ref().expect("example loaded").1;
            let combo = &self.combinations[c];
            let taps = DilatedTaps::new(&combo.channel.extract(example), combo.dilation);
            let (start, end) = combo.padding.range(self.n_s, combo.dilation);
            taps.convolve(&self.kernels[combo.kernel], start, end, &mut conv);
            conv.sort_by(f64::total_cmp);
            let b = combo.n_biases;
            let biases = (1..=b)
                .map(|k| quantile_sorted(&conv, (2 * k - 1) as f64 / (2 * b) as f64))
                .collect();
            let combo = &mut self.combinations[c];
            combo.biases = biases;
            combo.fit_example = Some(idx);
        }
        Ok(())
    }

    /// Fits biases on in-memory examples with fingerprint 0.
    pub fn fit_biases_from(&mut self, examples: &[Vec<Complex64>]) -> Result<()> {
        self.fit_biases(examples.len(), 0, |i| Ok(examples[i].clone()))
    }

    /// PPV feature vector, ordered like `combinations` with biases innermost.
    pub fn transform(&self, y: &[Complex64]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.num_features);
        self.transform_into(y, &mut out)?;
        Ok(out)
    }

    pub fn transform_into(&self, y: &[Complex64], out: &mut Vec<f64>) -> Result<()> {
        self.check_ready(y)?;
        out.clear();
        self.for_each_conv(y, |ci, conv| push_ppv(conv, &self.combinations[ci].biases, out));
        Ok(())
    }

    /// Transforms `y` with several banks that share one skeleton and differ
    /// only in their biases, computing each convolution once.
    pub fn transform_shared(banks: &[&KernelBank], y: &[Complex64]) -> Result<Vec<Vec<f64>>> {
        let Some(first) = banks.first() else {
            return Ok(Vec::new());
        };
        for b in banks {
            b.check_ready(y)?;
            if !first.same_skeleton(b) {
                return Err(Error::InvalidParameter("kernel banks do not share a skeleton".into()));
            }
        }
        let mut outs: Vec<Vec<f64>> = banks.iter().map(|b| Vec::with_capacity(b.num_features)).collect();
        first.for_each_conv(y, |ci, conv| {
            for (b, out) in banks.iter().zip(outs.iter_mut()) {
                push_ppv(conv, &b.combinations[ci].biases, out);
            }
        });
        Ok(outs)
    }

    /// True when both banks convolve identically (biases may differ).
    pub fn same_skeleton(&self, other: &KernelBank) -> bool {
        self.n_s == other.n_s
            && self.kernels == other.kernels
            && self.combinations.len() == other.combinations.len()
            && self.combinations.iter().zip(&other.combinations).all(|(a, b)| {
                (a.kernel, a.dilation, a.channel, a.padding, a.n_biases)
                    == (b.kernel, b.dilation, b.channel, b.padding, b.n_biases)
            })
    }

    fn check_ready(&self, y: &[Complex64]) -> Result<()> {
        if y.len() != self.n_s {
            return Err(Error::LengthMismatch {
                expected: self.n_s,
                actual: y.len(),
            });
        }
        if !self.is_fitted() {
            return Err(Error::InvalidParameter("kernel bank biases are not fitted".into()));
        }
        Ok(())
    }

    /// Calls `f(combination index, convolution output)` in combination order.
    fn for_each_conv<F: FnMut(usize, &[f64])>(&self, y: &[Complex64], mut f: F) {
        let channels = [
            Channel::I.extract(y),
            Channel::Q.extract(y),
            Channel::Sum.extract(y),
        ];
        let mut conv = Vec::with_capacity(self.n_s);
        let mut taps: [Option<DilatedTaps>; 3] = [None, None, None];
        let mut current_dilation = usize::MAX;
        for (ci, combo) in self.combinations.iter().enumerate() {
            if combo.dilation_index != current_dilation {
                current_dilation = combo.dilation_index;
                taps = [None, None, None];
            }
            let slot = &mut taps[combo.channel.code() as usize];
            let view = slot.get_or_insert_with(|| {
                DilatedTaps::new(&channels[combo.channel.code() as usize], combo.dilation)
            });
            let (start, end) = combo.padding.range(self.n_s, combo.dilation);
            view.convolve(&self.kernels[combo.kernel], start, end, &mut conv);
            f(ci, &conv);
        }
    }
}

fn push_ppv(conv: &[f64], biases: &[f64], out: &mut Vec<f64>) {
    let len = conv.len() as f64;
    for &bias in biases {
        let positive = conv.iter().filter(|&&v| v > bias).count();
        out.push(positive as f64 / len);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds::rng_from_seed;
    use std::collections::HashSet;

    fn random_iq(seed: u64, n: usize) -> Vec<Complex64> {
        let mut rng = rng_from_seed(seed);
        (0..n)
            .map(|_| {
                Complex64::new(
                    rng.random::<f32>() as f64 * 2.0 - 1.0,
                    rng.random::<f32>() as f64 * 2.0 - 1.0,
                )
            })
            .collect()
    }

    #[test]
    fn kernel_enumeration() {
        // brute-force: every 9-bit mask with three bits set
        let brute: HashSet<Vec<u8>> = (0u32..512)
            .filter(|m| m.count_ones() == 3)
            .map(|m| (0..9u8).filter(|b| m & (1 << b) != 0).collect())
            .collect();
        let ks = all_kernels();
        assert_eq!(ks.len(), 84);
        let ours: HashSet<Vec<u8>> = ks.iter().map(|k| k.to_vec()).collect();
        assert_eq!(ours, brute);
        for k in &ks {
            assert_eq!(kernel_weights(k).iter().sum::<f64>(), 0.0);
        }
    }

    #[test]
    fn dilation_grid_for_500() {
        let grid = dilation_grid(500, 30);
        assert_eq!((499 / 8), 62);
        assert_eq!(grid.first().unwrap().0, 1);
        assert_eq!(grid.last().unwrap().0, 62);
        assert_eq!(grid.iter().map(|g| g.1).sum::<usize>(), 30);
        assert!(grid.windows(2).all(|w| w[0].0 < w[1].0));
        assert!(grid.iter().all(|&(d, _)| (KERNEL_LENGTH - 1) * d < 500));
    }

    #[test]
    fn default_bank_layout() {
        let bank = build_kernel_bank(500, DEFAULT_NUM_FEATURES, 0).unwrap();
        assert_eq!(bank.num_features, 2520);
        let total: usize = bank.combinations.iter().map(|c| c.n_biases).sum();
        assert_eq!(total, 2520);
        assert_eq!(bank.combinations.len(), bank.dilations.len() * NUM_KERNELS);
        let channels: HashSet<_> = bank.combinations.iter().map(|c| c.channel).collect();
        assert_eq!(channels.len(), 3);
        let same = bank
            .combinations
            .iter()
            .filter(|c| c.padding == Padding::Same)
            .count();
        assert!(same > 0 && same < bank.combinations.len());
    }

    #[test]
    fn bank_rejects_short_sequences() {
        assert!(build_kernel_bank(8, 2520, 0).is_err());
        assert!(build_kernel_bank(500, 83, 0).is_err());
    }

    #[test]
    fn single_bias_is_the_median() {
        let mut bank = build_kernel_bank(64, NUM_KERNELS, 3).unwrap();
        assert!(bank.combinations.iter().all(|c| c.n_biases == 1));
        let example = random_iq(1, 64);
        bank.fit_biases_from(std::slice::from_ref(&example)).unwrap();
        for combo in &bank.combinations {
            let x = combo.channel.extract(&example);
            let w = kernel_weights(&bank.kernels[combo.kernel]);
            let (start, end) = combo.padding.range(64, combo.dilation);
            let mut out: Vec<f64> = (start..end)
                .map(|t| {
                    (0..9)
                        .map(|k| {
                            let idx = t as isize + (k as isize - 4) * combo.dilation as isize;
                            w[k] * x[idx.clamp(0, 63) as usize]
                        })
                        .sum()
                })
                .collect();
            out.sort_by(f64::total_cmp);
            let m = out.len();
            let median = if m % 2 == 1 {
                out[m / 2]
            } else {
                (out[m / 2 - 1] + out[m / 2]) / 2.0
            };
            assert!((combo.biases[0] - median).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_example_gives_zero_biases() {
        let mut bank = build_kernel_bank(100, 840, 0).unwrap();
        let constant = vec![Complex64::new(0.3f32 as f64, -0.7f32 as f64); 100];
        bank.fit_biases_from(&[constant]).unwrap();
        assert!(bank
            .combinations
            .iter()
            .flat_map(|c| &c.biases)
            .all(|&b| b == 0.0));
    }

    #[test]
    fn refit_is_bit_identical() {
        let examples: Vec<_> = (0..10).map(|s| random_iq(s, 120)).collect();
        let mut a = build_kernel_bank(120, 1008, 9).unwrap();
        let mut b = a.clone();
        a.fit_biases(10, 77, |i| Ok(examples[i].clone())).unwrap();
        b.fit_biases(10, 77, |i| Ok(examples[i].clone())).unwrap();
        assert_eq!(a, b);
        let mut c = build_kernel_bank(120, 1008, 9).unwrap();
        c.fit_biases(10, 78, |i| Ok(examples[i].clone())).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn empty_training_subset_errors() {
        let mut bank = build_kernel_bank(100, 840, 0).unwrap();
        assert!(bank.fit_biases_from(&[]).is_err());
        assert!(bank.transform(&random_iq(0, 100)).is_err());
    }

    #[test]
    fn ppv_extremes() {
        let mut bank = build_kernel_bank(50, NUM_KERNELS, 0).unwrap();
        let y = random_iq(4, 50);
        bank.fit_biases_from(std::slice::from_ref(&y)).unwrap();
        for combo in bank.combinations.iter_mut() {
            combo.biases = vec![f64::NEG_INFINITY];
        }
        assert!(bank.transform(&y).unwrap().iter().all(|&f| f == 1.0));
        for combo in bank.combinations.iter_mut() {
            combo.biases = vec![f64::INFINITY];
        }
        assert!(bank.transform(&y).unwrap().iter().all(|&f| f == 0.0));
        assert!(bank.transform(&y[..49]).is_err());
    }

    #[test]
    fn dc_offsets_leave_features_unchanged() {
        let mut bank = build_kernel_bank(500, DEFAULT_NUM_FEATURES, 1).unwrap();
        let train: Vec<_> = (0..4).map(|s| random_iq(s, 500)).collect();
        bank.fit_biases_from(&train).unwrap();
        let y = random_iq(99, 500);
        let base = bank.transform(&y).unwrap();
        // dyadic offsets keep every convolution output exact
        for (di, dq) in [(0.25, 0.0), (0.0, -0.5), (0.125, 0.375)] {
            let shifted: Vec<_> = y.iter().map(|c| c + Complex64::new(di, dq)).collect();
            let f = bank.transform(&shifted).unwrap();
            let worst = base
                .iter()
                .zip(&f)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(worst <= 1e-9, "offset ({di}, {dq}): {worst}");
        }
    }

    #[test]
    fn shared_transform_matches_individual() {
        let mut a = build_kernel_bank(120, 840, 5).unwrap();
        let mut b = a.clone();
        a.fit_biases_from(&[random_iq(1, 120), random_iq(2, 120)]).unwrap();
        b.fit_biases_from(&[random_iq(3, 120)]).unwrap();
        let y = random_iq(7, 120);
        let shared = KernelBank::transform_shared(&[&a, &b], &y).unwrap();
        assert_eq!(shared, vec![a.transform(&y).unwrap(), b.transform(&y).unwrap()]);

        let mut other = build_kernel_bank(120, 420, 5).unwrap();
        other.fit_biases_from(&[random_iq(1, 120)]).unwrap();
        assert!(!a.same_skeleton(&other));
        assert!(KernelBank::transform_shared(&[&a, &other], &y).is_err());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(16))]

        #[test]
        fn ppv_stays_in_unit_interval(seed in 0u64..1_000_000, n_s in 9usize..200) {
            let mut bank = build_kernel_bank(n_s, NUM_KERNELS * 2, seed).unwrap();
            bank.fit_biases_from(&[random_iq(seed, n_s), random_iq(seed + 1, n_s)]).unwrap();
            let f = bank.transform(&random_iq(seed + 2, n_s)).unwrap();
            proptest::prop_assert_eq!(f.len(), bank.combinations.iter().map(|c| c.n_biases).sum::<usize>());
            proptest::prop_assert!(f.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
