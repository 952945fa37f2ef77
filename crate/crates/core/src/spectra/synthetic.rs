//! Synthetic Raman-like spectra built from Gaussian peaks on a linear
//! baseline with additive Gaussian noise.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{ClassRole, SpectraError, Spectrum};

/// Evenly spaced wavenumber axis, endpoints included.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WavenumberGrid {
    pub start: f64,
    pub stop: f64,
    pub bins: usize,
}

impl Default for WavenumberGrid {
    fn default() -> Self {
        Self {
            start: 200.0,
            stop: 3200.0,
            bins: 1024,
        }
    }
}

impl WavenumberGrid {
    pub fn axis(&self) -> Vec<f64> {
        let step = (self.stop - self.start) / (self.bins - 1) as f64;
        (0..self.bins).map(|i| self.start + step * i as f64).collect()
    }

    fn validate(&self) -> Result<(), SpectraError> {
        if self.bins < 2 || !(self.stop > self.start) || !self.start.is_finite() || !self.stop.is_finite() {
            return Err(SpectraError::Profile(format!("bad grid {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    /// Centre in cm⁻¹.
    pub position: f64,
    /// Gaussian standard deviation in cm⁻¹.
    pub width: f64,
    pub amplitude: f64,
}

/// Generative description of one class.
///
/// Per sample, each peak's width and amplitude are scaled by
/// `1 + jitter * z` and its position shifted by `jitter * width * z`, with
/// independent standard normal `z`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticClassProfile {
    pub grid: WavenumberGrid,
    pub peaks: Vec<Peak>,
    pub baseline_offset: f64,
    /// Counts per cm⁻¹, measured from `grid.start`.
    pub baseline_slope: f64,
    pub noise_sigma: f64,
    pub jitter: f64,
}

impl SyntheticClassProfile {
    pub fn validate(&self) -> Result<(), SpectraError> {
        self.grid.validate()?;
        for p in &self.peaks {
            if !(p.position >= self.grid.start && p.position <= self.grid.stop) {
                return Err(SpectraError::Profile(format!("peak at {} outside grid", p.position)));
            }
            if !(p.width > 0.0) || !(p.amplitude > 0.0) {
                return Err(SpectraError::Profile(format!("peak {p:?} needs positive width and amplitude")));
            }
        }
        if !(self.noise_sigma >= 0.0) || !(self.jitter >= 0.0) {
            return Err(SpectraError::Profile("noise sigma and jitter must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Draws `n` spectra from `profile`; a pure function of `(profile, n, seed)`.
pub fn generate_synthetic(profile: &SyntheticClassProfile, n: usize, seed: u64) -> Result<Vec<Spectrum>, SpectraError> {
    profile.validate()?;
    if n == 0 {
        return Err(SpectraError::Profile("sample count must be at least 1".into()));
    }
    let axis = profile.grid.axis();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut ints: Vec<f64> = axis
            .iter()
            .map(|w| profile.baseline_offset + profile.baseline_slope * (w - profile.grid.start))
            .collect();
        for p in &profile.peaks {
            let [z1, z2, z3]: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
            let position = p.position + profile.jitter * p.width * z1;
            let width = p.width * (1.0 + profile.jitter * z2).max(0.1);
            let amplitude = p.amplitude * (1.0 + profile.jitter * z3).max(0.1);
            // Peaks contribute nothing measurable beyond 8 standard deviations.
            let reach = 8.0 * width;
            for (v, w) in ints.iter_mut().zip(&axis) {
                let d = w - position;
                if d.abs() <= reach {
                    *v += amplitude * (-0.5 * (d / width).powi(2)).exp();
                }
            }
        }
        if profile.noise_sigma > 0.0 {
            for v in &mut ints {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += profile.noise_sigma * z;
            }
        }
        out.push(Spectrum::new(axis.clone(), ints)?);
    }
    Ok(out)
}

/// Parameters of the 𝒦/ℐ/𝒩 benchmark: one random profile per class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSpec {
    pub known: usize,
    pub ignored: usize,
    pub never_seen: usize,
    pub per_class: usize,
    pub grid: WavenumberGrid,
    pub peaks_min: usize,
    pub peaks_max: usize,
    /// Size of a pool of peak positions that classes draw from, so that
    /// unrelated classes share some bands.
    pub shared_pool: usize,
    pub shared_per_class: usize,
    pub width_min: f64,
    pub width_max: f64,
    pub amplitude_min: f64,
    pub amplitude_max: f64,
    pub noise_sigma: f64,
    pub jitter: f64,
    pub seed: u64,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        Self {
            known: 20,
            ignored: 10,
            never_seen: 10,
            per_class: 200,
            grid: WavenumberGrid::default(),
            peaks_min: 4,
            peaks_max: 8,
            shared_pool: 24,
            shared_per_class: 2,
            width_min: 6.0,
            width_max: 18.0,
            amplitude_min: 300.0,
            amplitude_max: 1000.0,
            noise_sigma: 15.0,
            jitter: 0.05,
            seed: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedClass {
    pub id: u32,
    pub name: String,
    pub role: ClassRole,
    pub profile: SyntheticClassProfile,
}

impl GeneratedClass {
    /// Deterministic per-class sample seed.
    pub fn sample_seed(&self, benchmark_seed: u64) -> u64 {
        benchmark_seed ^ (u64::from(self.id) + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
    }
}

impl BenchmarkSpec {
    pub fn class_count(&self) -> usize {
        self.known + self.ignored + self.never_seen
    }

    /// Class ids run 0.. in the order known, ignored, never-seen.
    pub fn classes(&self) -> Result<Vec<GeneratedClass>, SpectraError> {
        if self.peaks_min == 0 || self.peaks_max < self.peaks_min {
            return Err(SpectraError::Profile("need 1 <= peaks_min <= peaks_max".into()));
        }
        if self.shared_per_class > self.shared_pool || self.shared_per_class > self.peaks_min {
            return Err(SpectraError::Profile("shared_per_class exceeds pool or peaks_min".into()));
        }
        self.grid.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let margin = 2.0 * self.width_max;
        let (lo, hi) = (self.grid.start + margin, self.grid.stop - margin);
        if !(hi > lo) {
            return Err(SpectraError::Profile("grid too narrow for peak widths".into()));
        }
        let pool: Vec<f64> = (0..self.shared_pool).map(|_| rng.random_range(lo..hi)).collect();
        let roles = std::iter::repeat_n((ClassRole::Known, "K"), self.known)
            .chain(std::iter::repeat_n((ClassRole::Ignored, "I"), self.ignored))
            .chain(std::iter::repeat_n((ClassRole::NeverSeen, "N"), self.never_seen));
        let mut counters = [0usize; 3];
        let mut out = Vec::with_capacity(self.class_count());
        for (id, (role, prefix)) in roles.enumerate() {
            let n_peaks = rng.random_range(self.peaks_min..=self.peaks_max);
            let mut positions: Vec<f64> = pool.choose_multiple(&mut rng, self.shared_per_class).copied().collect();
            while positions.len() < n_peaks {
                positions.push(rng.random_range(lo..hi));
            }
            let peaks = positions
                .into_iter()
                .map(|position| Peak {
                    position,
                    width: rng.random_range(self.width_min..=self.width_max),
                    amplitude: rng.random_range(self.amplitude_min..=self.amplitude_max),
                })
                .collect();
            let profile = SyntheticClassProfile {
                grid: self.grid,
                peaks,
                baseline_offset: rng.random_range(100.0..300.0),
                baseline_slope: rng.random_range(-0.05..0.05),
                noise_sigma: self.noise_sigma,
                jitter: self.jitter,
            };
            let k = role as usize;
            let name = format!("{prefix}{:02}", counters[k]);
            counters[k] += 1;
            out.push(GeneratedClass {
                id: id as u32,
                name,
                role,
                profile,
            });
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_peak(noise: f64, jitter: f64) -> SyntheticClassProfile {
        SyntheticClassProfile {
            grid: WavenumberGrid::default(),
            peaks: vec![Peak {
                position: 1000.0,
                width: 10.0,
                amplitude: 500.0,
            }],
            baseline_offset: 20.0,
            baseline_slope: 0.01,
            noise_sigma: noise,
            jitter,
        }
    }

    fn argmax(v: &[f64]) -> usize {
        v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0
    }

    #[test]
    fn noiseless_peak_lands_on_nearest_bin() {
        let p = single_peak(0.0, 0.0);
        let s = &generate_synthetic(&p, 1, 0).unwrap()[0];
        let axis = p.grid.axis();
        let nearest = (0..axis.len()).min_by(|&a, &b| (axis[a] - 1000.0).abs().total_cmp(&(axis[b] - 1000.0).abs())).unwrap();
        assert_eq!(argmax(s.intensities()), nearest);
    }

    #[test]
    fn zero_noise_zero_jitter_repeats() {
        let s = generate_synthetic(&single_peak(0.0, 0.0), 3, 7).unwrap();
        assert_eq!(s[0], s[1]);
        assert_eq!(s[1], s[2]);
        assert_eq!(s, generate_synthetic(&single_peak(0.0, 0.0), 3, 99).unwrap());
    }

    #[test]
    fn seeded_generation_is_deterministic() {
        let p = single_peak(5.0, 0.1);
        assert_eq!(generate_synthetic(&p, 4, 11).unwrap(), generate_synthetic(&p, 4, 11).unwrap());
        assert_ne!(generate_synthetic(&p, 4, 11).unwrap(), generate_synthetic(&p, 4, 12).unwrap());
    }

    #[test]
    fn disjoint_profiles_are_farther_apart_than_samples_within_a_class() {
        let a = SyntheticClassProfile {
            peaks: vec![
                Peak { position: 600.0, width: 8.0, amplitude: 400.0 },
                Peak { position: 1400.0, width: 12.0, amplitude: 700.0 },
            ],
            ..single_peak(15.0, 0.05)
        };
        let b = SyntheticClassProfile {
            peaks: vec![
                Peak { position: 2100.0, width: 10.0, amplitude: 600.0 },
                Peak { position: 2900.0, width: 6.0, amplitude: 500.0 },
            ],
            ..single_peak(15.0, 0.05)
        };
        let xa = generate_synthetic(&a, 10, 1).unwrap();
        let xb = generate_synthetic(&b, 10, 2).unwrap();
        let msd = |p: &Spectrum, q: &Spectrum| {
            p.intensities().iter().zip(q.intensities()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / p.len() as f64
        };
        let mut within = Vec::new();
        for set in [&xa, &xb] {
            for i in 0..set.len() {
                for j in i + 1..set.len() {
                    within.push(msd(&set[i], &set[j]));
                }
            }
        }
        let across: Vec<f64> = xa.iter().flat_map(|p| xb.iter().map(move |q| msd(p, q))).collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&across) > mean(&within), "across {} within {}", mean(&across), mean(&within));
    }

    #[test]
    fn profile_validation() {
        let mut p = single_peak(0.0, 0.0);
        p.peaks[0].position = 100.0;
        assert!(generate_synthetic(&p, 1, 0).is_err());
        let mut p = single_peak(0.0, 0.0);
        p.peaks[0].width = 0.0;
        assert!(p.validate().is_err());
        assert!(generate_synthetic(&single_peak(0.0, 0.0), 0, 0).is_err());
    }

    #[test]
    fn default_benchmark_roles() {
        let classes = BenchmarkSpec::default().classes().unwrap();
        assert_eq!(classes.len(), 40);
        let count = |r| classes.iter().filter(|c| c.role == r).count();
        assert_eq!((count(ClassRole::Known), count(ClassRole::Ignored), count(ClassRole::NeverSeen)), (20, 10, 10));
        assert_eq!(classes[20].name, "I00");
        for c in &classes {
            c.profile.validate().unwrap();
        }
    }
}
