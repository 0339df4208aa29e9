//! Randomly sampled arm configurations with their simulated poses, plus the
//! versioned binary file format and a CSV export.
//!
//! Binary layout (little-endian):
//!
//! ```text
//! "STRK" | version u32 | variant u32 | n_joints u32 | tilt_max f64 | stretch_max f64
//!        | base_height f64 | gear_radius f64 | normalization f64 | count u64
//!        | count x (3n gear f64, n x [x y z qw qx qy qz] f64) | crc32 u32
//! ```
//!
//! The CRC covers every preceding byte.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::binio::{FormatError, Reader, Writer};
use crate::encoding::{encode, EncodedSample};
use crate::kinematics::{forward_chain, sample_random_pose, ArmSpec, GearState, Pose, DEFAULT_EDGE_PROBABILITY, GEARS_PER_JOINT};

pub const DATASET_MAGIC: &str = "STRK";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub gears: GearState,
    /// Frames after joints `1..=n`; the last one is the end-effector.
    pub poses: Vec<Pose>,
}

impl Sample {
    pub fn simulate(gears: GearState, spec: &ArmSpec) -> Self {
        let chain = forward_chain(&gears, spec).expect("sampled gears are valid for their spec");
        Self {
            gears,
            poses: chain[1..].to_vec(),
        }
    }

    pub fn end_effector(&self) -> &Pose {
        self.poses.last().expect("at least one joint")
    }

    /// Mean distance between consecutive joint frames, base included.
    pub fn mean_joint_distance(&self) -> f64 {
        let mut prev = nalgebra::Vector3::zeros();
        let mut total = 0.0;
        for pose in &self.poses {
            total += (pose.p - prev).norm();
            prev = pose.p;
        }
        total / self.poses.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: ArmSpec,
    pub samples: Vec<Sample>,
    /// Mean inter-joint distance in mm; positions are divided by it for the network.
    pub normalization: f64,
}

/// Options for [`generate_dataset_with`].
#[derive(Debug, Clone, Copy)]
pub struct GenerateOptions {
    pub p_edge: f64,
    /// Sample only the neutral configuration (used to check the normalization).
    pub neutral_only: bool,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self {
            p_edge: DEFAULT_EDGE_PROBABILITY,
            neutral_only: false,
        }
    }
}

/// RNG for sample `index` of a dataset drawn with `seed`; independent of generation order.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn generate_dataset(spec: &ArmSpec, n_samples: usize, seed: u64) -> Dataset {
    generate_dataset_with(spec, n_samples, seed, GenerateOptions::default())
}

pub fn generate_dataset_with(spec: &ArmSpec, n_samples: usize, seed: u64, opts: GenerateOptions) -> Dataset {
    assert!(n_samples >= 1, "a dataset needs at least one sample");
    let samples: Vec<Sample> = (0..n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let gears = if opts.neutral_only {
                GearState::neutral(spec)
            } else {
                sample_random_pose(spec, opts.p_edge, &mut sample_rng(seed, i))
            };
            Sample::simulate(gears, spec)
        })
        .collect();
    let normalization = samples.iter().map(Sample::mean_joint_distance).sum::<f64>() / samples.len() as f64;
    Dataset {
        spec: *spec,
        samples,
        normalization,
    }
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn encode(&self, index: usize) -> EncodedSample {
        let s = &self.samples[index];
        encode(&s.gears, &s.poses, self.normalization).expect("dataset samples are consistent")
    }

    /// Errors unless `other` was generated for the same arm geometry.
    pub fn check_spec(&self, other: &ArmSpec) -> Result<(), FormatError> {
        if &self.spec != other {
            return Err(FormatError::SpecMismatch(format!("dataset is for {:?}, expected {:?}", self.spec, other)));
        }
        Ok(())
    }

    /// `(min, max)` of every position coordinate over all joints and samples.
    pub fn position_range(&self) -> ([f64; 3], [f64; 3]) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for s in &self.samples {
            for p in &s.poses {
                for c in 0..3 {
                    lo[c] = lo[c].min(p.p[c]);
                    hi[c] = hi[c].max(p.p[c]);
                }
            }
        }
        (lo, hi)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(DATASET_MAGIC.as_bytes());
        w.u32(DATASET_VERSION);
        w.arm_spec(&self.spec);
        w.f64(self.normalization);
        w.u64(self.samples.len() as u64);
        for s in &self.samples {
            w.f64s(s.gears.as_slice());
            for p in &s.poses {
                w.f64s(&p.to_array());
            }
        }
        w.finish()
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader::open(data, DATASET_MAGIC, DATASET_VERSION)?;
        let spec = r.arm_spec()?;
        let normalization = r.f64()?;
        let count = r.u64()? as usize;
        let n = spec.n_joints;
        let record = n * GEARS_PER_JOINT + n * 7;
        let header = DATASET_MAGIC.len() + 4 + 4 + 4 + 4 * 8 + 8 + 8;
        let expected = count
            .checked_mul(record * 8)
            .and_then(|b| b.checked_add(header + 4))
            .ok_or(FormatError::Truncated)?;
        if data.len() < expected {
            return Err(FormatError::Truncated);
        }
        r.verify_crc()?;
        if !(normalization > 0.0 && normalization.is_finite()) {
            return Err(FormatError::Invalid(format!("normalization {normalization}")));
        }
        let mut samples = Vec::with_capacity(count);
        for _ in 0..count {
            let gears = GearState::new(spec.variant, r.f64s(n * GEARS_PER_JOINT)?)
                .map_err(|e| FormatError::Invalid(e.to_string()))?;
            let mut poses = Vec::with_capacity(n);
            for _ in 0..n {
                let a = r.f64s(7)?;
                let a: [f64; 7] = a.try_into().expect("7 values");
                let norm = (a[3] * a[3] + a[4] * a[4] + a[5] * a[5] + a[6] * a[6]).sqrt();
                if (norm - 1.0).abs() > 1e-6 {
                    return Err(FormatError::Invalid(format!("non-unit quaternion (norm {norm})")));
                }
                poses.push(Pose::from_array_unchecked(a));
            }
            samples.push(Sample { gears, poses });
        }
        r.finish()?;
        Ok(Self {
            spec,
            samples,
            normalization,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), FormatError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, FormatError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// One row per sample: gear values, then the end-effector pose.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let n = self.spec.n_joints;
        let mut header: Vec<String> = (0..n)
            .flat_map(|k| (0..GEARS_PER_JOINT).map(move |c| format!("g{k}_{c}")))
            .collect();
        header.extend(["ee_x_mm", "ee_y_mm", "ee_z_mm", "ee_qw", "ee_qx", "ee_qy", "ee_qz"].map(String::from));
        writeln!(out, "{}", header.join(","))?;
        for s in &self.samples {
            let row: Vec<String> = s
                .gears
                .as_slice()
                .iter()
                .chain(s.end_effector().to_array().iter())
                .map(|x| format!("{x}"))
                .collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}
