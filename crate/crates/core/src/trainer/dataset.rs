//! Multi-domain phantom datasets, in memory and on disk.
//!
//! A directory holds `dataset.cfg` (key = value lines), `manifest.txt` (one
//! `path role domain_id frame` record per tensor) and one GCMR file per
//! tensor. Complex data is stored at single precision, so generated data is
//! rounded to `f32` in memory as well and a save/load round trip is exact.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array3, Array4, Axis};

use crate::error::{invalid, Error, Result};
use crate::gcmr::{read_tensor, write_tensor, Tensor};
use crate::mri::KSpaceVolume;
use crate::numerics::{fft2c_inplace, ComplexImage, Rng, C64};
use crate::phantom::{adjacent_indices, make_dynamic_phantom, simulate_coils, TRAINING_DOMAINS, UNSEEN_DOMAIN};
use crate::sampling::{SamplingMask, Trajectory};

pub const CONFIG_FILE: &str = "dataset.cfg";
pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    K0,
    KG,
    Mask,
    SensTruth,
    GtImage,
}

impl Role {
    pub const ALL: [Role; 5] = [Role::K0, Role::KG, Role::Mask, Role::SensTruth, Role::GtImage];
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::K0 => "k0",
            Role::KG => "kG",
            Role::Mask => "mask",
            Role::SensTruth => "sens-truth",
            Role::GtImage => "gt-image",
        })
    }
}

impl FromStr for Role {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Role::ALL
            .into_iter()
            .find(|r| r.to_string() == s)
            .ok_or_else(|| Error::Format(format!("unknown manifest role {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub h: usize,
    pub w: usize,
    pub frames: usize,
    pub coils: usize,
    /// Training domains `0..domains`; the held-out domain is added when
    /// `include_unseen` is set.
    pub domains: usize,
    pub include_unseen: bool,
    /// Rounded up to whole sequences of `frames` frames.
    pub samples_per_domain: usize,
    pub seed: u64,
    /// Acceleration of the stored reference masks (uniform k-t).
    pub mask_accel: usize,
    pub acs_lines: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            h: 64,
            w: 64,
            frames: 8,
            coils: 4,
            domains: TRAINING_DOMAINS,
            include_unseen: true,
            samples_per_domain: 40,
            seed: 0,
            mask_accel: 4,
            acs_lines: 16,
        }
    }
}

impl DataConfig {
    pub fn domain_ids(&self) -> Vec<usize> {
        let mut d: Vec<usize> = (0..self.domains).collect();
        if self.include_unseen {
            d.push(UNSEEN_DOMAIN);
        }
        d
    }

    pub fn sequences_per_domain(&self) -> usize {
        self.samples_per_domain.div_ceil(self.frames)
    }

    fn to_text(&self) -> String {
        format!(
            "h = {}\nw = {}\nframes = {}\ncoils = {}\ndomains = {}\ninclude_unseen = {}\nsamples_per_domain = {}\nseed = {}\nmask_accel = {}\nacs_lines = {}\n",
            self.h,
            self.w,
            self.frames,
            self.coils,
            self.domains,
            self.include_unseen,
            self.samples_per_domain,
            self.seed,
            self.mask_accel,
            self.acs_lines
        )
    }

    fn from_text(text: &str) -> Result<Self> {
        let kv = parse_key_values(text)?;
        let get = |k: &str| -> Result<&str> {
            kv.get(k)
                .map(String::as_str)
                .ok_or_else(|| Error::Format(format!("{CONFIG_FILE} lacks {k}")))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::Format(format!("{CONFIG_FILE}: {k} is not an integer")))
        };
        Ok(Self {
            h: num("h")?,
            w: num("w")?,
            frames: num("frames")?,
            coils: num("coils")?,
            domains: num("domains")?,
            include_unseen: get("include_unseen")? == "true",
            samples_per_domain: num("samples_per_domain")?,
            seed: get("seed")?
                .parse()
                .map_err(|_| Error::Format(format!("{CONFIG_FILE}: seed is not an integer")))?,
            mask_accel: num("mask_accel")?,
            acs_lines: num("acs_lines")?,
        })
    }
}

/// Parses `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("line {}: expected key = value", i + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

/// One phantom sequence with its coil data.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub domain_id: usize,
    pub index: usize,
    /// Fully sampled multi-coil k-space per frame (`coils × h × w`).
    pub kspace: Vec<Array3<C64>>,
    pub gt: Vec<ComplexImage>,
    pub sens_truth: Array3<C64>,
    /// Reference uniform k-t mask over the sequence frames.
    pub mask: SamplingMask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleRef {
    pub seq: usize,
    pub frame: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: DataConfig,
    pub sequences: Vec<Sequence>,
}

fn round_c(z: C64) -> C64 {
    C64::new(z.re as f32 as f64, z.im as f32 as f64)
}

impl Dataset {
    /// Pure function of the config; sequences are generated in parallel from
    /// per-sequence forked generators.
    pub fn generate(config: &DataConfig) -> Result<Self> {
        if config.frames < 5 || config.coils < 2 {
            return Err(invalid("need at least 5 frames and 2 coils"));
        }
        if config.domains > TRAINING_DOMAINS {
            return Err(invalid(format!("at most {TRAINING_DOMAINS} training domains")));
        }
        let jobs: Vec<(usize, usize)> = config
            .domain_ids()
            .into_iter()
            .flat_map(|d| (0..config.sequences_per_domain()).map(move |i| (d, i)))
            .collect();
        let root = Rng::new(config.seed);
        use rayon::prelude::*;
        let sequences = jobs
            .par_iter()
            .map(|&(d, i)| {
                let mut rng = root.fork((d as u64) << 32 | i as u64);
                let seq = make_dynamic_phantom(config.h, config.w, config.frames, d, &mut rng)?;
                let (coil_frames, profiles) = simulate_coils(&seq, config.coils, &mut rng)?;
                let kspace = coil_frames
                    .into_iter()
                    .map(|mut c| {
                        for coil in c.outer_iter_mut() {
                            fft2c_inplace(coil, false);
                        }
                        c.mapv(round_c)
                    })
                    .collect();
                let mask = SamplingMask::generate(
                    Trajectory::Uniform,
                    config.h,
                    config.w,
                    config.frames,
                    config.mask_accel,
                    config.acs_lines,
                    false,
                    &mut rng,
                )?;
                Ok(Sequence {
                    domain_id: d,
                    index: i,
                    kspace,
                    gt: seq.frames.into_iter().map(|f| f.mapv(round_c)).collect(),
                    sens_truth: profiles.maps.mapv(round_c),
                    mask,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { config: config.clone(), sequences })
    }

    pub fn domains(&self) -> Vec<usize> {
        let mut d: Vec<usize> = self.sequences.iter().map(|s| s.domain_id).collect();
        d.sort_unstable();
        d.dedup();
        d
    }

    /// Every frame of every sequence of `domain`, in sequence order.
    pub fn samples(&self, domain: usize) -> Vec<SampleRef> {
        self.sequences
            .iter()
            .enumerate()
            .filter(|(_, s)| s.domain_id == domain)
            .flat_map(|(i, s)| (0..s.kspace.len()).map(move |f| SampleRef { seq: i, frame: f }))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.sequences.iter().map(|s| s.kspace.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn domain_of(&self, s: SampleRef) -> usize {
        self.sequences[s.seq].domain_id
    }

    /// Adjacent fully sampled stack around the sample (clamped at the ends).
    pub fn kg(&self, s: SampleRef, adjacent: usize) -> Result<KSpaceVolume> {
        let seq = &self.sequences[s.seq];
        let idx = adjacent_indices(s.frame, adjacent, seq.kspace.len());
        let (c, h, w) = seq.kspace[0].dim();
        let mut data = Array4::<C64>::zeros((adjacent, c, h, w));
        for (a, &f) in idx.iter().enumerate() {
            data.index_axis_mut(Axis(0), a).assign(&seq.kspace[f]);
        }
        KSpaceVolume::new(data)
    }

    /// Writes the directory layout described in the module docs.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(CONFIG_FILE), self.config.to_text())?;
        let mut manifest = String::new();
        for seq in &self.sequences {
            let sub = format!("d{}", seq.domain_id);
            std::fs::create_dir_all(dir.join(&sub))?;
            for (f, k) in seq.kspace.iter().enumerate() {
                let frame = seq.index * self.config.frames + f;
                let m = seq.mask.frame(f);
                let mut k0 = k.clone();
                for mut coil in k0.outer_iter_mut() {
                    coil.zip_mut_with(&m, |z, &b| {
                        if b == 0 {
                            *z = C64::new(0.0, 0.0);
                        }
                    });
                }
                for role in Role::ALL {
                    let t = match role {
                        Role::K0 => Tensor::from_complex(&k0.clone().into_dyn()),
                        Role::KG => Tensor::from_complex(&k.clone().into_dyn()),
                        Role::Mask => Tensor::F32(m.mapv(|b| b as f32).into_dyn()),
                        Role::SensTruth => Tensor::from_complex(&seq.sens_truth.clone().into_dyn()),
                        Role::GtImage => Tensor::from_complex(&seq.gt[f].clone().into_dyn()),
                    };
                    let rel = format!("{sub}/f{frame:04}_{role}.gcmr");
                    write_tensor(&dir.join(&rel), &t)?;
                    manifest.push_str(&format!("{rel} {role} {} {frame}\n", seq.domain_id));
                }
            }
        }
        std::fs::write(dir.join(MANIFEST_FILE), manifest)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let config = DataConfig::from_text(&std::fs::read_to_string(dir.join(CONFIG_FILE))?)?;
        let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))?;
        // (domain, frame) -> role -> path
        let mut entries: BTreeMap<(usize, usize), BTreeMap<Role, String>> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.is_empty() {
                continue;
            }
            if parts.len() != 4 {
                return Err(Error::Format(format!("manifest line {}: expected 4 fields", i + 1)));
            }
            let bad = |what: &str| Error::Format(format!("manifest line {}: bad {what}", i + 1));
            let role: Role = parts[1].parse()?;
            let domain: usize = parts[2].parse().map_err(|_| bad("domain"))?;
            let frame: usize = parts[3].parse().map_err(|_| bad("frame"))?;
            entries.entry((domain, frame)).or_default().insert(role, parts[0].to_string());
        }
        let frames = config.frames;
        let mut sequences: Vec<Sequence> = Vec::new();
        for ((domain, frame), roles) in &entries {
            let (index, f) = (frame / frames, frame % frames);
            let path = |r: Role| -> Result<std::path::PathBuf> {
                roles
                    .get(&r)
                    .map(|p| dir.join(p))
                    .ok_or_else(|| Error::Format(format!("domain {domain} frame {frame} lacks {r}")))
            };
            let kg = read_tensor(&path(Role::KG)?)?.to_complex()?;
            let kg = kg.into_dimensionality::<ndarray::Ix3>().map_err(|e| Error::Format(e.to_string()))?;
            let gt = read_tensor(&path(Role::GtImage)?)?
                .to_complex()?
                .into_dimensionality::<ndarray::Ix2>()
                .map_err(|e| Error::Format(e.to_string()))?;
            let mask = read_tensor(&path(Role::Mask)?)?
                .to_real()?
                .into_dimensionality::<ndarray::Ix2>()
                .map_err(|e| Error::Format(e.to_string()))?
                .mapv(|v| (v != 0.0) as u8);
            if f == 0 {
                let sens = read_tensor(&path(Role::SensTruth)?)?
                    .to_complex()?
                    .into_dimensionality::<ndarray::Ix3>()
                    .map_err(|e| Error::Format(e.to_string()))?;
                sequences.push(Sequence {
                    domain_id: *domain,
                    index,
                    kspace: Vec::new(),
                    gt: Vec::new(),
                    sens_truth: sens,
                    mask: SamplingMask::from_array(
                        ndarray::Array3::zeros((frames, config.h, config.w)),
                        config.acs_lines,
                        config.mask_accel,
                        Trajectory::Uniform,
                    )?,
                });
            }
            let seq = sequences
                .last_mut()
                .filter(|s| s.domain_id == *domain && s.index == index && s.kspace.len() == f)
                .ok_or_else(|| Error::Format(format!("domain {domain}: frame {frame} out of order or missing")))?;
            seq.kspace.push(kg);
            seq.gt.push(gt);
            let mut arr = seq.mask.array().clone();
            arr.index_axis_mut(Axis(0), f).assign(&mask);
            seq.mask = SamplingMask::from_array(arr, config.acs_lines, config.mask_accel, Trajectory::Uniform)?;
        }
        if sequences.iter().any(|s| s.kspace.len() != frames) {
            return Err(Error::Format("incomplete sequence in manifest".into()));
        }
        if sequences.is_empty() {
            return Err(Error::Empty("dataset manifest has no records"));
        }
        Ok(Self { config, sequences })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> DataConfig {
        DataConfig {
            h: 32,
            w: 32,
            frames: 5,
            coils: 2,
            domains: 2,
            include_unseen: true,
            samples_per_domain: 6,
            seed: 3,
            mask_accel: 4,
            acs_lines: 8,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = Dataset::generate(&tiny()).unwrap();
        let b = Dataset::generate(&tiny()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.domains(), vec![0, 1, UNSEEN_DOMAIN]);
        // 6 samples round up to two sequences of 5 frames
        assert_eq!(a.samples(0).len(), 10);
        assert_eq!(a.len(), 30);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let a = Dataset::generate(&tiny()).unwrap();
        a.save(dir.path()).unwrap();
        let b = Dataset::load(dir.path()).unwrap();
        assert_eq!(a, b);
        let manifest = std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(manifest.lines().count(), a.len() * Role::ALL.len());
    }

    #[test]
    fn stored_k0_is_masked_kg() {
        let dir = tempfile::tempdir().unwrap();
        let a = Dataset::generate(&tiny()).unwrap();
        a.save(dir.path()).unwrap();
        let k0 = read_tensor(&dir.path().join("d1/f0003_k0.gcmr")).unwrap().to_complex().unwrap();
        let kg = read_tensor(&dir.path().join("d1/f0003_kG.gcmr")).unwrap().to_complex().unwrap();
        let m = read_tensor(&dir.path().join("d1/f0003_mask.gcmr")).unwrap().to_real().unwrap();
        for ((idx, a), b) in k0.indexed_iter().zip(kg.iter()) {
            let sampled = m[[idx[1], idx[2]]] == 1.0;
            assert_eq!(*a, if sampled { *b } else { C64::new(0.0, 0.0) });
        }
    }

    #[test]
    fn adjacent_stack_clamps() {
        let a = Dataset::generate(&tiny()).unwrap();
        let kg = a.kg(SampleRef { seq: 0, frame: 0 }, 5).unwrap();
        assert_eq!(kg.dim(), (5, 2, 32, 32));
        assert_eq!(kg.data.index_axis(Axis(0), 0), kg.data.index_axis(Axis(0), 2));
    }

    #[test]
    fn config_text_round_trip() {
        let c = tiny();
        assert_eq!(DataConfig::from_text(&c.to_text()).unwrap(), c);
        assert!(DataConfig::from_text("h = 3").is_err());
        assert!(parse_key_values("novalue").is_err());
    }

    #[test]
    fn missing_directory() {
        assert!(Dataset::load(Path::new("/nonexistent/genre")).is_err());
    }
}
