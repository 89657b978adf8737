//! Nearest-centroid attribution over fingerprints.
//!
//! A [`SourceProfile`] is the per-block normalized mean of a class's
//! fingerprints. Classification picks the profile with the highest cosine
//! similarity; ties go to the lexicographically smallest label. No rejection
//! threshold is applied: the margin is reported and left to the operator.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fingerprint::{cosine, l2_normalize, Fingerprint, BLOCK_LEN, FINGERPRINT_LEN, FINGERPRINT_STAGES};

pub const PROFILE_VERSION: u32 = 1;

/// Enrolled centroid for one source class. Field order is the on-disk order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceProfile {
    pub version: u32,
    pub label: String,
    pub count: usize,
    pub centroid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub label: String,
    pub scores: BTreeMap<String, f64>,
    /// Winning score minus the runner-up; a lone profile is compared against 0.
    pub margin: f64,
}

/// Builds a profile from one class's fingerprints.
pub fn enroll(label: &str, fps: &[Fingerprint]) -> Result<SourceProfile> {
    let first = fps.first().ok_or(Error::EmptyEnrollment)?;
    let len = first.len();
    if len != FINGERPRINT_LEN {
        return Err(Error::LengthMismatch {
            expected: FINGERPRINT_LEN,
            actual: len,
        });
    }
    let mut centroid = vec![0.0; len];
    for fp in fps {
        if fp.len() != len {
            return Err(Error::LengthMismatch {
                expected: len,
                actual: fp.len(),
            });
        }
        centroid.iter_mut().zip(fp.values()).for_each(|(c, v)| *c += v);
    }
    let n = fps.len() as f64;
    centroid.iter_mut().for_each(|c| *c /= n);
    for block in centroid.chunks_mut(BLOCK_LEN) {
        l2_normalize(block);
    }
    Ok(SourceProfile {
        version: PROFILE_VERSION,
        label: label.to_string(),
        count: fps.len(),
        centroid,
    })
}

fn check_len(fp: &Fingerprint, profile: &SourceProfile) -> Result<()> {
    if fp.len() != profile.centroid.len() {
        return Err(Error::LengthMismatch {
            expected: profile.centroid.len(),
            actual: fp.len(),
        });
    }
    Ok(())
}

/// Nearest-centroid classification under cosine similarity.
pub fn classify(fp: &Fingerprint, profiles: &[SourceProfile]) -> Result<Classification> {
    if profiles.is_empty() {
        return Err(Error::NoProfiles);
    }
    let mut scores = BTreeMap::new();
    for profile in profiles {
        check_len(fp, profile)?;
        let score = cosine(fp.values(), &profile.centroid);
        if scores.insert(profile.label.clone(), score).is_some() {
            return Err(Error::DuplicateLabel(profile.label.clone()));
        }
    }
    // BTreeMap iterates in label order, so the first maximum wins ties.
    let mut best: Option<(&String, f64)> = None;
    for (label, &score) in &scores {
        if best.map_or(true, |(_, s)| score > s) {
            best = Some((label, score));
        }
    }
    let (label, top) = best.expect("at least one profile");
    let runner_up = scores
        .iter()
        .filter(|(l, _)| *l != label)
        .map(|(_, &s)| s)
        .fold(None, |acc: Option<f64>, s| Some(acc.map_or(s, |a| a.max(s))))
        .unwrap_or(0.0);
    Ok(Classification {
        label: label.clone(),
        margin: top - runner_up,
        scores,
    })
}

/// `1 - cosine(fp, real.centroid)`, in [0, 2].
pub fn anomaly_score(fp: &Fingerprint, real: &SourceProfile) -> Result<f64> {
    check_len(fp, real)?;
    Ok((1.0 - cosine(fp.values(), &real.centroid)).clamp(0.0, 2.0))
}

/// Cosine similarity per fingerprint stage block, keyed by stage id.
pub fn stage_scores(fp: &Fingerprint, profile: &SourceProfile) -> Result<BTreeMap<u8, f64>> {
    check_len(fp, profile)?;
    Ok(FINGERPRINT_STAGES
        .iter()
        .enumerate()
        .map(|(i, stage)| {
            let range = i * BLOCK_LEN..(i + 1) * BLOCK_LEN;
            (stage.id(), cosine(fp.block(i), &profile.centroid[range]))
        })
        .collect())
}

impl SourceProfile {
    pub fn validate(&self) -> Result<()> {
        if self.centroid.len() != FINGERPRINT_LEN {
            return Err(Error::LengthMismatch {
                expected: FINGERPRINT_LEN,
                actual: self.centroid.len(),
            });
        }
        if self.count == 0 {
            return Err(Error::EmptyEnrollment);
        }
        if self.version != PROFILE_VERSION {
            return Err(Error::BadParameter(format!(
                "profile {:?} has version {}, expected {PROFILE_VERSION}",
                self.label, self.version
            )));
        }
        if self.centroid.iter().any(|v| !v.is_finite()) {
            return Err(Error::BadParameter(format!("profile {:?} has non-finite entries", self.label)));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let profile: Self = serde_json::from_str(s)?;
        profile.validate()?;
        Ok(profile)
    }

    /// Writes `<dir>/<label>.json`, creating `dir` if needed.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        validate_label(&self.label)?;
        std::fs::create_dir_all(dir)?;
        let path = dir.join(format!("{}.json", self.label));
        std::fs::write(&path, self.to_json()? + "\n")?;
        Ok(path)
    }
}

/// Labels become file names, so they are restricted to a portable character set.
pub fn validate_label(label: &str) -> Result<()> {
    let ok = !label.is_empty()
        && label != "."
        && label != ".."
        && label
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(Error::BadParameter(format!("invalid profile label {label:?}")))
    }
}

/// Loads every `*.json` profile in `dir`, sorted by file name.
pub fn load_profiles(dir: &Path) -> Result<Vec<SourceProfile>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| SourceProfile::from_json(&std::fs::read_to_string(p)?))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_fp(block_dirs: [usize; 3]) -> Fingerprint {
        let mut v = vec![0.0; FINGERPRINT_LEN];
        for (i, d) in block_dirs.iter().enumerate() {
            v[i * BLOCK_LEN + d] = 1.0;
        }
        Fingerprint::from_values(v).unwrap()
    }

    fn profile(label: &str, fp: &Fingerprint) -> SourceProfile {
        enroll(label, std::slice::from_ref(fp)).unwrap()
    }

    #[test]
    fn enroll_examples() {
        let fp = unit_fp([1, 2, 3]);
        assert_eq!(enroll("a", &[fp.clone()]).unwrap().centroid, fp.values);
        let p = enroll("a", &[fp.clone(), fp.clone()]).unwrap();
        assert_eq!(p.centroid, fp.values);
        assert_eq!(p.count, 2);

        let (a, b) = (unit_fp([0, 0, 0]), unit_fp([1, 1, 1]));
        let p = enroll("ab", &[a.clone(), b.clone()]).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        for i in 0..3 {
            assert!((p.centroid[i * BLOCK_LEN] - h).abs() < 1e-15);
            assert!((p.centroid[i * BLOCK_LEN + 1] - h).abs() < 1e-15);
        }
        assert!((cosine(a.values(), &p.centroid) - h).abs() < 1e-12);
        assert!((cosine(b.values(), &p.centroid) - h).abs() < 1e-12);
    }

    #[test]
    fn enroll_errors() {
        assert!(matches!(enroll("x", &[]), Err(Error::EmptyEnrollment)));
        let short = Fingerprint {
            version: 1,
            stage_ids: vec![3, 4, 5],
            values: vec![1.0; 10],
        };
        assert!(matches!(enroll("x", &[short.clone()]), Err(Error::LengthMismatch { .. })));
        assert!(matches!(
            enroll("x", &[unit_fp([0, 0, 0]), short]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn classify_examples() {
        let fp = unit_fp([5, 5, 5]);
        let only = profile("only", &unit_fp([9, 9, 9]));
        assert_eq!(classify(&fp, &[only]).unwrap().label, "only");

        let profiles = vec![
            profile("x", &unit_fp([1, 1, 1])),
            profile("y", &unit_fp([2, 2, 2])),
            profile("z", &unit_fp([3, 3, 3])),
        ];
        let c = classify(&unit_fp([2, 2, 2]), &profiles).unwrap();
        assert_eq!(c.label, "y");
        assert!((c.scores["y"] - 1.0).abs() < 1e-15);
        assert!((c.margin - 1.0).abs() < 1e-15);

        let real = unit_fp([2, 7, 7]);
        let scaled = Fingerprint::from_values(real.values().iter().map(|v| v * 2.5).collect()).unwrap();
        let a = classify(&real, &profiles).unwrap();
        let b = classify(&scaled, &profiles).unwrap();
        assert_eq!(a.label, b.label);
        for (k, v) in &a.scores {
            assert!((v - b.scores[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn classify_tie_breaks_lexicographically() {
        let fp = unit_fp([4, 4, 4]);
        let profiles = vec![profile("b", &fp), profile("a", &fp), profile("c", &unit_fp([0, 0, 0]))];
        let c = classify(&fp, &profiles).unwrap();
        assert_eq!(c.label, "a");
        assert_eq!(c.margin, 0.0);
    }

    #[test]
    fn classify_errors() {
        let fp = unit_fp([0, 0, 0]);
        assert!(matches!(classify(&fp, &[]), Err(Error::NoProfiles)));
        let p = profile("a", &fp);
        assert!(matches!(classify(&fp, &[p.clone(), p]), Err(Error::DuplicateLabel(_))));
        let mut bad = profile("b", &fp);
        bad.centroid.truncate(5);
        assert!(matches!(classify(&fp, &[bad.clone()]), Err(Error::LengthMismatch { .. })));
        assert!(matches!(anomaly_score(&fp, &bad), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn anomaly_examples() {
        let fp = unit_fp([3, 3, 3]);
        let real = profile("real", &fp);
        assert!(anomaly_score(&fp, &real).unwrap().abs() < 1e-15);
        assert!((anomaly_score(&unit_fp([4, 4, 4]), &real).unwrap() - 1.0).abs() < 1e-15);
        let neg = Fingerprint::from_values(fp.values().iter().map(|v| -v).collect()).unwrap();
        assert!((anomaly_score(&neg, &real).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn stage_scores_per_block() {
        let real = profile("real", &unit_fp([1, 2, 3]));
        let s = stage_scores(&unit_fp([1, 9, 3]), &real).unwrap();
        assert_eq!(s.keys().copied().collect::<Vec<_>>(), vec![3, 4, 5]);
        assert_eq!((s[&3], s[&4], s[&5]), (1.0, 0.0, 1.0));
    }

    #[test]
    fn profile_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = profile("stylegan", &unit_fp([1, 2, 3]));
        let path = p.save(dir.path()).unwrap();
        assert_eq!(path.file_name().unwrap(), "stylegan.json");
        let text = std::fs::read_to_string(&path).unwrap();
        let keys: Vec<_> = ["\"version\"", "\"label\"", "\"count\"", "\"centroid\""]
            .iter()
            .map(|k| text.find(k).unwrap())
            .collect();
        assert!(keys.windows(2).all(|w| w[0] < w[1]));
        profile("real", &unit_fp([0, 0, 0])).save(dir.path()).unwrap();
        std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let loaded = load_profiles(dir.path()).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[0].label, "real");
        assert_eq!(loaded[1], p);
    }

    #[test]
    fn profile_validation() {
        assert!(SourceProfile::from_json(r#"{"version":1,"label":"a","count":1,"centroid":[1.0]}"#).is_err());
        assert!(validate_label("../etc").is_err());
        assert!(validate_label("").is_err());
        assert!(validate_label("style-gan_2.v1").is_ok());
    }
}
