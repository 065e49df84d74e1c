//! Evaluation manifests: TOML files naming rendered samples and the
//! externally produced features, embeddings, pose estimates and depth
//! predictions to score them with. Relative paths resolve against the
//! manifest's directory.
//!
//! ```toml
//! [camera]
//! fov_degrees = 40.0
//! radius = 3.0
//!
//! [features]
//! reference = "real_features.crvt"
//! generated = "fake_features.crvt"
//!
//! [[samples]]
//! id = "s0"
//! image = "s0.png"
//! depth = "s0_depth.crvt"
//! pose = [1.5708, 0.0]          # pitch, yaw of the rendering camera
//! estimated_pose = [1.56, 0.02]
//! predicted_depth = "s0_pred.crvt"
//! embedding = "s0_id.crvt"
//! neighbor = "s1"               # adjacent view of the same sample
//! ```

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::geometry::{pose_from_angles, Intrinsics};
use crate::io::read_png;
use crate::io::tensor_file::{read_tensor, Archive};
use crate::metrics::{
    frechet_distance, gaussian_stats, identity_consistency, mean_pose_error, reprojection_error,
    DepthMap, FeatureStats, MetricReport, WarpView,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    Fid,
    Re,
    De,
    Pe,
    Id,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::Fid, Metric::Re, Metric::De, Metric::Pe, Metric::Id];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Fid => "fid",
            Metric::Re => "re",
            Metric::De => "de",
            Metric::Pe => "pe",
            Metric::Id => "id",
        }
    }

    /// Parses a comma-separated list such as `fid,re`, keeping the order
    /// given and dropping repeats.
    pub fn parse_list(s: &str) -> Result<Vec<Metric>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let m: Metric = part.parse()?;
            if !out.contains(&m) {
                out.push(m);
            }
        }
        if out.is_empty() {
            return Err(Error::config("no metrics requested"));
        }
        Ok(out)
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown metric {:?} (expected fid, re, de, pe or id)",
                    s
                ))
            })
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSpec {
    pub fov_degrees: f64,
    pub radius: f64,
    #[serde(default)]
    pub look_at: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureFiles {
    pub reference: PathBuf,
    pub generated: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleEntry {
    pub id: String,
    #[serde(default)]
    pub image: Option<PathBuf>,
    #[serde(default)]
    pub depth: Option<PathBuf>,
    #[serde(default)]
    pub pose: Option<[f64; 2]>,
    #[serde(default)]
    pub estimated_pose: Option<[f64; 2]>,
    #[serde(default)]
    pub predicted_depth: Option<PathBuf>,
    #[serde(default)]
    pub embedding: Option<PathBuf>,
    #[serde(default)]
    pub neighbor: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalManifest {
    #[serde(default)]
    pub camera: Option<CameraSpec>,
    #[serde(default)]
    pub features: Option<FeatureFiles>,
    #[serde(default)]
    pub samples: Vec<SampleEntry>,
}

impl EvalManifest {
    pub fn parse(text: &str) -> Result<Self> {
        let m: EvalManifest = toml::from_str(text)
            .map_err(|e| Error::config(format!("eval manifest: {}", e.message())))?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(format!("eval manifest: {}", e)))
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for s in &self.samples {
            if !ids.insert(s.id.as_str()) {
                return Err(Error::config(format!("sample id {:?} repeated", s.id)));
            }
            let angles = s.pose.iter().chain(&s.estimated_pose).flatten();
            if angles.clone().any(|v| !v.is_finite()) {
                return Err(Error::config(format!(
                    "sample {:?} has a non-finite angle",
                    s.id
                )));
            }
        }
        for s in &self.samples {
            if let Some(n) = &s.neighbor {
                if !ids.contains(n.as_str()) || n == &s.id {
                    return Err(Error::config(format!(
                        "sample {:?} names unknown neighbor {:?}",
                        s.id, n
                    )));
                }
            }
        }
        if let Some(c) = &self.camera {
            if !(c.fov_degrees > 0.0 && c.fov_degrees < 180.0 && c.radius > 0.0)
                || c.look_at.iter().any(|v| !v.is_finite())
            {
                return Err(Error::config(
                    "camera needs 0 < fov < 180 and a positive radius",
                ));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

/// Feature statistics from a CRVT file holding either `mean` and `cov`
/// tensors or a single N×D feature matrix.
pub fn load_feature_stats(path: impl AsRef<Path>) -> Result<FeatureStats> {
    let archive = Archive::load(path)?;
    if let (Some(mean), Some(cov)) = (archive.get("mean"), archive.get("cov")) {
        let d = mean.data.len();
        if cov.shape != [d, d] {
            return Err(Error::shape(&cov.shape, &[d, d], "feature covariance"));
        }
        let count = archive
            .get("count")
            .and_then(|c| c.data.first())
            .map_or(0, |c| *c as usize);
        return FeatureStats::new(
            DVector::from_vec(mean.data.clone()),
            DMatrix::from_row_slice(d, d, &cov.data),
            count,
        );
    }
    match &archive.tensors[..] {
        [t] if t.shape.len() == 2 => {
            gaussian_stats(&DMatrix::from_row_slice(t.shape[0], t.shape[1], &t.data))
        }
        _ => Err(Error::config(
            "feature file needs mean and cov tensors or one N×D matrix",
        )),
    }
}

/// Scores `metrics` over the files a manifest names; each metric uses the
/// samples that carry the inputs it needs and errors when none do.
pub fn evaluate_manifest(
    manifest: &EvalManifest,
    base: &Path,
    metrics: &[Metric],
) -> Result<MetricReport> {
    manifest.validate()?;
    let resolve = |p: &Path| {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    };
    let by_id: HashMap<&str, &SampleEntry> = manifest
        .samples
        .iter()
        .map(|s| (s.id.as_str(), s))
        .collect();
    let neighbors = || {
        manifest
            .samples
            .iter()
            .filter_map(|s| s.neighbor.as_deref().map(|n| (s, by_id[n])))
    };
    let mut report = MetricReport::default();
    for &metric in metrics {
        let missing =
            |what: &str| Error::config(format!("{}: no sample provides {}", metric, what));
        match metric {
            Metric::Fid => {
                let f = manifest
                    .features
                    .as_ref()
                    .ok_or_else(|| missing("[features] files"))?;
                let real = load_feature_stats(resolve(&f.reference))?;
                let fake = load_feature_stats(resolve(&f.generated))?;
                report.push(metric, frechet_distance(&real, &fake)?, fake.count);
            }
            Metric::Re => {
                let camera = manifest
                    .camera
                    .as_ref()
                    .ok_or_else(|| missing("[camera]"))?;
                let mut errors = Vec::new();
                for (a, b) in neighbors() {
                    let (Some(va), Some(vb)) = (
                        load_view(a, camera, &resolve)?,
                        load_view(b, camera, &resolve)?,
                    ) else {
                        continue;
                    };
                    errors.push(reprojection_error(&va.as_warp(), &vb.as_warp())?);
                }
                if errors.is_empty() {
                    return Err(missing("neighbor pairs with image, depth and pose"));
                }
                report.push(
                    metric,
                    errors.iter().sum::<f64>() / errors.len() as f64,
                    errors.len(),
                );
            }
            Metric::De => {
                let mut errors = Vec::new();
                for s in &manifest.samples {
                    let (Some(d), Some(p)) = (&s.depth, &s.predicted_depth) else {
                        continue;
                    };
                    let rendered = DepthMap::from_tensor(&read_tensor(resolve(d))?)?;
                    let predicted = DepthMap::from_tensor(&read_tensor(resolve(p))?)?;
                    errors.push(super::depth_error(&rendered, &predicted)?);
                }
                if errors.is_empty() {
                    return Err(missing("depth and predicted_depth"));
                }
                report.push(
                    metric,
                    errors.iter().sum::<f64>() / errors.len() as f64,
                    errors.len(),
                );
            }
            Metric::Pe => {
                let pairs: Vec<_> = manifest
                    .samples
                    .iter()
                    .filter_map(|s| {
                        Some((
                            (s.pose?[0], s.pose?[1]),
                            (s.estimated_pose?[0], s.estimated_pose?[1]),
                        ))
                    })
                    .collect();
                if pairs.is_empty() {
                    return Err(missing("pose and estimated_pose"));
                }
                report.push(metric, mean_pose_error(&pairs)?, pairs.len());
            }
            Metric::Id => {
                let mut pairs = Vec::new();
                for (a, b) in neighbors() {
                    let (Some(ea), Some(eb)) = (&a.embedding, &b.embedding) else {
                        continue;
                    };
                    pairs.push((
                        read_tensor(resolve(ea))?.to_vec(),
                        read_tensor(resolve(eb))?.to_vec(),
                    ));
                }
                if pairs.is_empty() {
                    return Err(missing("neighbor pairs with embeddings"));
                }
                report.push(metric, identity_consistency(&pairs)?, pairs.len());
            }
        }
    }
    Ok(report)
}

struct LoadedView {
    image: Tensor,
    depth: DepthMap,
    pose: crate::geometry::Pose,
    intrinsics: Intrinsics,
}

impl LoadedView {
    fn as_warp(&self) -> WarpView<'_> {
        WarpView {
            image: &self.image,
            depth: &self.depth,
            pose: &self.pose,
            intrinsics: &self.intrinsics,
        }
    }
}

fn load_view(
    s: &SampleEntry,
    camera: &CameraSpec,
    resolve: &dyn Fn(&Path) -> PathBuf,
) -> Result<Option<LoadedView>> {
    let (Some(img), Some(depth), Some([pitch, yaw])) = (&s.image, &s.depth, s.pose) else {
        return Ok(None);
    };
    let image = read_png(resolve(img))?;
    let (h, w) = (image.shape()[0], image.shape()[1]);
    let mut depth = DepthMap::from_tensor(&read_tensor(resolve(depth))?)?;
    if (depth.width, depth.height) != (w, h) {
        depth = depth.resized(w, h);
    }
    Ok(Some(LoadedView {
        image,
        depth,
        pose: pose_from_angles(pitch, yaw, camera.radius, camera.look_at)?,
        intrinsics: Intrinsics::from_fov(camera.fov_degrees, w, h)?,
    }))
}
