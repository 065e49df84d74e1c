use std::f64::consts::{FRAC_PI_2, TAU};
use std::path::Path;

use rand::Rng;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::geometry::{generate_rays, pose_from_angles, Intrinsics, Pose, PoseLabel};
use crate::io::tensor_file::{Archive, StoredTensor};
use crate::io::{format_pose_labels, parse_pose_labels};
use crate::renderer::Background;
use crate::rng::seeded;
use crate::scene::{Scene, SceneKind};

/// One posed image in [−1, 1]. `depth` holds the ray distance to the
/// surface (`None` for background pixels) when the view is synthetic.
#[derive(Debug, Clone)]
pub struct View {
    pub image: Tensor,
    pub pose: Pose,
    pub intrinsics: Intrinsics,
    pub depth: Option<Vec<Option<f64>>>,
}

#[derive(Debug, Clone)]
pub struct SceneViews {
    pub views: Vec<View>,
    /// Name of the synthetic recipe the views were cast from, if any.
    pub recipe: Option<String>,
}

/// Camera layout of a synthetic capture.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewSpec {
    pub count: usize,
    pub resolution: usize,
    pub fov_degrees: f64,
    pub radius: f64,
    /// Pitches are drawn uniformly within this distance of the equator.
    pub pitch_spread: f64,
    pub near: f64,
    pub far: f64,
    pub background: Background,
    pub seed: u64,
}

impl Default for ViewSpec {
    fn default() -> Self {
        ViewSpec {
            count: 20,
            resolution: 64,
            fov_degrees: 40.0,
            radius: 3.0,
            pitch_spread: 0.6,
            near: 1.5,
            far: 4.5,
            background: Background::White,
            seed: 0,
        }
    }
}

pub fn background_value(bg: Background) -> Result<f64> {
    match bg {
        Background::White => Ok(1.0),
        Background::Black => Ok(-1.0),
        Background::LastSample => Err(Error::config(
            "synthetic views need a white or black background",
        )),
    }
}

impl SceneViews {
    /// Ray-casts `scene` from `spec.count` cameras spread evenly in yaw with
    /// random pitch; each pixel takes the surface color at its center ray.
    pub fn synthetic(scene: &Scene, spec: &ViewSpec) -> Result<Self> {
        if spec.count < 2 {
            return Err(Error::config("a scene needs at least 2 views"));
        }
        let bg = background_value(spec.background)?;
        let k = Intrinsics::from_fov(spec.fov_degrees, spec.resolution, spec.resolution)?;
        let mut rng = seeded(spec.seed);
        let offset = rng.gen_range(0.0..TAU);
        let views = (0..spec.count)
            .map(|i| {
                let yaw = (offset + TAU * i as f64 / spec.count as f64) % TAU;
                let pitch = FRAC_PI_2 + rng.gen_range(-spec.pitch_spread..=spec.pitch_spread);
                let pose = pose_from_angles(pitch, yaw, spec.radius, [0.0; 3])?;
                cast_view(scene, &k, pose, spec.near, spec.far, bg)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SceneViews {
            views,
            recipe: Some(recipe_name(scene.kind).to_string()),
        })
    }

    /// Views used for fitting and the held-out view (the last one).
    pub fn split_holdout(&self) -> Result<(&[View], &View)> {
        match self.views.split_last() {
            Some((last, rest)) if !rest.is_empty() => Ok((rest, last)),
            _ => Err(Error::config("fitting needs at least 2 views")),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (_, held) = self.split_holdout()?;
        let (w, h) = (held.intrinsics.width, held.intrinsics.height);
        for (i, v) in self.views.iter().enumerate() {
            if (v.intrinsics.width, v.intrinsics.height) != (w, h) {
                return Err(Error::config(format!(
                    "view {} is {}×{}, expected {}×{}",
                    i, v.intrinsics.width, v.intrinsics.height, w, h
                )));
            }
            if v.image.shape() != [h, w, 3] {
                return Err(Error::shape(v.image.shape(), &[h, w, 3], "view image"));
            }
        }
        Ok(())
    }

    /// CRVT archive: `view{i}/image` tensors and the poses as label lines in
    /// the metadata.
    pub fn to_archive(&self) -> Archive {
        let tensors = self
            .views
            .iter()
            .enumerate()
            .map(|(i, v)| StoredTensor::from_tensor(format!("view{}/image", i), &v.image))
            .collect();
        let labels: Vec<PoseLabel> = self
            .views
            .iter()
            .map(|v| PoseLabel {
                pose: v.pose,
                intrinsics: v.intrinsics.normalized(),
            })
            .collect();
        let mut metadata = String::new();
        if let Some(r) = &self.recipe {
            metadata.push_str(&format!("# recipe {}\n", r));
        }
        metadata.push_str(&format_pose_labels(&labels));
        Archive {
            tensors,
            metadata: Some(metadata),
        }
    }

    pub fn from_archive(archive: &Archive) -> Result<Self> {
        let meta = archive
            .metadata
            .as_deref()
            .ok_or_else(|| Error::config("view archive has no pose metadata"))?;
        let recipe = meta
            .lines()
            .next()
            .and_then(|l| l.strip_prefix("# recipe "))
            .map(|r| r.trim().to_string());
        let labels = parse_pose_labels(meta)?;
        if labels.len() != archive.tensors.len() {
            return Err(Error::config(format!(
                "{} pose labels for {} images",
                labels.len(),
                archive.tensors.len()
            )));
        }
        let views = labels
            .into_iter()
            .enumerate()
            .map(|(i, label)| {
                let name = format!("view{}/image", i);
                let stored = archive
                    .get(&name)
                    .ok_or_else(|| Error::config(format!("missing tensor {}", name)))?;
                let image = stored.to_tensor();
                let [h, w, 3] = image.shape()[..] else {
                    return Err(Error::shape(image.shape(), &[0, 0, 3], "view image"));
                };
                Ok(View {
                    image,
                    pose: label.pose,
                    intrinsics: Intrinsics::from_normalized(label.intrinsics, w, h)?,
                    depth: None,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let out = SceneViews { views, recipe };
        out.validate()?;
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_archive().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_archive(&Archive::load(path)?)
    }
}

pub fn recipe_name(kind: SceneKind) -> &'static str {
    match kind {
        SceneKind::Sphere => "sphere",
        SceneKind::TwoBoxes => "two_boxes",
        SceneKind::NoiseBlob => "noise_blob",
    }
}

pub fn recipe_kind(name: &str) -> Option<SceneKind> {
    match name {
        "sphere" => Some(SceneKind::Sphere),
        "two_boxes" => Some(SceneKind::TwoBoxes),
        "noise_blob" => Some(SceneKind::NoiseBlob),
        _ => None,
    }
}

/// Surface color and ray distance per pixel, background elsewhere.
pub fn cast_view(
    scene: &Scene,
    k: &Intrinsics,
    pose: Pose,
    near: f64,
    far: f64,
    background: f64,
) -> Result<View> {
    let rays = generate_rays(k, &pose, near, far)?;
    let mut image = Vec::with_capacity(rays.len() * 3);
    let mut depth = Vec::with_capacity(rays.len());
    for (o, d) in rays.origins.iter().zip(&rays.directions) {
        let hit = scene.ray_depth(*o, *d, near, far);
        match hit {
            Some(t) => {
                image.extend(scene.color([o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]]))
            }
            None => image.extend([background; 3]),
        }
        depth.push(hit);
    }
    Ok(View {
        image: Tensor::from_parts(vec![k.height, k.width, 3], image),
        pose,
        intrinsics: *k,
        depth: Some(depth),
    })
}
