//! Desk-scale generator configs covering every ablation axis: embedder
//! combinations, plane count, decoder depth, activation, geometry head,
//! upsampler, and pose prior. Widths are shrunk (hidden 32, grids 16³/16²
//! with 8 channels) so each config renders in seconds; the axis being
//! ablated keeps its full set of values.

use std::f64::consts::FRAC_PI_2;

use crate::decoder::{Activation, DecoderConfig, GeometryHead, Modulation};
use crate::embedder::{AxisPair, EmbedderSpec};
use crate::error::Result;
use crate::geometry::{sample_pose, Intrinsics, PoseLabel, PosePrior};
use crate::rng::{split, SeededRng};
use crate::upsampler::{StageConfig, UpsamplerConfig};

use super::config::{GeneratorConfig, PosePriorConfig, RenderConfig};
use super::mapper::MapperConfig;

const HIDDEN: usize = 32;
const GRID_RES: usize = 16;
const GRID_CHANNELS: usize = 8;
const FEATURE_CHANNELS: usize = 8;
const POSITIONAL_FREQS: usize = 4;
const LABEL_COUNT: usize = 16;

#[derive(Debug, Clone)]
pub struct AblationRow {
    /// Ablation axis, e.g. `decoder-depth`.
    pub group: &'static str,
    /// Row within the axis, e.g. `volume/depth=8`.
    pub label: String,
    pub config: GeneratorConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Point {
    Mlp,
    Volume,
    Triplane,
}

impl Point {
    fn name(self) -> &'static str {
        match self {
            Point::Mlp => "mlp",
            Point::Volume => "volume",
            Point::Triplane => "triplane",
        }
    }

    fn spec(self) -> EmbedderSpec {
        match self {
            Point::Mlp => EmbedderSpec::Positional {
                n_freq: POSITIONAL_FREQS,
                include_input: true,
            },
            Point::Volume => EmbedderSpec::voxel(GRID_RES, GRID_CHANNELS),
            Point::Triplane => EmbedderSpec::triplane(GRID_RES, GRID_CHANNELS),
        }
    }

    /// Default decoder depth for this embedder.
    fn depth(self) -> usize {
        match self {
            Point::Mlp | Point::Volume => 16,
            Point::Triplane => 2,
        }
    }
}

struct Row {
    embedder: EmbedderSpec,
    depth: usize,
    activation: Activation,
    geometry: GeometryHead,
    upsample: bool,
    prior: PosePriorConfig,
}

impl Row {
    fn new(point: Point) -> Self {
        Row {
            embedder: point.spec(),
            depth: point.depth(),
            activation: Activation::Relu,
            geometry: GeometryHead::Density,
            upsample: true,
            prior: PosePriorConfig::default(),
        }
    }

    fn build(self, output_resolution: usize) -> GeneratorConfig {
        let upsampler = self.upsample.then(|| UpsamplerConfig {
            in_channels: 0,
            stages: vec![
                StageConfig {
                    kernel: 3,
                    out_channels: FEATURE_CHANNELS,
                };
                2
            ],
            modulation: Modulation::Film,
            latent_dim: 0,
        });
        let scale = upsampler.as_ref().map_or(1, |u| u.scale());
        let mut decoder = DecoderConfig::new(
            0,
            self.depth,
            HIDDEN,
            if self.upsample { FEATURE_CHANNELS } else { 3 },
        );
        decoder.activation = self.activation;
        decoder.geometry_head = self.geometry;
        decoder.modulation = Modulation::Film;
        GeneratorConfig {
            pose_prior: self.prior,
            embedder: self.embedder,
            decoder,
            renderer: RenderConfig {
                resolution: (output_resolution / scale).max(1),
                n_coarse: 12,
                n_fine: 12,
                ..Default::default()
            },
            upsampler,
            mapper: MapperConfig::default(),
            fit: Default::default(),
            mesh: Default::default(),
        }
    }
}

/// Every ablation row at `output_resolution` (final image side). `seed`
/// freezes the random pose prior and the ground-truth pose table.
pub fn ablation_rows(output_resolution: usize, seed: u64) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    let mut push = |group: &'static str, label: String, row: Row| {
        rows.push(AblationRow {
            group,
            label,
            config: row.build(output_resolution),
        })
    };
    let points = [Point::Mlp, Point::Volume, Point::Triplane];

    // Single embedders and every multi-embedder combination.
    for mask in 1..8usize {
        let members: Vec<Point> = (0..3)
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| points[i])
            .collect();
        let label = members
            .iter()
            .map(|p| p.name())
            .collect::<Vec<_>>()
            .join("+");
        let mut row = Row::new(members[0]);
        row.depth = members.iter().map(|p| p.depth()).max().unwrap_or(2);
        if members.len() > 1 {
            row.embedder = EmbedderSpec::Composite {
                children: members.iter().map(|p| p.spec()).collect(),
            };
        }
        push("embedder-combination", label, row);
    }

    let pairs = [
        ("xy+xz", vec![AxisPair::Xy, AxisPair::Xz]),
        ("xy+zy", vec![AxisPair::Xy, AxisPair::Zy]),
        ("xz+zy", vec![AxisPair::Xz, AxisPair::Zy]),
        ("xy+xz+zy", vec![AxisPair::Xy, AxisPair::Xz, AxisPair::Zy]),
    ];
    for (label, axes) in pairs {
        let mut row = Row::new(Point::Triplane);
        row.embedder = EmbedderSpec::planes(&axes, GRID_RES, GRID_CHANNELS);
        push("plane-count", label.to_string(), row);
    }

    for (point, depths) in [
        (Point::Mlp, [4, 8, 16]),
        (Point::Volume, [4, 8, 16]),
        (Point::Triplane, [2, 4, 8]),
    ] {
        for depth in depths {
            let mut row = Row::new(point);
            row.depth = depth;
            push(
                "decoder-depth",
                format!("{}/depth={}", point.name(), depth),
                row,
            );
        }
    }

    for upsample in [true, false] {
        for (name, activation) in [("siren", Activation::siren()), ("relu", Activation::Relu)] {
            let mut row = Row::new(Point::Mlp);
            row.depth = 8;
            row.activation = activation;
            row.upsample = upsample;
            let tag = if upsample { "upsampled" } else { "direct" };
            push("activation", format!("{}/{}", tag, name), row);
        }
    }

    for point in points {
        for (name, geometry) in [
            ("sdf", GeometryHead::Sdf),
            ("density", GeometryHead::Density),
        ] {
            let mut row = Row::new(point);
            row.geometry = geometry;
            push("geometry", format!("{}/{}", point.name(), name), row);
        }
    }

    for upsample in [true, false] {
        let mut row = Row::new(Point::Triplane);
        row.upsample = upsample;
        push(
            "upsampler",
            if upsample { "on" } else { "off" }.to_string(),
            row,
        );
    }

    let radius = PosePriorConfig::default().radius;
    let mut rng = split(seed, 0);
    let random = PosePriorConfig::from_prior(&PosePrior::random(radius, &mut rng));
    let truth = PosePriorConfig::from_prior(&ground_truth_prior(radius, &mut rng)?);
    for point in points {
        for (name, prior) in [
            ("random", &random),
            ("accurate", &PosePriorConfig::default()),
            ("ground-truth", &truth),
        ] {
            let mut row = Row::new(point);
            row.prior = prior.clone();
            push("pose-prior", format!("{}/{}", point.name(), name), row);
        }
    }
    Ok(rows)
}

/// Deterministic table of poses drawn once from the face prior, standing in
/// for per-image ground-truth labels.
fn ground_truth_prior(radius: f64, rng: &mut SeededRng) -> Result<PosePrior> {
    let source = PosePrior::gaussian(FRAC_PI_2, 0.155, FRAC_PI_2, 0.3, radius);
    let k = Intrinsics::from_fov(RenderConfig::default().fov_degrees, 1, 1)?.normalized();
    let labels = (0..LABEL_COUNT)
        .map(|_| {
            Ok(PoseLabel {
                pose: sample_pose(&source, rng)?,
                intrinsics: k,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PosePrior {
        distribution: crate::geometry::PoseDistribution::Deterministic { labels },
        radius,
        look_at: [0.0; 3],
    })
}
