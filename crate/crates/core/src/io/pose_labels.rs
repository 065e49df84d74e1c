//! Pose label files: one camera per line, 16 floats of the row-major
//! camera-to-world matrix followed by `fx fy cx cy` normalized by image size.
//! Blank lines and lines starting with `#` are ignored.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{Pose, PoseLabel};

pub fn parse_pose_labels(text: &str) -> Result<Vec<PoseLabel>> {
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |detail: String| Error::Parse {
            line: i + 1,
            detail,
        };
        let values = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|e| parse_err(format!("{:?}: {}", tok, e)))
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.len() != 20 {
            return Err(parse_err(format!(
                "expected 20 values, found {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(parse_err("non-finite value".into()));
        }
        let mut m = [0.0; 16];
        m.copy_from_slice(&values[..16]);
        let pose = Pose::from_row_major(&m).map_err(|e| parse_err(e.to_string()))?;
        let intrinsics = [values[16], values[17], values[18], values[19]];
        if !(intrinsics[0] > 0.0 && intrinsics[1] > 0.0) {
            return Err(parse_err("focal lengths must be positive".into()));
        }
        labels.push(PoseLabel { pose, intrinsics });
    }
    Ok(labels)
}

/// Inverse of [`parse_pose_labels`]; values are written in shortest
/// round-trip form so re-parsing is exact.
pub fn format_pose_labels(labels: &[PoseLabel]) -> String {
    let mut out = String::new();
    for l in labels {
        let values: Vec<String> = l
            .pose
            .to_row_major()
            .iter()
            .chain(l.intrinsics.iter())
            .map(|v| format!("{:?}", v))
            .collect();
        out.push_str(&values.join(" "));
        out.push('\n');
    }
    out
}

pub fn read_pose_labels(path: impl AsRef<Path>) -> Result<Vec<PoseLabel>> {
    parse_pose_labels(&std::fs::read_to_string(path)?)
}

pub fn write_pose_labels(path: impl AsRef<Path>, labels: &[PoseLabel]) -> Result<()> {
    std::fs::write(path, format_pose_labels(labels))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::geometry::pose_from_angles;

    #[test]
    fn round_trip_is_exact() {
        let labels: Vec<PoseLabel> = (0..5)
            .map(|i| PoseLabel {
                pose: pose_from_angles(
                    0.3 + 0.4 * i as f64,
                    0.1 * i as f64 - 1.0,
                    2.7,
                    [0.0, 0.1, 0.0],
                )
                .unwrap(),
                intrinsics: [1.7, 1.7, 0.5, 0.5],
            })
            .collect();
        let text = format!("# header\n\n{}", format_pose_labels(&labels));
        assert_eq!(parse_pose_labels(&text).unwrap(), labels);
    }

    #[test]
    fn malformed_lines_name_the_line() {
        let good = format_pose_labels(&[PoseLabel {
            pose: Pose::identity(),
            intrinsics: [1.0, 1.0, 0.5, 0.5],
        }]);
        let cases = [
            format!("{}1 2 3\n", good),
            format!(
                "{}{}",
                good,
                good.replace("1.0 0.0 0.0 0.0", "2.0 0.0 0.0 0.0")
            ),
            format!("{}{}", good, good.replacen("0.5", "x", 1)),
            format!("{}{}", good, good.replacen("1.0 1.0 0.5", "NaN 1.0 0.5", 1)),
        ];
        for text in cases {
            match parse_pose_labels(&text) {
                Err(Error::Parse { line: 2, .. }) => {}
                other => panic!("expected a parse error on line 2, got {:?}", other),
            }
        }
    }

    proptest! {
        #[test]
        fn arbitrary_text_never_panics(text in ".{0,400}") {
            let _ = parse_pose_labels(&text);
        }
    }
}
