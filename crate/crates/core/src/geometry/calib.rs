//! Calibration text format: one `K:` line with 12 floats, then one
//! `T <label>:` line per chain stage with 16 row-major floats. Floats are
//! written with 17 significant digits so they round-trip exactly.

use std::fmt::Write as _;
use std::path::Path;

use super::types::{ChainStage, IntrinsicMatrix, PoseChain, RigidTransform};
use super::{GeometryError, Result};

/// Decimal float with 17 significant digits; parses back to the same bits.
pub fn format_float(v: f64) -> String {
    format!("{:.16e}", v)
}

/// Serialize intrinsics and the pose chain to the calibration text format.
pub fn calibration_to_string(k: &IntrinsicMatrix, chain: &PoseChain) -> String {
    let mut out = String::new();
    out.push_str("K:");
    for v in k.entries() {
        let _ = write!(out, " {}", format_float(*v));
    }
    out.push('\n');
    for stage in &chain.stages {
        let _ = write!(out, "T {}:", stage.label);
        for v in stage.transform.entries() {
            let _ = write!(out, " {}", format_float(*v));
        }
        out.push('\n');
    }
    out
}

pub fn write_calibration(path: &Path, k: &IntrinsicMatrix, chain: &PoseChain) -> Result<()> {
    std::fs::write(path, calibration_to_string(k, chain)).map_err(|source| {
        GeometryError::CalibIo {
            path: path.display().to_string(),
            source,
        }
    })
}

fn parse_floats<const N: usize>(
    text: &str,
    path: &str,
    line: usize,
) -> Result<[f64; N]> {
    let mut out = [0.0; N];
    let mut count = 0;
    for token in text.split_whitespace() {
        if count == N {
            return Err(GeometryError::CalibParse {
                path: path.to_string(),
                line,
                msg: format!("expected {} floats, found more", N),
            });
        }
        out[count] = token.parse::<f64>().map_err(|_| GeometryError::CalibParse {
            path: path.to_string(),
            line,
            msg: format!("invalid float `{}`", token),
        })?;
        count += 1;
    }
    if count != N {
        return Err(GeometryError::CalibParse {
            path: path.to_string(),
            line,
            msg: format!("expected {} floats, found {}", N, count),
        });
    }
    Ok(out)
}

/// Parse the calibration text format.
pub fn calibration_from_string(text: &str, path: &str) -> Result<(IntrinsicMatrix, PoseChain)> {
    let mut intrinsics = None;
    let mut stages = Vec::new();
    for (index, raw) in text.lines().enumerate() {
        let line_no = index + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("K:") {
            if intrinsics.is_some() {
                return Err(GeometryError::CalibParse {
                    path: path.to_string(),
                    line: line_no,
                    msg: "duplicate K line".into(),
                });
            }
            let entries = parse_floats::<12>(rest, path, line_no)?;
            intrinsics = Some(IntrinsicMatrix::new(entries)?);
        } else if let Some(rest) = line.strip_prefix("T ") {
            let (label, floats) =
                rest.split_once(':')
                    .ok_or_else(|| GeometryError::CalibParse {
                        path: path.to_string(),
                        line: line_no,
                        msg: "missing `:` after transform label".into(),
                    })?;
            let entries = parse_floats::<16>(floats, path, line_no)?;
            stages.push(ChainStage::new(label.trim(), RigidTransform::new(entries)?)?);
        } else {
            return Err(GeometryError::CalibParse {
                path: path.to_string(),
                line: line_no,
                msg: format!("unrecognized line `{}`", line),
            });
        }
    }
    let k = intrinsics.ok_or_else(|| GeometryError::CalibParse {
        path: path.to_string(),
        line: 0,
        msg: "missing K line".into(),
    })?;
    Ok((k, PoseChain::new(stages)?))
}

pub fn read_calibration(path: &Path) -> Result<(IntrinsicMatrix, PoseChain)> {
    let text = std::fs::read_to_string(path).map_err(|source| GeometryError::CalibIo {
        path: path.display().to_string(),
        source,
    })?;
    calibration_from_string(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn floats_round_trip_bit_exactly() {
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        for _ in 0..1000 {
            let v: f64 = rng.random_range(-1e6..1e6) * rng.random_range(1e-9..1e3);
            let parsed: f64 = format_float(v).parse().unwrap();
            assert_eq!(v.to_bits(), parsed.to_bits());
        }
    }

    #[test]
    fn calibration_round_trips() {
        let k = IntrinsicMatrix::pinhole(
            250.000_000_123_456_8,
            251.5,
            320.1,
            239.9,
        )
        .unwrap();
        let chain = PoseChain::new(vec![
            ChainStage::new(
                "camera<-ego_tc",
                RigidTransform::translation_only([0.1, -0.2, 0.3]),
            )
            .unwrap(),
            ChainStage::new(
                "ego_tc<-global",
                RigidTransform::translation_only([7.0, 8.0, 9.0]),
            )
            .unwrap(),
        ])
        .unwrap();
        let text = calibration_to_string(&k, &chain);
        let (k2, chain2) = calibration_from_string(&text, "calib.txt").unwrap();
        assert_eq!(k, k2);
        assert_eq!(chain, chain2);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = calibration_from_string("K: 1 2 3\n", "c.txt").unwrap_err();
        match err {
            GeometryError::CalibParse { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected error {:?}", other),
        }
        let good_k = "K: 250 0 320 0 0 250 240 0 0 0 1 0\n";
        let err = calibration_from_string(&format!("{}garbage\n", good_k), "c.txt").unwrap_err();
        match err {
            GeometryError::CalibParse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {:?}", other),
        }
        assert!(calibration_from_string("", "c.txt").is_err());
    }
}
