//! Generator checkpoints: a JSON header line followed by every layer's weights
//! (row-major) and bias as little-endian doubles.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{Dense, EncodingConfig, GeneratorParams, TrainingMeta};
use crate::container;
use crate::error::{PszError, Result};
use crate::filters::FilterDims;
use crate::geometry::{Band, CoordBounds};

pub const CHECKPOINT_VERSION: u32 = 1;
const KIND: &str = "psz-generator";

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    version: u32,
    band: Band,
    dims: FilterDims,
    layer_sizes: Vec<usize>,
    encoding: EncodingConfig,
    bounds: CoordBounds,
    output_scale: f64,
    seed: u64,
    training: Option<TrainingMeta>,
    count: usize,
}

pub fn save_checkpoint(params: &GeneratorParams, path: &Path) -> Result<()> {
    params.validate()?;
    let mut values = Vec::with_capacity(params.parameter_count());
    for l in &params.layers {
        values.extend(l.weights.iter());
        values.extend(l.bias.iter());
    }
    let header = Header {
        kind: KIND.into(),
        version: CHECKPOINT_VERSION,
        band: params.band,
        dims: params.dims,
        layer_sizes: params.layer_sizes(),
        encoding: params.encoding,
        bounds: params.bounds,
        output_scale: params.output_scale,
        seed: params.seed,
        training: params.training,
        count: values.len(),
    };
    container::write_file(path, &container::encode(&header, &values)?)
}

pub fn load_checkpoint(path: &Path) -> Result<GeneratorParams> {
    let bytes = container::read_file(path)?;
    let (h, values) = container::decode::<Header>(&bytes, |h| h.count).map_err(PszError::CorruptCheckpoint)?;
    if h.kind != KIND {
        return Err(PszError::CorruptCheckpoint(format!("unexpected kind {:?}", h.kind)));
    }
    if h.version != CHECKPOINT_VERSION {
        return Err(PszError::VersionMismatch {
            found: h.version,
            supported: CHECKPOINT_VERSION,
        });
    }
    if h.layer_sizes.len() < 3 {
        return Err(PszError::ShapeMismatch("checkpoint lists fewer than three layer widths".into()));
    }
    let expected: usize = h.layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
    if expected != h.count {
        return Err(PszError::ShapeMismatch(format!(
            "layer widths imply {expected} parameters, checkpoint holds {}",
            h.count
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(PszError::CorruptCheckpoint("non-finite parameter".into()));
    }
    let mut rest = values.as_slice();
    let mut layers = Vec::with_capacity(h.layer_sizes.len() - 1);
    for w in h.layer_sizes.windows(2) {
        let (wv, tail) = rest.split_at(w[0] * w[1]);
        let (bv, tail) = tail.split_at(w[1]);
        rest = tail;
        layers.push(Dense {
            weights: Array2::from_shape_vec((w[0], w[1]), wv.to_vec()).expect("sized"),
            bias: Array1::from(bv.to_vec()),
        });
    }
    let params = GeneratorParams {
        band: h.band,
        dims: h.dims,
        encoding: h.encoding,
        bounds: h.bounds,
        output_scale: h.output_scale,
        seed: h.seed,
        layers,
        training: h.training,
    };
    params.validate()?;
    Ok(params)
}

/// Loads a checkpoint and checks that it was trained for `band`.
pub fn load_checkpoint_for(path: &Path, band: Band) -> Result<GeneratorParams> {
    let params = load_checkpoint(path)?;
    if params.band != band {
        return Err(PszError::BandMismatch {
            expected: band,
            found: params.band,
        });
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::ArchConfig;
    use crate::geometry::{Point2, StackedCoords};

    fn params() -> GeneratorParams {
        let arch = ArchConfig {
            hidden: vec![5, 4],
            ..ArchConfig::default()
        };
        let mut p = GeneratorParams::init(Band::Tweeter, FilterDims { drivers: 2, taps: 4 }, &arch, CoordBounds::default(), 11)
            .unwrap();
        p.training = Some(TrainingMeta {
            lambda: 0.75,
            delta: 0.01,
            steps: 10,
            batch_size: 4,
        });
        p
    }

    #[test]
    fn round_trip_reproduces_outputs_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/g.ckpt");
        let p = params();
        save_checkpoint(&p, &path).unwrap();
        let q = load_checkpoint_for(&path, Band::Tweeter).unwrap();
        assert_eq!(p, q);
        let x = StackedCoords::new(Point2::new(-0.3, 1.0), Point2::new(0.4, 1.2));
        assert_eq!(p.forward(&x).unwrap().0, q.forward(&x).unwrap().0);
    }

    #[test]
    fn wrong_band_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.ckpt");
        save_checkpoint(&params(), &path).unwrap();
        assert!(matches!(
            load_checkpoint_for(&path, Band::Woofer),
            Err(PszError::BandMismatch {
                expected: Band::Woofer,
                found: Band::Tweeter
            })
        ));
    }

    #[test]
    fn truncated_and_garbled_files_are_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.ckpt");
        save_checkpoint(&params(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(PszError::CorruptCheckpoint(_))));
        std::fs::write(&path, b"not json\n").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(PszError::CorruptCheckpoint(_))));
        assert!(matches!(
            load_checkpoint(&dir.path().join("missing")),
            Err(PszError::Io { .. })
        ));
    }

    fn rewrite_header(path: &Path, edit: impl Fn(&mut serde_json::Value)) {
        let bytes = std::fs::read(path).unwrap();
        let nl = bytes.iter().position(|&b| b == b'\n').unwrap();
        let mut header: serde_json::Value = serde_json::from_slice(&bytes[..nl]).unwrap();
        edit(&mut header);
        let mut out = serde_json::to_vec(&header).unwrap();
        out.extend_from_slice(&bytes[nl..]);
        std::fs::write(path, out).unwrap();
    }

    #[test]
    fn version_and_shape_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.ckpt");
        save_checkpoint(&params(), &path).unwrap();
        rewrite_header(&path, |h| h["version"] = 7.into());
        assert!(matches!(
            load_checkpoint(&path),
            Err(PszError::VersionMismatch { found: 7, supported: 1 })
        ));

        save_checkpoint(&params(), &path).unwrap();
        rewrite_header(&path, |h| h["dims"]["taps"] = 5.into());
        assert!(matches!(load_checkpoint(&path), Err(PszError::ShapeMismatch(_))));

        save_checkpoint(&params(), &path).unwrap();
        rewrite_header(&path, |h| h["layer_sizes"][1] = 4.into());
        assert!(matches!(load_checkpoint(&path), Err(PszError::ShapeMismatch(_))));
    }
}
