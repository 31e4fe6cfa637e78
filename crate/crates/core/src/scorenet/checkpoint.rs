//! Plain-text checkpoints.
//!
//! ```text
//! fadegrow-checkpoint 1
//! n_items 50
//! setting pairwise
//! ...
//! tensor item_emb 50 64
//! <one f64 per line as 16 hex digits of its bit pattern>
//! ```
//!
//! Values are written as raw bit patterns, so a save/load round trip is
//! bit-exact.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::losses::SettingKind;

use super::{ModelConfig, ScoreField};

const MAGIC: &str = "fadegrow-checkpoint 1";

pub fn save_checkpoint(field: &ScoreField, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    let c = field.config();
    writeln!(w, "{MAGIC}")?;
    writeln!(w, "n_items {}", c.n_items)?;
    writeln!(w, "setting {}", c.setting)?;
    writeln!(w, "dim {}", c.dim)?;
    writeln!(w, "ffn_dim {}", c.ffn_dim)?;
    writeln!(w, "blocks {}", c.blocks)?;
    writeln!(w, "steps {}", c.steps)?;
    for (name, t) in field.params.named() {
        let dims: Vec<String> = t.shape.iter().map(|d| d.to_string()).collect();
        writeln!(w, "tensor {name} {}", dims.join(" "))?;
        for v in &t.data {
            writeln!(w, "{:016x}", v.to_bits())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn corrupt(line: usize, msg: impl Into<String>) -> Error {
    Error::ParseError {
        line,
        msg: msg.into(),
    }
}

pub fn load_checkpoint(path: &Path) -> Result<ScoreField> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut next = |what: &str| {
        lines
            .next()
            .ok_or_else(|| corrupt(0, format!("unexpected end of file, expected {what}")))
    };
    let (ln, magic) = next("header")?;
    if magic != MAGIC {
        return Err(corrupt(ln, "not a fadegrow checkpoint"));
    }
    let mut field_of = |key: &str| -> Result<(usize, String)> {
        let (ln, l) = next(key)?;
        match l.split_once(' ') {
            Some((k, v)) if k == key => Ok((ln, v.to_string())),
            _ => Err(corrupt(ln, format!("expected `{key}`"))),
        }
    };
    let num = |(ln, v): (usize, String)| -> Result<usize> {
        v.parse()
            .map_err(|_| corrupt(ln, format!("bad integer `{v}`")))
    };
    let n_items = num(field_of("n_items")?)?;
    let (ln, s) = field_of("setting")?;
    let setting: SettingKind = s.parse().map_err(|e: Error| corrupt(ln, e.to_string()))?;
    let dim = num(field_of("dim")?)?;
    let ffn_dim = num(field_of("ffn_dim")?)?;
    let blocks = num(field_of("blocks")?)?;
    let steps = num(field_of("steps")?)?;
    let config = ModelConfig {
        n_items,
        setting,
        dim,
        ffn_dim,
        blocks,
        steps,
    };
    config.validate()?;
    // Build a correctly shaped skeleton, then overwrite every tensor.
    let mut field = skeleton(config)?;
    for (name, t) in field.params.named_mut() {
        let (ln, header) = next("tensor header")?;
        let mut parts = header.split(' ');
        if parts.next() != Some("tensor") || parts.next() != Some(name.as_str()) {
            return Err(corrupt(ln, format!("expected tensor `{name}`")));
        }
        let shape: Vec<usize> = parts
            .map(|p| {
                p.parse()
                    .map_err(|_| corrupt(ln, format!("bad dimension `{p}`")))
            })
            .collect::<Result<_>>()?;
        if shape != t.shape {
            return Err(corrupt(
                ln,
                format!(
                    "tensor `{name}` has shape {shape:?}, expected {:?}",
                    t.shape
                ),
            ));
        }
        for v in t.data.iter_mut() {
            let (ln, l) = next("tensor value")?;
            let bits = (l.len() == 16)
                .then(|| u64::from_str_radix(l, 16).ok())
                .flatten()
                .ok_or_else(|| corrupt(ln, format!("bad value `{l}`")))?;
            *v = f64::from_bits(bits);
        }
    }
    if let Some((ln, _)) = lines.find(|(_, l)| !l.trim().is_empty()) {
        return Err(corrupt(ln, "trailing data"));
    }
    Ok(field)
}

fn skeleton(config: ModelConfig) -> Result<ScoreField> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    ScoreField::init(config, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        for setting in [
            SettingKind::PointWise,
            SettingKind::PairWise,
            SettingKind::Hybrid { n_lambda: 3 },
            SettingKind::Adaptive { virtual_item: true },
        ] {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let mut cfg = ModelConfig::new(6, setting, 4, 5);
            cfg.blocks = 2;
            let mut f = ScoreField::init(cfg, &mut rng).unwrap();
            f.params.logits.data[1] = -0.1 / 3.0;
            f.params.head_b1.data[0] = f64::MIN_POSITIVE;
            let path = dir.path().join("model.ckpt");
            save_checkpoint(&f, &path).unwrap();
            let g = load_checkpoint(&path).unwrap();
            assert_eq!(f, g);
        }
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        fs::write(&path, "hello\n").unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::ParseError { line: 1, .. })
        ));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f =
            ScoreField::init(ModelConfig::new(3, SettingKind::PairWise, 2, 2), &mut rng).unwrap();
        save_checkpoint(&f, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, &text[..text.len() - 10]).unwrap();
        assert!(load_checkpoint(&path).is_err());
        assert!(matches!(
            load_checkpoint(&dir.path().join("missing")),
            Err(Error::Io(_))
        ));
    }
}
