//! Binary weight and visual-feature files. All integers are little-endian
//! `u32`; matrices are raw little-endian `f64`, row-major.
//!
//! Weight file: `b"EEML"`, version `1`, then `layers, hidden, heads, vocab,
//! feat_dim, mode` and the matrices embed, unembed, projector W1, projector
//! W2, then per layer Wq, Wk, Wv, Wo, FFN W1, FFN W2.
//!
//! Feature file: `rows, cols`, then `rows·cols` values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::attention::AttentionWeights;
use crate::error::{Error, Result};
use crate::layers::decoder::LayerWeights;
use crate::layers::model::{Mode, Model, ModelConfig};
use crate::tensor::Matrix;

pub const WEIGHT_MAGIC: &[u8; 4] = b"EEML";
pub const WEIGHT_VERSION: u32 = 1;

fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{what} = {v} does not fit in u32")))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Format(format!("truncated header: {e}")))?;
    Ok(u32::from_le_bytes(buf))
}

fn write_values<W: Write>(w: &mut W, m: &Matrix) -> Result<()> {
    for &x in m.data() {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_matrix<R: Read>(r: &mut R, rows: usize, cols: usize, what: &str) -> Result<Matrix> {
    let mut bytes = vec![0u8; rows * cols * 8];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::Format(format!("truncated data while reading {what} ({rows}x{cols})")))?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Matrix::new(rows, cols, data)
}

fn expect_eof<R: Read>(r: &mut R) -> Result<()> {
    let mut probe = [0u8; 1];
    match r.read(&mut probe)? {
        0 => Ok(()),
        _ => Err(Error::Format("trailing bytes after last matrix".into())),
    }
}

pub fn write_weights<W: Write>(w: &mut W, model: &Model) -> Result<()> {
    model.check_shapes()?;
    let c = &model.config;
    w.write_all(WEIGHT_MAGIC)?;
    write_u32(w, WEIGHT_VERSION)?;
    for (v, what) in [
        (c.layers, "layers"),
        (c.hidden, "hidden"),
        (c.heads, "heads"),
        (c.vocab, "vocab"),
        (c.feat_dim, "feat_dim"),
    ] {
        write_u32(w, to_u32(v, what)?)?;
    }
    write_u32(w, c.mode.code())?;
    for m in [&model.embed, &model.unembed, &model.projector_w1, &model.projector_w2] {
        write_values(w, m)?;
    }
    for layer in &model.layers {
        for m in [
            &layer.attn.wq,
            &layer.attn.wk,
            &layer.attn.wv,
            &layer.attn.wo,
            &layer.ffn_w1,
            &layer.ffn_w2,
        ] {
            write_values(w, m)?;
        }
    }
    Ok(())
}

pub fn read_weights<R: Read>(r: &mut R) -> Result<Model> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("file too short for magic".into()))?;
    if &magic != WEIGHT_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let version = read_u32(r)?;
    if version != WEIGHT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let mut fields = [0usize; 5];
    for f in fields.iter_mut() {
        *f = read_u32(r)? as usize;
    }
    let mode = Mode::from_code(read_u32(r)?)?;
    let [layers, hidden, heads, vocab, feat_dim] = fields;
    let config = ModelConfig {
        layers,
        hidden,
        heads,
        vocab,
        feat_dim,
        mode,
    };
    config
        .validate()
        .map_err(|e| Error::Format(format!("invalid config in header: {e}")))?;
    let h = hidden;
    let embed = read_matrix(r, vocab, h, "embed")?;
    let unembed = read_matrix(r, h, vocab, "unembed")?;
    let projector_w1 = read_matrix(r, feat_dim, h, "projector_w1")?;
    let projector_w2 = read_matrix(r, h, h, "projector_w2")?;
    let mut stack = Vec::with_capacity(layers);
    for l in 0..layers {
        let wq = read_matrix(r, h, h, &format!("layer {l} Wq"))?;
        let wk = read_matrix(r, h, h, &format!("layer {l} Wk"))?;
        let wv = read_matrix(r, h, h, &format!("layer {l} Wv"))?;
        let wo = read_matrix(r, h, h, &format!("layer {l} Wo"))?;
        let w1 = read_matrix(r, h, 4 * h, &format!("layer {l} ffn_W1"))?;
        let w2 = read_matrix(r, 4 * h, h, &format!("layer {l} ffn_W2"))?;
        stack.push(LayerWeights::new(
            AttentionWeights::new(wq, wk, wv, wo, heads)?,
            w1,
            w2,
        )?);
    }
    expect_eof(r)?;
    Ok(Model {
        config,
        embed,
        unembed,
        projector_w1,
        projector_w2,
        layers: stack,
    })
}

pub fn write_features<W: Write>(w: &mut W, features: &Matrix) -> Result<()> {
    write_u32(w, to_u32(features.rows(), "rows")?)?;
    write_u32(w, to_u32(features.cols(), "cols")?)?;
    write_values(w, features)
}

pub fn read_features<R: Read>(r: &mut R) -> Result<Matrix> {
    let rows = read_u32(r)? as usize;
    let cols = read_u32(r)? as usize;
    let m = read_matrix(r, rows, cols, "features")?;
    expect_eof(r)?;
    Ok(m)
}

pub fn save_weights(path: impl AsRef<Path>, model: &Model) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_weights(&mut w, model)?;
    w.flush()?;
    Ok(())
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<Model> {
    read_weights(&mut BufReader::new(File::open(path)?))
}

pub fn save_features(path: impl AsRef<Path>, features: &Matrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_features(&mut w, features)?;
    w.flush()?;
    Ok(())
}

pub fn load_features(path: impl AsRef<Path>) -> Result<Matrix> {
    read_features(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Model {
        Model::new(
            ModelConfig {
                layers: 2,
                hidden: 4,
                heads: 2,
                vocab: 6,
                feat_dim: 3,
                mode: Mode::Composite,
            },
            5,
        )
        .unwrap()
    }

    #[test]
    fn header_layout() {
        let mut buf = Vec::new();
        write_weights(&mut buf, &small()).unwrap();
        assert_eq!(&buf[..4], b"EEML");
        let words: Vec<u32> = buf[4..32]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        assert_eq!(words, vec![1, 2, 4, 2, 6, 3, 1]);
        // embed first, row-major
        let first = f64::from_le_bytes(buf[32..40].try_into().unwrap());
        assert_eq!(first, small().embed.get(0, 0));
        let h = 4;
        let floats = 6 * h * 2 + 3 * h + h * h + 2 * (4 * h * h + 8 * h * h);
        assert_eq!(buf.len(), 32 + 8 * floats);
    }

    #[test]
    fn round_trip_and_corruption() {
        let model = small();
        let mut buf = Vec::new();
        write_weights(&mut buf, &model).unwrap();
        assert_eq!(read_weights(&mut buf.as_slice()).unwrap(), model);

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_weights(&mut bad.as_slice()), Err(Error::Format(_))));
        let truncated = &buf[..buf.len() - 3];
        assert!(read_weights(&mut &truncated[..]).is_err());
        let mut long = buf.clone();
        long.push(0);
        assert!(read_weights(&mut long.as_slice()).is_err());
        let mut bad_mode = buf;
        bad_mode[28] = 7;
        assert!(read_weights(&mut bad_mode.as_slice()).is_err());
    }

    #[test]
    fn features_round_trip() {
        let f = Matrix::from_fn(3, 2, |i, j| i as f64 - 0.5 * j as f64);
        let mut buf = Vec::new();
        write_features(&mut buf, &f).unwrap();
        assert_eq!(&buf[..8], &[3, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(read_features(&mut buf.as_slice()).unwrap(), f);
        let empty = Matrix::zeros(0, 2);
        let mut buf = Vec::new();
        write_features(&mut buf, &empty).unwrap();
        assert_eq!(read_features(&mut buf.as_slice()).unwrap().shape(), (0, 2));
    }
}
