//! Versioned little-endian binary blobs for trained models.
//!
//! Layout is magic, format version, dimensions, activation/loss tags, then
//! row-major weight arrays as 64-bit floats. Readers track the byte offset so
//! corruption is reported with a position.

use crate::autoencoder::{Activation, Autoencoder};
use crate::classifier::{Mlp, MlpLoss};
use crate::error::{Error, Result};

pub const AUTOENCODER_MAGIC: [u8; 4] = *b"TSAE";
pub const MLP_MAGIC: [u8; 4] = *b"TSML";
pub const FORMAT_VERSION: u32 = 1;

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new(magic: [u8; 4]) -> Writer {
        let mut buf = Vec::new();
        buf.extend_from_slice(&magic);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        Writer { buf }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64s(&mut self, values: &[f64]) {
        self.buf.reserve(values.len() * 8);
        for v in values {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn finish(self) -> Vec<u8> {
        self.buf
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], magic: [u8; 4]) -> Result<Reader<'a>> {
        let mut r = Reader { bytes, offset: 0 };
        let found = r.take(4, "magic")?;
        if found != magic {
            return Err(Error::Corrupt {
                offset: 0,
                what: format!(
                    "bad magic {:02x?}, expected {:02x?}",
                    found, magic
                ),
            });
        }
        let version = r.u32("format version")?;
        if version != FORMAT_VERSION {
            return Err(Error::Corrupt {
                offset: 4,
                what: format!("unsupported format version {version}"),
            });
        }
        Ok(r)
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.offset + n > self.bytes.len() {
            return Err(Error::Corrupt {
                offset: self.offset,
                what: format!("truncated while reading {what}"),
            });
        }
        let slice = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(slice)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let b = self.take(n * 8, what)?;
        let mut out = Vec::with_capacity(n);
        for chunk in b.chunks_exact(8) {
            let v = f64::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::Corrupt {
                    offset: self.offset,
                    what: format!("non-finite value in {what}"),
                });
            }
            out.push(v);
        }
        Ok(out)
    }

    fn activation(&mut self, what: &str) -> Result<Activation> {
        let offset = self.offset;
        let tag = self.u8(what)?;
        Activation::from_tag(tag).ok_or(Error::Corrupt {
            offset,
            what: format!("unknown activation tag {tag} for {what}"),
        })
    }

    fn done(&self) -> Result<()> {
        if self.offset != self.bytes.len() {
            return Err(Error::Corrupt {
                offset: self.offset,
                what: format!("{} trailing bytes", self.bytes.len() - self.offset),
            });
        }
        Ok(())
    }
}

pub fn save_autoencoder(ae: &Autoencoder) -> Vec<u8> {
    let mut w = Writer::new(AUTOENCODER_MAGIC);
    w.u32(ae.input_dim as u32);
    w.u32(ae.code_dim as u32);
    w.u8(ae.enc_activation.tag());
    w.u8(ae.dec_activation.tag());
    w.f64s(&ae.enc_weights);
    w.f64s(&ae.enc_bias);
    w.f64s(&ae.dec_weights);
    w.f64s(&ae.dec_bias);
    w.finish()
}

pub fn load_autoencoder(bytes: &[u8]) -> Result<Autoencoder> {
    let mut r = Reader::new(bytes, AUTOENCODER_MAGIC)?;
    let input_dim = r.u32("input_dim")? as usize;
    let code_dim = r.u32("code_dim")? as usize;
    if code_dim == 0 || input_dim == 0 || code_dim >= input_dim {
        return Err(Error::Corrupt {
            offset: 8,
            what: format!("invalid dims input={input_dim} code={code_dim}"),
        });
    }
    let enc_activation = r.activation("encoder activation")?;
    let dec_activation = r.activation("decoder activation")?;
    let enc_weights = r.f64s(code_dim * input_dim, "encoder weights")?;
    let enc_bias = r.f64s(code_dim, "encoder bias")?;
    let dec_weights = r.f64s(input_dim * code_dim, "decoder weights")?;
    let dec_bias = r.f64s(input_dim, "decoder bias")?;
    r.done()?;
    Ok(Autoencoder {
        input_dim,
        code_dim,
        enc_weights,
        enc_bias,
        dec_weights,
        dec_bias,
        enc_activation,
        dec_activation,
    })
}

pub fn save_mlp(mlp: &Mlp) -> Vec<u8> {
    let mut w = Writer::new(MLP_MAGIC);
    w.u32(mlp.input_dim as u32);
    w.u32(mlp.hidden_dim as u32);
    w.u32(mlp.classes as u32);
    w.u8(mlp.hidden_activation.tag());
    w.u8(mlp.loss.tag());
    match &mlp.standardize {
        Some((mean, inv_std)) => {
            w.u8(1);
            w.f64s(mean);
            w.f64s(inv_std);
        }
        None => w.u8(0),
    }
    w.f64s(&mlp.w1);
    w.f64s(&mlp.b1);
    w.f64s(&mlp.w2);
    w.f64s(&mlp.b2);
    w.finish()
}

pub fn load_mlp(bytes: &[u8]) -> Result<Mlp> {
    let mut r = Reader::new(bytes, MLP_MAGIC)?;
    let input_dim = r.u32("input_dim")? as usize;
    let hidden_dim = r.u32("hidden_dim")? as usize;
    let classes = r.u32("classes")? as usize;
    if input_dim == 0 || hidden_dim == 0 || classes == 0 {
        return Err(Error::Corrupt {
            offset: 8,
            what: format!("invalid dims input={input_dim} hidden={hidden_dim} classes={classes}"),
        });
    }
    let hidden_activation = r.activation("hidden activation")?;
    let loss_offset = r.offset;
    let loss_tag = r.u8("loss tag")?;
    let loss = MlpLoss::from_tag(loss_tag).ok_or(Error::Corrupt {
        offset: loss_offset,
        what: format!("unknown loss tag {loss_tag}"),
    })?;
    let standardize = match r.u8("standardization flag")? {
        0 => None,
        1 => {
            let mean = r.f64s(input_dim, "feature means")?;
            let inv_std = r.f64s(input_dim, "feature inverse stds")?;
            Some((mean, inv_std))
        }
        other => {
            return Err(Error::Corrupt {
                offset: r.offset - 1,
                what: format!("invalid standardization flag {other}"),
            })
        }
    };
    let w1 = r.f64s(hidden_dim * input_dim, "hidden weights")?;
    let b1 = r.f64s(hidden_dim, "hidden bias")?;
    let w2 = r.f64s(classes * hidden_dim, "output weights")?;
    let b2 = r.f64s(classes, "output bias")?;
    r.done()?;
    Ok(Mlp {
        input_dim,
        hidden_dim,
        classes,
        w1,
        b1,
        w2,
        b2,
        hidden_activation,
        loss,
        standardize,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn autoencoder_round_trip_is_identity() {
        let ae = Autoencoder::new(18, 4, Activation::Sigmoid, Activation::Identity, 77).unwrap();
        let bytes = save_autoencoder(&ae);
        let back = load_autoencoder(&bytes).unwrap();
        assert_eq!(ae, back);
    }

    #[test]
    fn mlp_round_trip_is_identity() {
        let mut mlp = Mlp::new(12, 5, 3, 7).unwrap();
        mlp.fit_standardization(&[vec![0.5; 12], vec![0.1; 12]]).unwrap();
        let bytes = save_mlp(&mlp);
        let back = load_mlp(&bytes).unwrap();
        assert_eq!(mlp, back);
    }

    #[test]
    fn truncated_blob_reports_offset() {
        let ae = Autoencoder::new(18, 4, Activation::Sigmoid, Activation::Sigmoid, 1).unwrap();
        let bytes = save_autoencoder(&ae);
        let err = load_autoencoder(&bytes[..bytes.len() - 3]).unwrap_err();
        match err {
            Error::Corrupt { offset, .. } => assert!(offset > 0),
            other => panic!("expected corruption, got {other:?}"),
        }
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let ae = Autoencoder::new(18, 4, Activation::Sigmoid, Activation::Sigmoid, 1).unwrap();
        let bytes = save_autoencoder(&ae);
        assert!(matches!(
            load_mlp(&bytes),
            Err(Error::Corrupt { offset: 0, .. })
        ));
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let ae = Autoencoder::new(18, 4, Activation::Sigmoid, Activation::Sigmoid, 1).unwrap();
        let mut bytes = save_autoencoder(&ae);
        bytes.push(0);
        assert!(matches!(load_autoencoder(&bytes), Err(Error::Corrupt { .. })));
    }

    #[test]
    fn corrupt_activation_tag_names_offset() {
        let ae = Autoencoder::new(18, 4, Activation::Sigmoid, Activation::Sigmoid, 1).unwrap();
        let mut bytes = save_autoencoder(&ae);
        bytes[16] = 99; // encoder activation tag
        match load_autoencoder(&bytes).unwrap_err() {
            Error::Corrupt { offset, what } => {
                assert_eq!(offset, 16);
                assert!(what.contains("activation"));
            }
            other => panic!("expected corruption, got {other:?}"),
        }
    }
}
