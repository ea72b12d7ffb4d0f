//! Checkpoint directories.
//!
//! ```text
//! <dir>/manifest.txt   key = value: format, step, config fields, vocab hash,
//!                      then one `tensor = <name> <shape>` line per tensor
//! <dir>/weights.bin    little-endian f64 tensors in manifest order
//! <dir>/optimizer.bin  optional: first moments then second moments, same order
//! <dir>/vocab.txt      optional copy of the vocabulary
//! ```

use std::fs;
use std::path::Path;

use crate::corpus::{AnchorPolicy, Vocab};
use crate::error::{Error, Result};
use crate::kvfile::KvFile;
use crate::model::{ModelConfig, ModelWeights};

pub const FORMAT: &str = "anchorlm-checkpoint-v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub weights: ModelWeights,
    pub step: u64,
    pub vocab: Option<Vocab>,
    pub policy: Option<AnchorPolicy>,
    pub mask_mode: Option<String>,
    /// Adam first and second moments.
    pub optimizer: Option<(ModelWeights, ModelWeights)>,
}

fn write_tensors(weights: &ModelWeights, out: &mut Vec<u8>) {
    for t in weights.tensors() {
        for x in t {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
}

fn read_tensors(config: &ModelConfig, bytes: &[u8], path: &Path) -> Result<ModelWeights> {
    let mut w = ModelWeights::zeros(config);
    if bytes.len() != w.num_params() * 8 {
        return Err(Error::input(
            path,
            format!("expected {} bytes, found {}", w.num_params() * 8, bytes.len()),
        ));
    }
    let mut chunks = bytes.chunks_exact(8);
    for t in w.tensors_mut() {
        for (x, c) in t.iter_mut().zip(&mut chunks) {
            *x = f64::from_le_bytes(c.try_into().unwrap());
        }
    }
    Ok(w)
}

impl Checkpoint {
    pub fn new(weights: ModelWeights) -> Self {
        Checkpoint {
            weights,
            step: 0,
            vocab: None,
            policy: None,
            mask_mode: None,
            optimizer: None,
        }
    }

    pub fn manifest(&self) -> KvFile {
        let c = &self.weights.config;
        let mut kv = KvFile::default();
        kv.push("format", FORMAT);
        kv.push("step", self.step);
        kv.push("vocab_size", c.vocab_size);
        kv.push("n_layers", c.n_layers);
        kv.push("n_heads", c.n_heads);
        kv.push("d_model", c.d_model);
        kv.push("d_ff", c.d_ff);
        kv.push("context_len", c.context_len);
        kv.push("rope_base", c.rope_base);
        kv.push("norm_eps", c.norm_eps);
        if let Some(v) = &self.vocab {
            kv.push("vocab_sha256", v.digest());
        }
        if let Some(p) = &self.policy {
            kv.push("policy", p);
        }
        if let Some(m) = &self.mask_mode {
            kv.push("mask_mode", m);
        }
        kv.push("optimizer", if self.optimizer.is_some() { "adamw" } else { "none" });
        kv.push("weights_sha256", self.weights.digest());
        for (name, shape) in self.weights.tensor_specs() {
            let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
            kv.push("tensor", format!("{name} {}", dims.join("x")));
        }
        kv
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("manifest.txt"), self.manifest().render())?;
        let mut bytes = Vec::with_capacity(self.weights.num_params() * 8);
        write_tensors(&self.weights, &mut bytes);
        fs::write(dir.join("weights.bin"), bytes)?;
        if let Some((m, v)) = &self.optimizer {
            let mut bytes = Vec::with_capacity(m.num_params() * 16);
            write_tensors(m, &mut bytes);
            write_tensors(v, &mut bytes);
            fs::write(dir.join("optimizer.bin"), bytes)?;
        } else if dir.join("optimizer.bin").exists() {
            fs::remove_file(dir.join("optimizer.bin"))?;
        }
        if let Some(v) = &self.vocab {
            v.save(&dir.join("vocab.txt"))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join("manifest.txt");
        let text = fs::read_to_string(&mpath).map_err(|e| Error::input(&mpath, e.to_string()))?;
        let kv = KvFile::parse(&text).map_err(|e| Error::input(&mpath, e.to_string()))?;
        let bad = |e: Error| Error::input(&mpath, e.to_string());
        if kv.get("format") != Some(FORMAT) {
            return Err(Error::input(&mpath, "not an anchorlm checkpoint"));
        }
        let config = ModelConfig {
            vocab_size: kv.required("vocab_size").map_err(bad)?,
            n_layers: kv.required("n_layers").map_err(bad)?,
            n_heads: kv.required("n_heads").map_err(bad)?,
            d_model: kv.required("d_model").map_err(bad)?,
            d_ff: kv.required("d_ff").map_err(bad)?,
            context_len: kv.required("context_len").map_err(bad)?,
            rope_base: kv.required("rope_base").map_err(bad)?,
            norm_eps: kv.required("norm_eps").map_err(bad)?,
        };
        config.validate().map_err(bad)?;
        let declared: Vec<&str> = kv.get_all("tensor").collect();
        let expected: Vec<String> = ModelWeights::zeros(&config)
            .tensor_specs()
            .into_iter()
            .map(|(n, s)| {
                let dims: Vec<String> = s.iter().map(|d| d.to_string()).collect();
                format!("{n} {}", dims.join("x"))
            })
            .collect();
        if declared != expected {
            return Err(Error::input(&mpath, "tensor list does not match the configuration"));
        }

        let wpath = dir.join("weights.bin");
        let bytes = fs::read(&wpath).map_err(|e| Error::input(&wpath, e.to_string()))?;
        let weights = read_tensors(&config, &bytes, &wpath)?;
        if let Some(d) = kv.get("weights_sha256") {
            if d != weights.digest() {
                return Err(Error::input(&wpath, "weights do not match the manifest digest"));
            }
        }

        let optimizer = if kv.get("optimizer") == Some("adamw") {
            let opath = dir.join("optimizer.bin");
            let bytes = fs::read(&opath).map_err(|e| Error::input(&opath, e.to_string()))?;
            let half = bytes.len() / 2;
            Some((
                read_tensors(&config, &bytes[..half], &opath)?,
                read_tensors(&config, &bytes[half..], &opath)?,
            ))
        } else {
            None
        };

        let vpath = dir.join("vocab.txt");
        let vocab = if vpath.exists() {
            let v = Vocab::load(&vpath)?;
            if let Some(d) = kv.get("vocab_sha256") {
                if d != v.digest() {
                    return Err(Error::input(&vpath, "vocabulary does not match the manifest hash"));
                }
            }
            Some(v)
        } else {
            None
        };
        Ok(Checkpoint {
            weights,
            step: kv.required("step").map_err(bad)?,
            vocab,
            policy: kv.parsed("policy").map_err(bad)?,
            mask_mode: kv.get("mask_mode").map(str::to_owned),
            optimizer,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_vocab_from_texts;
    use crate::model::init_weights;

    #[test]
    fn save_load_round_trip() {
        let vocab =
            build_vocab_from_texts(["a b c ."], &AnchorPolicy::AppendedToken, 10).unwrap();
        let mut cfg = ModelConfig::desk(vocab.len());
        cfg.d_model = 8;
        cfg.d_ff = 16;
        cfg.n_heads = 2;
        let w = init_weights(&cfg, 9, vocab.anchor()).unwrap();
        let mut ck = Checkpoint::new(w.clone());
        ck.step = 42;
        ck.vocab = Some(vocab);
        ck.policy = Some(AnchorPolicy::AppendedToken);
        ck.mask_mode = Some("ansan".into());
        ck.optimizer = Some((w.clone(), ModelWeights::zeros(&cfg)));
        let dir = tempfile::tempdir().unwrap();
        ck.save(dir.path()).unwrap();
        let back = Checkpoint::load(dir.path()).unwrap();
        assert_eq!(back, ck);

        let bytes = fs::read(dir.path().join("weights.bin")).unwrap();
        assert_eq!(bytes.len(), w.num_params() * 8);
        assert_eq!(&bytes[..8], &w.tok_emb[[0, 0]].to_le_bytes());
    }

    #[test]
    fn corrupted_weights_are_rejected() {
        let mut cfg = ModelConfig::desk(6);
        cfg.d_model = 8;
        cfg.n_heads = 2;
        let ck = Checkpoint::new(init_weights(&cfg, 1, None).unwrap());
        let dir = tempfile::tempdir().unwrap();
        ck.save(dir.path()).unwrap();
        let p = dir.path().join("weights.bin");
        let mut bytes = fs::read(&p).unwrap();
        bytes[3] ^= 0xff;
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(Checkpoint::load(dir.path()), Err(Error::Input { .. })));
        fs::write(&p, &bytes[..16]).unwrap();
        assert!(matches!(Checkpoint::load(dir.path()), Err(Error::Input { .. })));
    }
}
