//! Line-oriented text checkpoints.
//!
//! ```text
//! cdnet-checkpoint 1
//! config {"epochs_pretrain":100,...}
//! classifier small_cnn <M> <d>          (optional)
//! tensor body.0 1 16,1,7                 name, trainable flag, shape
//! 0.013 -0.2 ...                         row-major values
//! ...                                    6 body tensors, then head.0, head.1
//! weights <log_sigma_ce> <log_sigma_snn> <log_sigma_triplet>   (optional)
//! chains <T>                             (optional)
//! tensor within0.1.0 1 16,1,5            4 chains x T steps x 6 tensors
//! ...
//! end
//! ```
//!
//! Values are written with Rust's shortest round-trip formatting, so a
//! reloaded model reproduces predictions bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use crate::classifier::{BaseClassifier, SmallCnn, TrainConfig};
use crate::error::{io_err, CdnetError, Result};
use crate::losses::UncertaintyWeights;
use crate::reverse::{ChainSet, ReverseChain, StepDenoiser, ALL_CHAINS};
use crate::tensor::DiffTensor;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &str = "cdnet-checkpoint";

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub classifier: Option<BaseClassifier<SmallCnn>>,
    pub weights: Option<UncertaintyWeights>,
    pub chains: Option<ChainSet>,
}

fn write_tensor(out: &mut String, name: &str, t: &DiffTensor) {
    let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
    let _ = writeln!(
        out,
        "tensor {name} {} {}",
        u8::from(t.requires_grad()),
        shape.join(",")
    );
    let values: Vec<String> = t.values().iter().map(|v| format!("{v:?}")).collect();
    out.push_str(&values.join(" "));
    out.push('\n');
}

impl Checkpoint {
    pub fn to_text(&self) -> Result<String> {
        let mut out = format!("{MAGIC} {CHECKPOINT_VERSION}\n");
        let _ = writeln!(out, "config {}", serde_json::to_string(&self.config)?);
        if let Some(clf) = &self.classifier {
            let _ = writeln!(
                out,
                "classifier small_cnn {} {}",
                clf.input_len(),
                clf.embedding_dim()
            );
            for (i, t) in clf.body.iter().enumerate() {
                write_tensor(&mut out, &format!("body.{i}"), t);
            }
            for (i, t) in clf.head.iter().enumerate() {
                write_tensor(&mut out, &format!("head.{i}"), t);
            }
        }
        if let Some(w) = &self.weights {
            let [a, b, c] = w.log_sigmas();
            let _ = writeln!(out, "weights {a:?} {b:?} {c:?}");
        }
        if let Some(chains) = &self.chains {
            let _ = writeln!(out, "chains {}", chains.steps());
            for chain in chains.chains() {
                for den in &chain.denoisers {
                    for (i, t) in den.params.iter().enumerate() {
                        write_tensor(
                            &mut out,
                            &format!("{}.{}.{i}", chain.kind.label(), den.step),
                            t,
                        );
                    }
                }
            }
        }
        out.push_str("end\n");
        Ok(out)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut r = Reader {
            lines: text.lines().enumerate(),
        };
        let (n, header) = r.next_line()?;
        let version = header
            .strip_prefix(MAGIC)
            .map(str::trim)
            .ok_or_else(|| bad(n, "not a cdnet checkpoint"))?;
        if version != CHECKPOINT_VERSION.to_string() {
            return Err(bad(n, &format!("unsupported version {version}")));
        }
        let (n, line) = r.next_line()?;
        let json = line
            .strip_prefix("config ")
            .ok_or_else(|| bad(n, "expected config line"))?;
        let config: TrainConfig = serde_json::from_str(json)?;
        let mut ckpt = Checkpoint {
            config,
            classifier: None,
            weights: None,
            chains: None,
        };
        loop {
            let (n, line) = r.next_line()?;
            let mut words = line.split_whitespace();
            match words.next() {
                Some("end") => return Ok(ckpt),
                Some("classifier") => {
                    let kind = words.next();
                    let dims: Vec<usize> = words
                        .map(|w| w.parse())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| bad(n, "bad classifier dimensions"))?;
                    if kind != Some("small_cnn") || dims.len() != 2 {
                        return Err(bad(n, "expected `classifier small_cnn <M> <d>`"));
                    }
                    let extractor = SmallCnn {
                        input_len: dims[0],
                        embedding_dim: dims[1],
                    };
                    let body = (0..6).map(|_| r.tensor()).collect::<Result<Vec<_>>>()?;
                    let head = (0..2).map(|_| r.tensor()).collect::<Result<Vec<_>>>()?;
                    ckpt.classifier = Some(BaseClassifier::from_parts(extractor, body, head)?);
                }
                Some("weights") => {
                    let v: Vec<f64> = words
                        .map(|w| w.parse())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| bad(n, "bad weight value"))?;
                    let arr: [f64; 3] = v
                        .try_into()
                        .map_err(|_| bad(n, "expected three log sigmas"))?;
                    ckpt.weights = Some(UncertaintyWeights::from_log_sigmas(arr));
                }
                Some("chains") => {
                    let steps: usize = words
                        .next()
                        .and_then(|w| w.parse().ok())
                        .ok_or_else(|| bad(n, "expected `chains <T>`"))?;
                    let mut chains = Vec::with_capacity(4);
                    for kind in ALL_CHAINS {
                        let mut denoisers = Vec::with_capacity(steps);
                        for step in 1..=steps {
                            let params = (0..6).map(|_| r.tensor()).collect::<Result<Vec<_>>>()?;
                            let shapes: Vec<Vec<usize>> =
                                params.iter().map(|p| p.shape().to_vec()).collect();
                            if shapes != StepDenoiser::param_shapes() {
                                return Err(CdnetError::Checkpoint(format!(
                                    "denoiser {} of chain {} has shapes {shapes:?}",
                                    step,
                                    kind.label()
                                )));
                            }
                            denoisers.push(StepDenoiser { step, params });
                        }
                        chains.push(ReverseChain { kind, denoisers });
                    }
                    ckpt.chains = Some(ChainSet::new(chains)?);
                }
                _ => return Err(bad(n, &format!("unexpected line {line:?}"))),
            }
        }
    }
}

fn bad(line: usize, detail: &str) -> CdnetError {
    CdnetError::Checkpoint(format!("line {}: {detail}", line + 1))
}

struct Reader<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Reader<'a> {
    fn next_line(&mut self) -> Result<(usize, &'a str)> {
        self.lines
            .next()
            .ok_or_else(|| CdnetError::Checkpoint("unexpected end of checkpoint".into()))
    }

    fn tensor(&mut self) -> Result<DiffTensor> {
        let (n, header) = self.next_line()?;
        let words: Vec<&str> = header.split_whitespace().collect();
        let [tag, _name, flag, shape] = words[..] else {
            return Err(bad(n, "expected `tensor <name> <trainable> <shape>`"));
        };
        if tag != "tensor" {
            return Err(bad(n, "expected a tensor header"));
        }
        let trainable = match flag {
            "0" => false,
            "1" => true,
            _ => return Err(bad(n, "trainable flag must be 0 or 1")),
        };
        let shape: Vec<usize> = shape
            .split(',')
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad(n, "bad tensor shape"))?;
        let (n, line) = self.next_line()?;
        let values: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad(n, "bad tensor value"))?;
        let mut t = DiffTensor::new(&shape, values).map_err(|e| bad(n, &e.to_string()))?;
        t.set_requires_grad(trainable);
        Ok(t)
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, ckpt.to_text()?).map_err(io_err(path))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    Checkpoint::from_text(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::build_small_cnn;
    use crate::rng;

    #[test]
    fn classifier_round_trip_is_exact() {
        let mut clf = build_small_cnn(10, 3, &mut rng::seeded(5)).unwrap();
        clf.set_body_frozen(true);
        let ckpt = Checkpoint {
            config: TrainConfig::default(),
            classifier: Some(clf.clone()),
            weights: Some(UncertaintyWeights::from_log_sigmas([0.1, -1.0 / 3.0, 2.5])),
            chains: None,
        };
        let back = Checkpoint::from_text(&ckpt.to_text().unwrap()).unwrap();
        assert_eq!(back.classifier.as_ref(), Some(&clf));
        assert_eq!(back.weights, ckpt.weights);
        assert_eq!(back.config, ckpt.config);
    }

    #[test]
    fn rejects_foreign_and_truncated_text() {
        assert!(Checkpoint::from_text("hello\n").is_err());
        let ckpt = Checkpoint {
            config: TrainConfig::default(),
            classifier: Some(build_small_cnn(10, 3, &mut rng::seeded(5)).unwrap()),
            weights: None,
            chains: None,
        };
        let text = ckpt.to_text().unwrap();
        let cut: String = text.lines().take(5).collect::<Vec<_>>().join("\n");
        assert!(Checkpoint::from_text(&cut).is_err());
    }
}
