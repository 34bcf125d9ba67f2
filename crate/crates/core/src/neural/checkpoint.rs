//! Text weight dump with a shape header. Values are written as the hex of
//! their IEEE-754 bits, so a save/load round trip is bit-exact.
//!
//! ```text
//! prmgui-mlp 1
//! activation tanh
//! sizes 12 64 64 2
//! meta featurizer feat-v1
//! params 5122
//! 3fb999999999999a
//! ...
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use super::{Activation, Mlp, NeuralError};

const MAGIC: &str = "prmgui-mlp";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub mlp: Mlp,
    pub meta: BTreeMap<String, String>,
}

fn bad(msg: impl Into<String>) -> NeuralError {
    NeuralError::BadCheckpoint(msg.into())
}

impl Checkpoint {
    pub fn new(mlp: Mlp) -> Self {
        Self { mlp, meta: BTreeMap::new() }
    }

    pub fn with_meta(mut self, key: &str, value: &str) -> Self {
        self.meta.insert(key.to_string(), value.to_string());
        self
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{MAGIC} {FORMAT_VERSION}\nactivation {}\nsizes", self.mlp.activation().name());
        for s in self.mlp.sizes() {
            out.push_str(&format!(" {s}"));
        }
        out.push('\n');
        for (k, v) in &self.meta {
            out.push_str(&format!("meta {k} {v}\n"));
        }
        out.push_str(&format!("params {}\n", self.mlp.num_params()));
        for p in self.mlp.params() {
            out.push_str(&format!("{:016x}\n", p.to_bits()));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, NeuralError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty checkpoint"))?;
        match header.split_once(' ') {
            Some((MAGIC, v)) if v.trim() == FORMAT_VERSION.to_string() => {}
            _ => return Err(bad(format!("unrecognized header '{header}'"))),
        }
        let mut activation = None;
        let mut sizes = None;
        let mut meta = BTreeMap::new();
        let count: usize = loop {
            let line = lines.next().ok_or_else(|| bad("missing params section"))?;
            let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
            match key {
                "activation" => {
                    activation = Some(Activation::from_name(rest.trim()).ok_or_else(|| bad(format!("activation '{rest}'")))?)
                }
                "sizes" => {
                    sizes = Some(
                        rest.split_whitespace()
                            .map(|s| s.parse::<usize>().map_err(|_| bad(format!("size '{s}'"))))
                            .collect::<Result<Vec<_>, _>>()?,
                    )
                }
                "meta" => {
                    let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                    meta.insert(k.to_string(), v.to_string());
                }
                "params" => break rest.trim().parse().map_err(|_| bad("params count"))?,
                _ => return Err(bad(format!("unknown header line '{line}'"))),
            }
        };
        let params = lines
            .by_ref()
            .take(count)
            .map(|l| u64::from_str_radix(l.trim(), 16).map(f64::from_bits).map_err(|_| bad(format!("value '{l}'"))))
            .collect::<Result<Vec<_>, _>>()?;
        if params.len() != count {
            return Err(bad(format!("expected {count} values, found {}", params.len())));
        }
        let mlp = Mlp::from_parts(
            sizes.ok_or_else(|| bad("missing sizes"))?,
            activation.ok_or_else(|| bad("missing activation"))?,
            params,
        )?;
        Ok(Self { mlp, meta })
    }

    pub fn save(&self, path: &Path) -> Result<(), NeuralError> {
        std::fs::write(path, self.to_text()).map_err(|e| bad(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, NeuralError> {
        let text = std::fs::read_to_string(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        Self::from_text(&text)
    }
}
