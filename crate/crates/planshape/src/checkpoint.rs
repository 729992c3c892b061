//! Policy checkpoints: JSON with a format tag, version and table shape ahead
//! of the logits.

use std::path::Path;

use planshape_core::policy::N_CONTEXTS;
use planshape_core::trajectory::VOCAB_SIZE;
use planshape_core::PolicyParams;
use serde::{Deserialize, Serialize};

use crate::Error;

pub const FORMAT: &str = "planshape-policy";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub contexts: usize,
    pub vocab: usize,
    /// Training step the parameters were taken after; 0 for the init.
    pub step: usize,
    pub logits: Vec<f64>,
}

impl Checkpoint {
    pub fn new(step: usize, params: &PolicyParams) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            contexts: N_CONTEXTS,
            vocab: VOCAB_SIZE,
            step,
            logits: params.logits().to_vec(),
        }
    }

    /// Validates the header against this build and returns the table.
    pub fn into_params(self) -> Result<PolicyParams, String> {
        if self.format != FORMAT {
            return Err(format!("format {:?} is not {FORMAT:?}", self.format));
        }
        if self.version != VERSION {
            return Err(format!("checkpoint version {} is not supported (expected {VERSION})", self.version));
        }
        if (self.contexts, self.vocab) != (N_CONTEXTS, VOCAB_SIZE) {
            return Err(format!(
                "shape {}x{} does not match this policy ({N_CONTEXTS}x{VOCAB_SIZE})",
                self.contexts, self.vocab
            ));
        }
        if self.logits.len() != self.contexts * self.vocab {
            return Err(format!("header says {}x{} but {} logits follow", self.contexts, self.vocab, self.logits.len()));
        }
        PolicyParams::from_logits(self.logits).map_err(|e| e.to_string())
    }
}

pub fn save(path: &Path, step: usize, params: &PolicyParams) -> Result<(), Error> {
    let mut text = serde_json::to_string(&Checkpoint::new(step, params)).expect("checkpoint serializes");
    text.push('\n');
    crate::write_file(path, text.as_bytes())
}

/// Loads a checkpoint, returning the step it was taken at and the table.
pub fn load(path: &Path) -> Result<(usize, PolicyParams), Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::data(path, format!("not a checkpoint: {e}")))?;
    let step = ck.step;
    let params = ck.into_params().map_err(|m| Error::data(path, m))?;
    Ok((step, params))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_bit_exact() {
        let p = PolicyParams::init(9, 0.7).unwrap();
        let ck: Checkpoint = serde_json::from_str(&serde_json::to_string(&Checkpoint::new(4, &p)).unwrap()).unwrap();
        assert_eq!(ck.step, 4);
        let back = ck.into_params().unwrap();
        assert!(back.logits().iter().zip(p.logits()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn rejects_shape_mismatch() {
        let p = PolicyParams::zeros();
        let mut ck = Checkpoint::new(0, &p);
        ck.vocab += 1;
        assert!(ck.clone().into_params().unwrap_err().contains("shape"));
        ck.vocab -= 1;
        ck.logits.pop();
        assert!(ck.into_params().is_err());
    }

    #[test]
    fn rejects_foreign_headers() {
        let p = PolicyParams::zeros();
        let ck = Checkpoint { version: 2, ..Checkpoint::new(0, &p) };
        assert!(ck.into_params().is_err());
        let ck = Checkpoint { format: "other".into(), ..Checkpoint::new(0, &p) };
        assert!(ck.into_params().is_err());
    }
}
