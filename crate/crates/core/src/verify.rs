//! Self-verification: mask one item or attribute node, ask the model to fill
//! it back in, and score the reconstruction.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{canonicalize_label, ChainNode, NodeKind, ReasoningChain};
use crate::error::{Error, Result};
use crate::ground::{Grounder, LexicalScorer};
use crate::kbase::{CallKind, KnowledgeBase};
use crate::llm::{build_prompt, parse_fill, ChainView, LlmClient, PayloadFields, TaskKind};

/// A chain with exactly one node replaced by the mask token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedChain {
    pub view: ChainView,
    pub position: usize,
    pub kind: NodeKind,
}

impl MaskedChain {
    /// Puts `original` back at the masked position.
    pub fn unmask(&self, original: &ChainNode) -> ChainView {
        let mut view = self.view.clone();
        let last = view.tokens.len() - 1;
        view.tokens[self.position] = match original.kind {
            NodeKind::Item if self.position == last => crate::llm::ChainToken::Target(original.label.clone()),
            NodeKind::Item => crate::llm::ChainToken::Item(original.label.clone()),
            NodeKind::Attribute => crate::llm::ChainToken::Attr(original.label.clone()),
            NodeKind::Concept => crate::llm::ChainToken::Concept(original.label.clone()),
        };
        view
    }
}

pub fn maskable_positions(chain: &ReasoningChain) -> Vec<usize> {
    chain
        .nodes
        .iter()
        .enumerate()
        .filter(|(_, n)| n.is_maskable())
        .map(|(i, _)| i)
        .collect()
}

/// Masks one uniformly chosen item or attribute node. `None` when the chain
/// has no such node.
pub fn mask_chain<R: Rng + ?Sized>(chain: &ReasoningChain, rng: &mut R) -> Option<(MaskedChain, ChainNode)> {
    let positions = maskable_positions(chain);
    if positions.is_empty() {
        return None;
    }
    let position = positions[rng.random_range(0..positions.len())];
    let original = chain.nodes[position].clone();
    let view = ChainView::from_chain(chain).masked(position);
    Some((
        MaskedChain {
            view,
            position,
            kind: original.kind,
        },
        original,
    ))
}

/// Asks the model for the masked element. `held_out` is handed to oracle
/// backends only; it never appears in the prompt text.
pub fn abduce(masked: &MaskedChain, held_out: &str, client: &LlmClient) -> Result<Option<String>> {
    let prompt = build_prompt(
        TaskKind::AbductiveFill,
        PayloadFields {
            masked_chain: Some(masked.view.clone()),
            masked_kind: Some(masked.kind),
            held_out: Some(held_out.to_string()),
            ..Default::default()
        },
    )?;
    let raw = client.complete(&prompt)?;
    Ok(parse_fill(&raw.text))
}

/// `round(100 * similarity)`, with exact equality forced to 100.
pub fn score_match(prediction: &str, original: &str, grounder: &dyn Grounder) -> u8 {
    if prediction == original {
        return 100;
    }
    let s = grounder.similarity(prediction, original).clamp(0.0, 1.0);
    (100.0 * s).round() as u8
}

/// Splits chains into (retained, rejected) by `score >= tau`. Unscored chains
/// are rejected.
pub fn filter_chains(chains: Vec<ReasoningChain>, tau: u32) -> (Vec<ReasoningChain>, Vec<ReasoningChain>) {
    chains
        .into_iter()
        .partition(|c| c.score.is_some_and(|s| u32::from(s) >= tau))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verification {
    pub score: u8,
    /// Index of the masked node; `None` when nothing was maskable.
    pub masked_position: Option<usize>,
    pub masked_label: Option<String>,
    pub prediction: Option<String>,
}

/// Line of the rejected-chain audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub user: String,
    pub chain_id: String,
    pub score: u8,
    pub tau: u32,
    pub masked_node: Option<String>,
    pub prediction: Option<String>,
}

/// Verification with a fixed scorer, per-chain seeded masking and an optional
/// audit log of rejected chains.
pub struct Verifier {
    tau: u32,
    seed: u64,
    scorer: Box<dyn Grounder>,
    audit: Option<(PathBuf, Mutex<File>)>,
}

impl Verifier {
    /// Uses a plain character-trigram count cosine for scoring.
    pub fn new(tau: u32, seed: u64) -> Result<Self> {
        if tau > 101 {
            return Err(Error::invalid(format!("tau {tau} outside 0..=101")));
        }
        Ok(Verifier {
            tau,
            seed,
            scorer: Box::new(LexicalScorer::counts()),
            audit: None,
        })
    }

    pub fn with_scorer(mut self, scorer: Box<dyn Grounder>) -> Self {
        self.scorer = scorer;
        self
    }

    pub fn with_audit_log(mut self, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        self.audit = Some((path, Mutex::new(file)));
        Ok(self)
    }

    pub fn tau(&self) -> u32 {
        self.tau
    }

    fn rng_for(&self, chain: &ReasoningChain) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(chain.signature().0);
        ChaCha8Rng::from_seed(h.finalize().into())
    }

    /// Scores one chain. Records the fill call against the current kbase step.
    pub fn verify(&self, chain: &ReasoningChain, client: &LlmClient, kbase: Option<&KnowledgeBase>) -> Result<Verification> {
        let mut rng = self.rng_for(chain);
        let Some((masked, original)) = mask_chain(chain, &mut rng) else {
            return Ok(Verification {
                score: 0,
                masked_position: None,
                masked_label: None,
                prediction: None,
            });
        };
        if let Some(kb) = kbase {
            kb.record_call(CallKind::Verification);
        }
        let prediction = abduce(&masked, &original.label, client)?;
        let score = match &prediction {
            Some(p) => match canonicalize_label(p) {
                Ok(p) => score_match(&p, &original.label, self.scorer.as_ref()),
                Err(_) => 0,
            },
            None => 0,
        };
        Ok(Verification {
            score,
            masked_position: Some(masked.position),
            masked_label: Some(original.label),
            prediction,
        })
    }

    pub fn passes(&self, score: u8) -> bool {
        u32::from(score) >= self.tau
    }

    /// Appends an audit line for a chain that failed the threshold.
    pub fn record_rejection(&self, user: &str, chain: &ReasoningChain, v: &Verification) -> Result<()> {
        let Some((path, file)) = &self.audit else {
            return Ok(());
        };
        let rec = AuditRecord {
            user: user.to_string(),
            chain_id: chain.id.clone(),
            score: v.score,
            tau: self.tau,
            masked_node: v.masked_label.clone(),
            prediction: v.prediction.clone(),
        };
        let mut line = serde_json::to_string(&rec)?;
        line.push('\n');
        file.lock()
            .expect("audit lock")
            .write_all(line.as_bytes())
            .map_err(|e| Error::io(path, e))
    }
}
