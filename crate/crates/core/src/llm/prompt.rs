use serde::{Deserialize, Serialize};

use super::parse::{render_tokens, ChainToken};
use crate::domain::{NodeKind, ReasoningChain};
use crate::error::{Error, Result};

pub const TEMPLATE_VERSION: &str = "v1";
pub const MASK_TOKEN: &str = "[Mask]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    ChainReasoning,
    DivergentExtension,
    AbductiveFill,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::ChainReasoning => "chain_reasoning",
            TaskKind::DivergentExtension => "divergent_extension",
            TaskKind::AbductiveFill => "abductive_fill",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemView {
    pub title: String,
    pub attributes: Vec<String>,
}

/// A chain as the model sees it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainView {
    pub id: String,
    pub tokens: Vec<ChainToken>,
    pub relations: Vec<String>,
}

impl ChainView {
    pub fn from_chain(chain: &ReasoningChain) -> Self {
        let last = chain.nodes.len() - 1;
        let tokens = chain
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| match n.kind {
                NodeKind::Item if i == last => ChainToken::Target(n.label.clone()),
                NodeKind::Item => ChainToken::Item(n.label.clone()),
                NodeKind::Attribute => ChainToken::Attr(n.label.clone()),
                NodeKind::Concept => ChainToken::Concept(n.label.clone()),
            })
            .collect();
        ChainView {
            id: chain.id.clone(),
            tokens,
            relations: chain.relations.clone(),
        }
    }

    /// Replaces token `pos` (0-based) with the mask.
    pub fn masked(&self, pos: usize) -> Self {
        let mut out = self.clone();
        out.tokens[pos] = ChainToken::Mask;
        out
    }

    pub fn mask_count(&self) -> usize {
        self.tokens.iter().filter(|t| matches!(t, ChainToken::Mask)).count()
    }

    #[cfg(test)]
    pub(crate) fn test_fixture() -> Self {
        ChainView {
            id: "c0".into(),
            tokens: vec![
                ChainToken::Attr("sci-fi".into()),
                ChainToken::Concept("space opera".into()),
                ChainToken::Target("star wars".into()),
            ],
            relations: vec!["leads to".into(), "leads to".into()],
        }
    }
}

/// Inputs for a prompt. Which fields are required depends on the task.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PayloadFields {
    pub next_item: Option<ItemView>,
    pub existing_chains: Option<Vec<ChainView>>,
    pub user_attributes: Option<Vec<String>>,
    pub max_chains: Option<usize>,
    pub chain: Option<ChainView>,
    pub k: Option<usize>,
    pub masked_chain: Option<ChainView>,
    /// Kind of the masked node.
    pub masked_kind: Option<NodeKind>,
    /// The element behind the mask. Never rendered; oracle backends may read it.
    pub held_out: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub task_kind: TaskKind,
    pub task_description: String,
    pub example_input: String,
    pub example_output: String,
    pub payload: String,
    pub fields: PayloadFields,
}

impl Prompt {
    /// Description, example input, example output, then the payload.
    pub fn render(&self) -> String {
        format!(
            "{}\n\nExample input:\n{}\n\nExample output:\n{}\n\nInput:\n{}\n\nOutput:\n",
            self.task_description, self.example_input, self.example_output, self.payload
        )
    }
}

const CHAIN_DESCRIPTION: &str = "You are reasoning about why a user engages with items. \
Given the next item the user interacted with, the reasoning chains built so far and the \
user's attributes, write new reasoning chains that could logically motivate the user to take \
the next item. A chain may extend an existing chain (write its id in parentheses after CHAIN) \
or start a new one. Write one chain per line as: CHAIN(optional id): node -> node -> TARGET[item]. \
Mark items as ITEM[title] and attributes as ATTR[name]; other nodes are free-text concepts.";

const CHAIN_EXAMPLE_INPUT: &str = "Next item: ITEM[blade runner]
Item attributes: sci-fi; thriller
User attributes: sci-fi
Existing chains:
CHAIN(c0): ATTR[sci-fi] -> space opera -> TARGET[star wars]
Write at most 2 chains.";

const CHAIN_EXAMPLE_OUTPUT: &str = "CHAIN(c0): ITEM[star wars] -> ATTR[sci-fi] -> philosophical sci-fi -> TARGET[blade runner]
CHAIN: ATTR[thriller] -> noir atmosphere -> TARGET[blade runner]";

const DIVERGE_DESCRIPTION: &str = "You extend a user's reasoning chain beyond the last known \
item. Imagine plausible continuations and list distinct items the user is likely to engage \
with next, one per line as ITEM[title].";

const DIVERGE_EXAMPLE_INPUT: &str = "Chain: CHAIN(c0): ATTR[sci-fi] -> philosophical sci-fi -> TARGET[blade runner]
List at most 2 items.";

const DIVERGE_EXAMPLE_OUTPUT: &str = "ITEM[ghost in the shell]
ITEM[gattaca]";

const FILL_DESCRIPTION: &str = "One element of the reasoning chain below is hidden behind \
[Mask]. Fill in the most reasonable item or attribute so the chain flows logically. Answer \
with exactly one line as FILL[answer].";

const FILL_EXAMPLE_INPUT: &str = "Masked chain: ATTR[sci-fi] -> space opera -> [Mask]
The mask hides an item.";

const FILL_EXAMPLE_OUTPUT: &str = "FILL[star wars]";

fn required<T: Clone>(task: TaskKind, field: &'static str, v: &Option<T>) -> Result<T> {
    v.clone().ok_or(Error::MissingField {
        task: task.as_str(),
        field,
    })
}

fn stable_order(chains: &[ChainView]) -> Vec<&ChainView> {
    let mut v: Vec<&ChainView> = chains.iter().collect();
    v.sort_by(|a, b| a.id.len().cmp(&b.id.len()).then_with(|| a.id.cmp(&b.id)));
    v
}

/// Deterministic prompt text for a task.
pub fn build_prompt(task_kind: TaskKind, fields: PayloadFields) -> Result<Prompt> {
    let (description, example_in, example_out, payload) = match task_kind {
        TaskKind::ChainReasoning => {
            let item = required(task_kind, "next_item", &fields.next_item)?;
            let chains = required(task_kind, "existing_chains", &fields.existing_chains)?;
            let attrs = required(task_kind, "user_attributes", &fields.user_attributes)?;
            let max = fields.max_chains.unwrap_or(3);
            let mut p = format!("Next item: ITEM[{}]\n", item.title);
            p.push_str(&format!("Item attributes: {}\n", join_or_none(&item.attributes)));
            p.push_str(&format!("User attributes: {}\n", join_or_none(&attrs)));
            if chains.is_empty() {
                p.push_str("Existing chains: none (no existing chains)\n");
            } else {
                p.push_str("Existing chains:\n");
                for c in stable_order(&chains) {
                    p.push_str(&render_tokens(Some(&c.id), &c.tokens, &c.relations));
                    p.push('\n');
                }
            }
            p.push_str(&format!("Write at most {max} chains."));
            (CHAIN_DESCRIPTION, CHAIN_EXAMPLE_INPUT, CHAIN_EXAMPLE_OUTPUT, p)
        }
        TaskKind::DivergentExtension => {
            let chain = required(task_kind, "chain", &fields.chain)?;
            let k = required(task_kind, "k", &fields.k)?;
            let p = format!(
                "Chain: {}\nList at most {k} items.",
                render_tokens(Some(&chain.id), &chain.tokens, &chain.relations)
            );
            (DIVERGE_DESCRIPTION, DIVERGE_EXAMPLE_INPUT, DIVERGE_EXAMPLE_OUTPUT, p)
        }
        TaskKind::AbductiveFill => {
            let masked = required(task_kind, "masked_chain", &fields.masked_chain)?;
            if masked.mask_count() != 1 {
                return Err(Error::invalid(format!(
                    "masked chain must contain exactly one {MASK_TOKEN}"
                )));
            }
            let body = render_tokens(None, &masked.tokens, &masked.relations);
            let body = body.trim_start_matches("CHAIN: ");
            let kind = match fields.masked_kind {
                Some(NodeKind::Attribute) => "an attribute",
                Some(NodeKind::Item) => "an item",
                _ => "an item or attribute",
            };
            let p = format!("Masked chain: {body}\nThe mask hides {kind}.");
            (FILL_DESCRIPTION, FILL_EXAMPLE_INPUT, FILL_EXAMPLE_OUTPUT, p)
        }
    };
    Ok(Prompt {
        task_kind,
        task_description: description.to_string(),
        example_input: example_in.to_string(),
        example_output: example_out.to_string(),
        payload,
        fields,
    })
}

fn join_or_none(v: &[String]) -> String {
    if v.is_empty() {
        "none".to_string()
    } else {
        v.join("; ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item() -> ItemView {
        ItemView {
            title: "star wars".into(),
            attributes: vec!["sci-fi".into()],
        }
    }

    #[test]
    fn empty_chain_list_has_marker() {
        let p = build_prompt(
            TaskKind::ChainReasoning,
            PayloadFields {
                next_item: Some(item()),
                existing_chains: Some(vec![]),
                user_attributes: Some(vec![]),
                ..Default::default()
            },
        )
        .unwrap();
        assert!(p.payload.contains("no existing chains"));
        let text = p.render();
        let d = text.find(&p.task_description).unwrap();
        let i = text.find(&p.example_input).unwrap();
        let o = text.find(&p.example_output).unwrap();
        let pl = text.rfind(&p.payload).unwrap();
        assert!(d < i && i < o && o < pl);
    }

    #[test]
    fn identical_inputs_give_identical_bytes_and_stable_chain_order() {
        let mut c2 = ChainView::test_fixture();
        c2.id = "c10".into();
        let mut c1 = ChainView::test_fixture();
        c1.id = "c2".into();
        let fields = |chains: Vec<ChainView>| PayloadFields {
            next_item: Some(item()),
            existing_chains: Some(chains),
            user_attributes: Some(vec!["sci-fi".into()]),
            ..Default::default()
        };
        let a = build_prompt(TaskKind::ChainReasoning, fields(vec![c2.clone(), c1.clone()])).unwrap();
        let b = build_prompt(TaskKind::ChainReasoning, fields(vec![c1, c2])).unwrap();
        assert_eq!(a.render(), b.render());
        assert!(a.payload.find("CHAIN(c2)").unwrap() < a.payload.find("CHAIN(c10)").unwrap());
    }

    #[test]
    fn missing_field_is_named() {
        let err = build_prompt(
            TaskKind::ChainReasoning,
            PayloadFields {
                next_item: Some(item()),
                user_attributes: Some(vec![]),
                ..Default::default()
            },
        )
        .unwrap_err();
        assert!(err.to_string().contains("existing_chains"));
        let err = build_prompt(TaskKind::DivergentExtension, PayloadFields::default()).unwrap_err();
        assert!(err.to_string().contains("chain"));
    }

    #[test]
    fn abductive_payload_shows_mask_at_position_two() {
        let view = ChainView {
            id: "c0".into(),
            tokens: vec![
                ChainToken::Attr("sci-fi".into()),
                ChainToken::Item("alien".into()),
                ChainToken::Concept("space horror".into()),
                ChainToken::Target("aliens".into()),
            ],
            relations: vec!["leads to".into(); 3],
        };
        let p = build_prompt(
            TaskKind::AbductiveFill,
            PayloadFields {
                masked_chain: Some(view.masked(1)),
                masked_kind: Some(NodeKind::Item),
                held_out: Some("alien".into()),
                ..Default::default()
            },
        )
        .unwrap();
        let line = p.payload.lines().next().unwrap();
        let parts: Vec<&str> = line.trim_start_matches("Masked chain: ").split(" -> ").collect();
        assert_eq!(parts, vec!["ATTR[sci-fi]", "[Mask]", "space horror", "TARGET[aliens]"]);
        assert!(!p.render().contains("ITEM[alien]"));
        let err = build_prompt(
            TaskKind::AbductiveFill,
            PayloadFields {
                masked_chain: Some(view),
                ..Default::default()
            },
        );
        assert!(err.is_err());
    }
}
