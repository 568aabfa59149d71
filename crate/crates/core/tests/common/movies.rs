use std::collections::BTreeMap;

use llmrg::config::GraphConfig;
use llmrg::domain::{Catalog, Item, ItemId};
use llmrg::ground::CatalogIndex;
use llmrg::kbase::KnowledgeBase;
use llmrg::llm::{BackendConfig, KnowledgeEntry, KnowledgeTable, LlmClient, MockOracleConfig};
use llmrg::pipeline::Services;
use llmrg::reason::TitleIndex;
use llmrg::verify::Verifier;

/// Seven films; sci-fi titles are listed in series order.
pub fn catalog() -> Catalog {
    let items = [
        ("m1", "Star Wars", &["sci-fi"][..]),
        ("m2", "Alien", &["sci-fi", "horror"][..]),
        ("m3", "Blade Runner", &["sci-fi"][..]),
        ("m4", "Gattaca", &["sci-fi"][..]),
        ("m5", "Heat", &["crime"][..]),
        ("m6", "Rocky", &["drama"][..]),
        ("m7", "The Shining", &["horror"][..]),
    ]
    .into_iter()
    .map(|(id, title, attrs)| Item::new(ItemId::from(id), title, attrs.iter().map(|a| a.to_string())).unwrap())
    .collect();
    Catalog::new(items).unwrap()
}

pub fn knowledge() -> KnowledgeTable {
    let entry = |concepts: &[&str], items: &[&str]| KnowledgeEntry {
        concepts: concepts.iter().map(|s| s.to_string()).collect(),
        items: items.iter().map(|s| s.to_string()).collect(),
    };
    let mut attributes = BTreeMap::new();
    attributes.insert("sci-fi".to_string(), entry(&["space opera"], &["star wars", "alien", "blade runner", "gattaca"]));
    attributes.insert("horror".to_string(), entry(&["dread"], &["alien", "the shining"]));
    attributes.insert("crime".to_string(), entry(&["heists"], &["heat"]));
    attributes.insert("drama".to_string(), entry(&["underdogs"], &["rocky"]));
    KnowledgeTable { attributes }
}

pub fn services(catalog: &Catalog, table: KnowledgeTable, fidelity: f64, noise_rate: f64, tau: u32) -> Services {
    let oracle = MockOracleConfig {
        knowledge: table,
        fidelity,
        noise_rate,
        seed: 11,
    };
    Services {
        index: CatalogIndex::from_catalog(catalog),
        titles: TitleIndex::new(catalog),
        client: LlmClient::from_config(&BackendConfig::default(), Some(oracle)).unwrap(),
        kbase: KnowledgeBase::new(10_000),
        verifier: Verifier::new(tau, 5).unwrap(),
        pool: None,
    }
}

pub fn graph_config(tau: u32) -> GraphConfig {
    GraphConfig {
        tau,
        theta_sim: 0.5,
        ..GraphConfig::default()
    }
}

pub fn ids(raw: &[&str]) -> Vec<ItemId> {
    raw.iter().map(|s| ItemId::from(*s)).collect()
}
