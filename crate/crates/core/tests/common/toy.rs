use llmrg::domain::{Catalog, ChainNode, ChainOrigin, Item, ItemId, ReasoningChain, ReasoningGraph};
use llmrg::encode::{Anchor, GraphInput};
use llmrg::recommend::Example;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn toy_catalog(n: usize) -> Catalog {
    let items = (0..n)
        .map(|i| Item::new(ItemId::new(format!("i{i:02}")), &format!("title {i}"), vec![format!("a{}", i % 4)]).unwrap())
        .collect();
    Catalog::new(items).unwrap()
}

/// A random graph of short chains over a few attributes, concepts and items.
pub fn random_graph(rng: &mut ChaCha8Rng, catalog: &Catalog, n_chains: usize, origin: ChainOrigin) -> ReasoningGraph {
    let mut g = ReasoningGraph::new();
    let item_node = |rng: &mut ChaCha8Rng| {
        let it = catalog.item_at(rng.random_range(0..catalog.len()));
        ChainNode::item(&it.title, it.id.clone()).unwrap()
    };
    for c in 0..n_chains {
        let len = rng.random_range(2..=4);
        let mut nodes = Vec::with_capacity(len);
        for _ in 0..len - 1 {
            nodes.push(match rng.random_range(0..3) {
                0 => ChainNode::attribute(&format!("a{}", rng.random_range(0..4))).unwrap(),
                1 => ChainNode::concept(&format!("c{}", rng.random_range(0..4))).unwrap(),
                _ => item_node(rng),
            });
        }
        let last = item_node(rng);
        let target = last.item_ref.clone().unwrap();
        nodes.push(last);
        let chain = ReasoningChain::new(format!("c{c}"), nodes, target, origin)
            .unwrap()
            .with_score(rng.random_range(0..=100));
        g.insert_chain(chain).unwrap();
    }
    g
}

/// `n_users` examples with random inputs of length 1..=max_len and random graphs.
pub fn random_examples(rng: &mut ChaCha8Rng, catalog: &Catalog, n_users: usize, max_len: usize, buckets: usize) -> Vec<Example> {
    (0..n_users)
        .map(|_| {
            let len = rng.random_range(1..=max_len);
            let items: Vec<usize> = (0..len).map(|_| rng.random_range(0..catalog.len())).collect();
            let last = catalog.item_at(*items.last().unwrap()).id.clone();
            let ori_chains = rng.random_range(1..=4);
            let g_ori = random_graph(rng, catalog, ori_chains, ChainOrigin::Observed);
            let div_chains = rng.random_range(0..=3);
            let g_div = random_graph(rng, catalog, div_chains, ChainOrigin::Divergent);
            Example {
                items,
                ori: GraphInput::new(&g_ori, catalog, Anchor::Item(Some(last)), buckets),
                div: GraphInput::new(&g_div, catalog, Anchor::TopTerminal, buckets),
                target: rng.random_range(0..catalog.len()),
            }
        })
        .collect()
}
