use std::path::PathBuf;

use ctxagent::chainlang::{parse_chain, serialize_chain, validate_chain};
use ctxagent::dataset::Dataset;
use ctxagent::domain::{ArgExpr, ToolCall, ToolChain};
use ctxagent::toolset::{registry_default, ToolRegistry};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fixtures() -> Dataset {
    Dataset::load(&PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/samples.jsonl")).unwrap()
}

const LITERAL_CHARS: &[char] = &[
    'a', 'Z', '7', ' ', '"', '\\', '/', '\'', '{', '}', '[', ']', ',', ':', '.', '(', ')', '$', 'é', '中', '\n', '\t',
];

fn literal(rng: &mut ChaCha8Rng) -> String {
    let len = rng.random_range(0..12);
    (0..len).map(|_| *LITERAL_CHARS.choose(rng).unwrap()).collect()
}

/// A chain that validates clean: distinct known tools, every required
/// param present, references only to fields of earlier calls.
fn random_chain(rng: &mut ChaCha8Rng, registry: &ToolRegistry) -> ToolChain {
    let mut tools: Vec<_> = registry.iter().collect();
    tools.shuffle(rng);
    let len = rng.random_range(1..=5);
    let mut calls: Vec<ToolCall> = Vec::new();
    for desc in &tools[..len] {
        let mut call = ToolCall::new(&desc.name);
        let mut params: Vec<_> = desc
            .params
            .iter()
            .filter(|p| p.required || rng.random_bool(0.5))
            .collect();
        params.shuffle(rng);
        for p in params {
            let value = match calls.choose(rng) {
                Some(prev) if rng.random_bool(0.4) => {
                    let target = registry.lookup(&prev.name).unwrap();
                    ArgExpr::result_ref(&prev.name, target.output_fields.choose(rng).unwrap()).unwrap()
                }
                _ => ArgExpr::Literal(literal(rng)),
            };
            call = call.arg(&p.name, value);
        }
        calls.push(call);
    }
    ToolChain::new(calls)
}

#[test]
fn fixture_chains_round_trip() {
    let reg = registry_default();
    let ds = fixtures();
    assert_eq!(ds.len(), 5);
    for s in ds.samples() {
        let chain = s.annotation.chain();
        if chain.is_empty() {
            continue;
        }
        let text = serialize_chain(chain, &reg).unwrap();
        assert_eq!(&parse_chain(&text).unwrap(), chain, "{}", s.id);
    }
}

#[test]
fn random_valid_chains_round_trip() {
    let reg = registry_default();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut refs = 0;
    for i in 0..500 {
        let chain = random_chain(&mut rng, &reg);
        assert!(validate_chain(&chain, &reg).is_empty(), "chain {i} is not valid");
        assert!(chain.references_are_ordered());
        refs += chain.calls.iter().map(|c| c.references().count()).sum::<usize>();
        let text = serialize_chain(&chain, &reg).unwrap();
        assert_eq!(parse_chain(&text).unwrap(), chain, "chain {i}: {text}");
    }
    assert!(refs > 100, "generator should exercise references, got {refs}");
}
