//! Sweep mean degeneracy of value-steered vs key-steered reads across
//! alphas and layer ranges. Useful for picking operating points: the two
//! channels separate differently in different regimes, and the key channel
//! never tracks the value channel.

use kvpack::model::{Model, ModelConfig, TemplateSet};
use kvpack::pipeline::{build_pack, query_with_pack, BuildRequest};
use kvpack::steering::{apply_delta, apply_delta_keys, build_delta, LayerRange};

fn main() {
    let model = Model::new(ModelConfig::default()).unwrap();
    let templates = TemplateSet::builtin();

    let good: Vec<String> = (0..4)
        .map(|i| format!("always validate input {i} and check every return code carefully"))
        .collect();
    let bad: Vec<String> = (0..4)
        .map(|i| format!("just grab input {i} and assume every return code is fine"))
        .collect();
    let delta = build_delta(&good, &bad, "chatml", &model, &templates).unwrap();
    println!("delta len {} layers {:?}", delta.len(), delta.layers());

    let pack = build_pack(
        &BuildRequest::templated(
            vec![
                "the relay station sits on pier seven".to_string(),
                "the harbor master keeps the spare key".to_string(),
            ],
            "chatml",
        ),
        &model,
        &templates,
    )
    .unwrap();

    let prompts: Vec<String> = (0..20)
        .map(|i| format!("question number {i}: who keeps the spare key for pier {}?", i % 9))
        .collect();

    for alpha in [0.5f32, 1.0, 2.0, 4.0, 8.0, 16.0] {
        for range in [
            LayerRange::All,
            LayerRange::Early,
            LayerRange::Mid,
            LayerRange::Late,
        ] {
            let mut v_sum = 0.0;
            let mut k_sum = 0.0;
            for q in &prompts {
                let vc = apply_delta(&pack.cache, &delta, alpha, &range).unwrap();
                let vo = query_with_pack(&pack.with_cache(vc), q, 64, &model, &templates).unwrap();
                v_sum += vo.degeneracy;
                let kc = apply_delta_keys(&pack.cache, &delta, alpha, &range).unwrap();
                let ko = query_with_pack(&pack.with_cache(kc), q, 64, &model, &templates).unwrap();
                k_sum += ko.degeneracy;
            }
            let n = prompts.len() as f64;
            println!(
                "alpha {alpha:>5} range {range:>5}: value {:.3}  keys {:.3}  gap {:+.3}",
                v_sum / n,
                k_sum / n,
                v_sum / n - k_sum / n
            );
        }
    }
}
