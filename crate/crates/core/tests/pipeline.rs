use fecanet_core::io::fixtures::synthetic_episodes;
use fecanet_core::pipeline::{forward_episode, train};
use fecanet_core::{evaluate, Adam, Episode, FecaModel, KShotConfig, MemoryBank, ModelConfig};

fn duplicated(eps: &[Episode]) -> Vec<Episode> {
    eps.iter()
        .map(|e| {
            let mut d = e.clone();
            d.supports.push(e.supports[0].clone());
            d
        })
        .collect()
}

#[test]
fn duplicate_support_matches_single_shot_without_bank() {
    let mut cfg = ModelConfig::default();
    cfg.ablation.bank = false;
    let model = FecaModel::new(cfg, 3).unwrap();
    let eps = synthetic_episodes(2, 24, 1, 3);
    let one = evaluate(&mut &model, &eps, &KShotConfig::default()).unwrap();
    let two = evaluate(&mut &model, &duplicated(&eps), &KShotConfig::new(2, 0.5).unwrap()).unwrap();
    assert_eq!(one, two);
}

#[test]
fn second_pass_reads_the_stored_map() {
    let model = FecaModel::new(ModelConfig::default(), 4).unwrap();
    let ep = synthetic_episodes(1, 24, 1, 4).remove(0);
    let mut bank = MemoryBank::new();
    let first = forward_episode(&model, &ep, &mut bank).unwrap();
    assert_eq!(bank.len(), 1);
    let second = forward_episode(&model, &ep, &mut bank).unwrap();
    assert_ne!(first.probs, second.probs);
    let again = forward_episode(&model, &ep, &mut MemoryBank::new()).unwrap();
    assert_eq!(first.probs, again.probs);
}

#[test]
fn training_is_deterministic() {
    let eps = synthetic_episodes(2, 24, 1, 5);
    let run = || {
        let mut model = FecaModel::new(ModelConfig::default(), 5).unwrap();
        let mut adam = Adam::new(&model.params, 1e-3);
        let mut bank = MemoryBank::new();
        let losses = train(&mut model, &eps, 3, 2, &mut adam, &mut bank).unwrap();
        (losses, model.params, bank)
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    assert_eq!(a.2, b.2);
}

#[test]
fn training_lowers_the_loss() {
    let eps = synthetic_episodes(2, 24, 1, 6);
    let mut model = FecaModel::new(ModelConfig::default(), 6).unwrap();
    let mut adam = Adam::new(&model.params, 1e-3);
    let losses = train(&mut model, &eps, 30, 2, &mut adam, &mut MemoryBank::new()).unwrap();
    assert!(losses[29] < losses[0], "{losses:?}");
}
