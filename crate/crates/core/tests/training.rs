use graphwords::decoder::Sampling;
use graphwords::genlab::{spearman, valid_canonical};
use graphwords::training::{
    desk_corpus, linear_probe, ConditionStats, Corpus, Model, ModelConfig, ProbeTask, StepReport, TrainConfig,
    Trainer,
};
use graphwords::vocab::{build_bond_dict, Condition, Vocabulary};

fn train(
    graphs: &[graphwords::chem::MolecularGraph],
    model_cfg: ModelConfig,
    cfg: TrainConfig,
) -> (Model, Corpus, Vec<StepReport>) {
    let vocab = Vocabulary::new(build_bond_dict(graphs, usize::MAX).unwrap());
    let mut model = Model::new(model_cfg, vocab, cfg.seed).unwrap();
    if cfg.conditional {
        model = model.with_conditions(ConditionStats::from_graphs(graphs));
    }
    let corpus = Corpus::build(graphs, &model, cfg.conditional);
    let mut trainer = Trainer::new(model, cfg).unwrap();
    let mut log = Vec::new();
    trainer.run(&corpus, |r| log.push(*r)).unwrap();
    (trainer.model, corpus, log)
}

#[test]
fn ten_molecule_loss_drops_by_four_fifths_in_200_steps() {
    let graphs = desk_corpus(5, 10, 8);
    let cfg = TrainConfig {
        batch_size: 10,
        steps: 200,
        warmup: 10,
        lr_max: 1e-3,
        lr_min: 5e-5,
        ..TrainConfig::default()
    };
    let (_, corpus, log) = train(&graphs, ModelConfig::default(), cfg);
    assert_eq!(corpus.len(), 10);
    assert_eq!(log.len(), 200);
    let first = log[0].total;
    let last = log[199].total;
    assert!(last <= 0.2 * first, "loss {first} -> {last}");
    assert!(log.iter().all(|r| r.total.is_finite()));
}

#[test]
fn probe_on_trained_words() {
    let graphs = desk_corpus(6, 300, 12);
    let cfg = TrainConfig {
        batch_size: 32,
        steps: 300,
        warmup: 20,
        ..TrainConfig::default()
    };
    let model_cfg = ModelConfig {
        hidden: 32,
        slot_dim: 32,
        slots: 16,
        max_blocks: 17,
        ..ModelConfig::default()
    };
    let (model, corpus, _) = train(&graphs, model_cfg, cfg);
    let features: Vec<Vec<f64>> = corpus
        .examples
        .iter()
        .map(|ex| {
            let w = model.encode_seq(&ex.seq, &model.identity_perm()).unwrap();
            w.data().iter().map(|&x| x as f64).collect()
        })
        .collect();
    let mut counts: Vec<usize> = corpus.examples.iter().map(|ex| ex.graph.atom_count()).collect();
    let labels: Vec<usize> = {
        let mut sorted = counts.clone();
        sorted.sort_unstable();
        let median = sorted[sorted.len() / 2];
        counts.iter().map(|&n| usize::from(n > median)).collect()
    };
    let r = linear_probe(&features, &ProbeTask::Classification(labels), 300, 1).unwrap();
    assert!(r.metric > 0.8, "threshold probe accuracy {}", r.metric);

    // regression on the atom count itself
    let target: Vec<f64> = counts.drain(..).map(|n| n as f64).collect();
    let r = linear_probe(&features, &ProbeTask::Regression(target), 300, 1).unwrap();
    assert!(r.metric < 1.5, "atom count MAE {}", r.metric);
}

#[test]
fn conditioned_atom_count_tracks_generated_atom_count() {
    let graphs = desk_corpus(7, 400, 10);
    let cfg = TrainConfig {
        batch_size: 32,
        steps: 800,
        warmup: 40,
        conditional: true,
        ..TrainConfig::default()
    };
    let model_cfg = ModelConfig {
        hidden: 32,
        slot_dim: 32,
        slots: 16,
        max_blocks: 17,
        ..ModelConfig::default()
    };
    let (model, _, _) = train(&graphs, model_cfg, cfg);
    let stats = model.conditions.unwrap();
    let mut wanted = Vec::new();
    let mut got = Vec::new();
    // condition on the statistics of unseen molecules, with their scaffolds
    for g in desk_corpus(70, 120, 10) {
        let conditions = stats.of_graph(&g);
        let scaffold = g.scaffold();
        let Ok(w) = model.encode_conditioned(scaffold.as_ref(), &conditions, &model.identity_perm()) else {
            continue;
        };
        let out = model.generate(&w, Sampling::Greedy).unwrap();
        if let Some(m) = out.graph.as_ref().filter(|m| out.is_valid() && valid_canonical(m).is_some()) {
            wanted.push(Condition::AtomCount.measure(&g));
            got.push(m.atom_count() as f64);
        }
    }
    assert!(wanted.len() >= 30, "only {} valid generations", wanted.len());
    let rho = spearman(&wanted, &got).unwrap();
    assert!(rho > 0.5, "spearman {rho} over {} molecules", wanted.len());
}
