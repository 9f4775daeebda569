use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};

use anyhow::{anyhow, Context};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use graphwords::chem::io::smiles_lines;
use graphwords::chem::random::{random_molecule, RandomMoleculeConfig};
use graphwords::chem::{canonical_form, is_isomorphic, parse_smiles, write_smiles, MolecularGraph};
use graphwords::decoder::{Generation, Sampling};
use graphwords::encoder::GraphWords;
use graphwords::ftseq::{flatten, shuffle_codebook, unflatten, SlotPermutation};
use graphwords::genlab::{
    fewshot_sample, hybridize, interpolate, metrics, mixup, valid_canonical, ConsistencyMode, ConsistencyReport,
    Metrics, WordBank,
};
use graphwords::training::{
    desk_corpus, linear_probe, ConditionStats, Corpus, Model, ModelConfig, ProbeTask, StepReport, TrainConfig,
    Trainer,
};
use graphwords::vocab::{build_bond_dict, BondDict, Vocabulary};

use crate::args::*;
use crate::files::{emit, generation_line, load_model, read_bank, read_graphs, write_bank};
use crate::{invalid, runtime, Outcome};

pub fn run(cmd: Command) -> Outcome {
    match cmd {
        Command::Tokenize(a) => tokenize(a),
        Command::Roundtrip(a) => roundtrip(a),
        Command::Pretrain(a) => pretrain(a),
        Command::Encode(a) => encode(a),
        Command::Generate(a) => generate(a),
        Command::Sample(a) => sample(a),
        Command::Latent(a) => latent(a),
        Command::Metrics(a) => metrics_cmd(a),
        Command::Consistency(a) => consistency(a),
        Command::Probe(a) => probe(a),
        Command::Corpus(a) => corpus(a),
    }
}

fn start_atom(g: &MolecularGraph) -> usize {
    g.origin_first_atom().unwrap_or(0)
}

fn corpus_bonds(graphs: &[MolecularGraph]) -> Outcome<BondDict> {
    build_bond_dict(graphs, usize::MAX).map_err(invalid)
}

fn tokenize(a: TokenizeArgs) -> Outcome {
    let graphs = read_graphs(&a.input)?;
    let bonds = match &a.model {
        Some(m) => load_model(m)?.vocab.bonds,
        None => corpus_bonds(&graphs)?,
    };
    let mut dumps = Vec::with_capacity(graphs.len());
    for (i, g) in graphs.iter().enumerate() {
        let seq = flatten(g, start_atom(g), &bonds)
            .with_context(|| format!("molecule {}", i + 1))
            .map_err(invalid)?;
        dumps.push(seq.to_dump());
    }
    emit(a.out.as_deref(), &dumps.join("\n"))
}

fn roundtrip(a: RoundtripArgs) -> Outcome {
    let graphs = match &a.input {
        Some(p) => read_graphs(p)?,
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            let cfg = RandomMoleculeConfig {
                max_atoms: a.max_atoms,
                ..RandomMoleculeConfig::default()
            };
            (0..a.count).map(|_| random_molecule(&mut rng, &cfg)).collect()
        }
    };
    let bonds = corpus_bonds(&graphs)?;
    let mut exact = 0;
    for (i, g) in graphs.iter().enumerate() {
        let back = flatten(g, start_atom(g), &bonds).and_then(|s| unflatten(&s, &bonds));
        match back {
            Ok(h) if is_isomorphic(g, &h) => exact += 1,
            Ok(_) => eprintln!("molecule {}: rebuilt graph is not isomorphic", i + 1),
            Err(e) => eprintln!("molecule {}: {e}", i + 1),
        }
    }
    emit(None, &format!("exact round trips: {exact}/{}\n", graphs.len()))?;
    if exact == graphs.len() {
        Ok(())
    } else {
        Err(runtime(anyhow!("{} molecules did not round-trip", graphs.len() - exact)))
    }
}

fn pretrain(a: PretrainArgs) -> Outcome {
    let graphs = match &a.corpus.input {
        Some(p) => read_graphs(p)?,
        None => desk_corpus(a.seed, a.corpus.corpus_size, a.corpus.max_atoms),
    };
    let vocab = Vocabulary::new(build_bond_dict(&graphs, a.bond_cap).map_err(invalid)?);
    let mcfg = ModelConfig {
        layers: a.layers,
        heads: a.heads,
        hidden: a.hidden,
        words: a.words,
        slot_dim: a.slot_dim,
        slots: a.slots,
        epsilon: a.epsilon,
        max_blocks: a.max_blocks.unwrap_or(a.slots + 1),
    };
    let tcfg = TrainConfig {
        batch_size: a.batch_size,
        steps: a.steps,
        warmup: a.warmup,
        lr_max: a.lr_max,
        lr_min: a.lr_min,
        seed: a.seed,
        shuffle_codebook: !a.no_shuffle,
        shuffle_decoder: !a.fixed_decoder_order,
        conditional: a.conditional,
        log_every: a.log_every,
    };
    tcfg.validate().map_err(invalid)?;
    let mut model = Model::new(mcfg, vocab, a.seed).map_err(invalid)?;
    if a.conditional {
        model = model.with_conditions(ConditionStats::from_graphs(&graphs));
    }
    let corpus = Corpus::build(&graphs, &model, a.conditional);
    eprintln!(
        "corpus: {} examples, {} skipped (unknown bond type, too many nodes or too long)",
        corpus.len(),
        corpus.skipped
    );
    if corpus.is_empty() {
        return Err(invalid(anyhow!("no trainable molecules")));
    }
    let mut log = match &a.log {
        Some(p) => {
            let f = File::create(p).with_context(|| format!("creating {}", p.display())).map_err(runtime)?;
            let mut w = BufWriter::new(f);
            writeln!(w, "{}", StepReport::TSV_HEADER).map_err(runtime)?;
            Some(w)
        }
        None => None,
    };
    let mut trainer = Trainer::new(model, tcfg).map_err(invalid)?;
    let mut io_err = None;
    trainer
        .run(&corpus, |r| {
            if let Some(w) = log.as_mut() {
                if let Err(e) = writeln!(w, "{}", r.tsv()) {
                    io_err.get_or_insert(e);
                }
            }
            if tcfg.log_every > 0 && (r.step % tcfg.log_every == 0 || r.step + 1 == tcfg.steps) {
                eprintln!("step {:>6}  lr {:.3e}  L_token {:.4}  L_attach {:.4}", r.step, r.lr, r.l_token, r.l_attach);
            }
        })
        .map_err(runtime)?;
    if let Some(e) = io_err {
        return Err(runtime(e));
    }
    if let Some(mut w) = log {
        w.flush().map_err(runtime)?;
    }
    trainer.model.save(&a.out).map_err(runtime)?;
    eprintln!("wrote {}", a.out.display());
    Ok(())
}

fn perm_for(model: &Model, shuffle_seed: Option<u64>) -> SlotPermutation {
    match shuffle_seed {
        Some(s) => shuffle_codebook(model.config.slots, s),
        None => model.identity_perm(),
    }
}

fn encode(a: EncodeArgs) -> Outcome {
    let model = load_model(&a.model)?;
    let graphs = read_graphs(&a.input)?;
    let bank = WordBank::build(&model, &graphs, &perm_for(&model, a.shuffle_seed)).map_err(invalid)?;
    write_bank(&bank, &a.out, a.format)?;
    eprintln!("encoded {} molecules", bank.len());
    Ok(())
}

fn decode_all(model: &Model, words: &[GraphWords], temperature: Option<f64>, seed: u64) -> Outcome<Vec<Generation>> {
    words
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let sampling = match temperature {
                Some(t) => Sampling::Temperature {
                    temperature: t,
                    seed: seed.wrapping_add(i as u64),
                },
                None => Sampling::Greedy,
            };
            model.generate(w, sampling).map_err(runtime)
        })
        .collect()
}

fn generate(a: GenerateArgs) -> Outcome {
    let model = load_model(&a.model)?;
    let words = match (&a.bank, &a.input) {
        (Some(b), _) => read_bank(b)?.words,
        (None, Some(p)) => {
            let graphs = read_graphs(p)?;
            WordBank::build(&model, &graphs, &model.identity_perm()).map_err(invalid)?.words
        }
        (None, None) => return Err(invalid(anyhow!("either --bank or --in is required"))),
    };
    let gens = decode_all(&model, &words, a.temperature, a.seed)?;
    let text: String = gens.iter().map(generation_line).collect();
    if let Some(p) = &a.trace {
        let mut t = String::from("index\tkind\tid\tcase\tsimilarity\n");
        for (i, g) in gens.iter().enumerate() {
            for line in g.trace_tsv().lines() {
                let _ = writeln!(t, "{i}\t{line}");
            }
        }
        emit(Some(p), &t)?;
    }
    let valid = gens.iter().filter(|g| g.is_valid()).count();
    eprintln!("decoded {} ({} valid)", gens.len(), valid);
    emit(a.out.as_deref(), &text)
}

fn canonical_set(graphs: &[MolecularGraph]) -> HashSet<String> {
    graphs.iter().filter_map(|g| canonical_form(g).ok()).collect()
}

fn sample(a: SampleArgs) -> Outcome {
    let model = load_model(&a.model)?;
    let bank = read_bank(&a.bank)?;
    let reference = match &a.train {
        Some(p) => canonical_set(&read_graphs(p)?),
        None => bank.canonical.iter().cloned().collect(),
    };
    let samples = fewshot_sample(&model, &bank, a.s, a.count, a.seed).map_err(invalid)?;
    let decoded: Vec<Option<MolecularGraph>> = samples
        .iter()
        .map(|s| if s.generation.is_valid() { s.generation.graph.clone() } else { None })
        .collect();
    let m = metrics(&decoded, &reference);
    if let Some(p) = &a.out {
        let text: String = samples.iter().map(|s| generation_line(&s.generation)).collect();
        emit(Some(p), &text)?;
    }
    emit(None, &format!("s\t{}\n{}\t{}\n", Metrics::TSV_HEADER, a.s, m.tsv()))
}

fn bank_entry(bank: &WordBank, i: usize) -> Outcome<&GraphWords> {
    bank.words
        .get(i)
        .ok_or_else(|| invalid(anyhow!("bank index {i} out of range (bank has {})", bank.len())))
}

fn latent(cmd: LatentCommand) -> Outcome {
    let (common, rows): (&LatentCommon, Vec<(String, GraphWords)>) = match &cmd {
        LatentCommand::Mix {
            common,
            first,
            second,
            lambda,
        } => {
            let bank = read_bank(&common.bank)?;
            let w = mixup(bank_entry(&bank, *first)?, bank_entry(&bank, *second)?, *lambda).map_err(invalid)?;
            (common, vec![(format!("lambda={lambda}"), w)])
        }
        LatentCommand::Interp {
            common,
            source,
            target,
            points,
        } => {
            if *points < 2 {
                return Err(invalid(anyhow!("--points must be at least 2")));
            }
            let bank = read_bank(&common.bank)?;
            let alphas: Vec<f64> = (0..*points).map(|i| i as f64 / (*points - 1) as f64).collect();
            let path = interpolate(bank_entry(&bank, *source)?, bank_entry(&bank, *target)?, &alphas).map_err(invalid)?;
            (common, alphas.iter().map(|a| format!("alpha={a}")).zip(path).collect())
        }
        LatentCommand::Hybrid {
            common,
            source,
            target,
            rows,
        } => {
            let bank = read_bank(&common.bank)?;
            let w = hybridize(bank_entry(&bank, *source)?, bank_entry(&bank, *target)?, rows).map_err(invalid)?;
            let set: BTreeSet<usize> = rows.iter().copied().collect();
            (common, vec![(format!("rows={set:?}"), w)])
        }
    };
    let model = load_model(&common.model)?;
    let mut text = String::new();
    for (label, w) in rows {
        let g = model.generate(&w, Sampling::Greedy).map_err(runtime)?;
        text.push_str(&format!("{label}\t{}", generation_line(&g)));
    }
    emit(common.out.as_deref(), &text)
}

fn metrics_cmd(a: MetricsArgs) -> Outcome {
    let text = std::fs::read_to_string(&a.input)
        .with_context(|| format!("reading {}", a.input.display()))
        .map_err(invalid)?;
    let mut lines = Vec::new();
    let mut decoded = Vec::new();
    for (line, s) in smiles_lines(&text) {
        lines.push(line);
        decoded.push(if s == "*" { None } else { parse_smiles(s).ok() });
    }
    if decoded.is_empty() {
        return Err(invalid(anyhow!("{}: no molecules", a.input.display())));
    }
    let reference = match &a.train {
        Some(p) => canonical_set(&read_graphs(p)?),
        None => HashSet::new(),
    };
    let m = metrics(&decoded, &reference);
    if let Some(p) = &a.verbose {
        let mut v = String::from("line\tvalid\tcanonical\n");
        for (line, g) in lines.iter().zip(&decoded) {
            match g.as_ref().and_then(valid_canonical) {
                Some(c) => writeln!(v, "{line}\t1\t{c}"),
                None => writeln!(v, "{line}\t0\t-"),
            }
            .map_err(runtime)?;
        }
        emit(Some(p), &v)?;
    }
    emit(None, &format!("{}\n{}\n", Metrics::TSV_HEADER, m.tsv()))
}

fn consistency(a: ConsistencyArgs) -> Outcome {
    let graphs = read_graphs(&a.input)?;
    let report = match &a.model {
        Some(p) => {
            let model = load_model(p)?;
            ConsistencyReport::run(&graphs, a.n, ConsistencyMode::Model(&model), a.seed)
        }
        None => {
            let bonds = corpus_bonds(&graphs)?;
            ConsistencyReport::run(&graphs, a.n, ConsistencyMode::Codec(&bonds), a.seed)
        }
    }
    .map_err(runtime)?;
    emit(a.out.as_deref(), &report.tsv())
}

fn probe(a: ProbeArgs) -> Outcome {
    let model = load_model(&a.model)?;
    let graphs = read_graphs(&a.input)?;
    let bank = WordBank::build(&model, &graphs, &model.identity_perm()).map_err(invalid)?;
    let features: Vec<Vec<f64>> = bank
        .words
        .iter()
        .map(|w| w.data().iter().map(|&x| x as f64).collect())
        .collect();
    let task = match (&a.labels, a.atom_threshold) {
        (Some(p), _) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading {}", p.display()))
                .map_err(invalid)?;
            let fields: Vec<(usize, &str)> = text
                .lines()
                .enumerate()
                .filter(|(_, l)| !l.trim().is_empty())
                .map(|(i, l)| (i + 1, l.trim()))
                .collect();
            let bad = |i: usize, l: &str| invalid(anyhow!("{}: line {i}: bad label {l:?}", p.display()));
            if a.regression {
                ProbeTask::Regression(fields.iter().map(|&(i, l)| l.parse().map_err(|_| bad(i, l))).collect::<Outcome<_>>()?)
            } else {
                ProbeTask::Classification(fields.iter().map(|&(i, l)| l.parse().map_err(|_| bad(i, l))).collect::<Outcome<_>>()?)
            }
        }
        (None, Some(t)) => ProbeTask::Classification(graphs.iter().map(|g| usize::from(g.atom_count() > t)).collect()),
        (None, None) => return Err(invalid(anyhow!("either --labels or --atom-threshold is required"))),
    };
    let r = linear_probe(&features, &task, a.epochs, a.seed).map_err(invalid)?;
    let name = if matches!(task, ProbeTask::Regression(_)) { "mae" } else { "accuracy" };
    emit(None, &format!("{name}\ttrain\ttest\n{:.6}\t{}\t{}\n", r.metric, r.train, r.test))
}

fn corpus(a: CorpusArgs) -> Outcome {
    let graphs = desk_corpus(a.seed, a.count, a.max_atoms);
    let text: String = graphs.iter().map(|g| write_smiles(g) + "\n").collect();
    emit(a.out.as_deref(), &text)
}
