use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Graph-to-sequence codec, Graph Words autoencoder and generation lab
/// for small molecules.
///
/// Molecule files are SMILES, one per line; blank lines and lines starting
/// with `#` are skipped and anything after the first whitespace is ignored.
/// Every flag may also be given in a `--config` file as `key=value` lines
/// (key = flag name without dashes; `true`/`false` for switches). Flags on
/// the command line override the file. Logs go to stderr, data to `--out`
/// or stdout.
#[derive(Debug, Parser)]
#[command(name = "graphwords", version)]
pub struct Cli {
    /// key=value file supplying defaults for this subcommand's flags.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the flexible token sequence of each molecule: one token per
    /// line (`node|edge<TAB>dictionary id<TAB>left slot<TAB>right slot`),
    /// molecules separated by a blank line.
    Tokenize(TokenizeArgs),
    /// Flatten and rebuild every molecule and verify the result is
    /// isomorphic to the input.
    Roundtrip(RoundtripArgs),
    /// Train an encoder/decoder pair and write a weight file.
    Pretrain(PretrainArgs),
    /// Encode molecules into a Graph Words bank.
    Encode(EncodeArgs),
    /// Decode Graph Words (from a bank or freshly encoded molecules).
    Generate(GenerateArgs),
    /// Few-shot sampling from a Gaussian mixture around bank entries.
    Sample(SampleArgs),
    /// Latent arithmetic on bank entries.
    #[command(subcommand)]
    Latent(LatentCommand),
    /// Validity, uniqueness, novelty and internal diversity of a molecule
    /// file.
    Metrics(MetricsArgs),
    /// Decoding consistency under random input orders.
    Consistency(ConsistencyArgs),
    /// Linear probe on frozen Graph Words.
    Probe(ProbeArgs),
    /// Write a bundled random corpus of valid molecules.
    Corpus(CorpusArgs),
}

#[derive(Debug, Args)]
pub struct TokenizeArgs {
    /// Input SMILES file.
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    /// Take bond-type ids from this weight file instead of the input.
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,
    /// Output file (default stdout).
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RoundtripArgs {
    /// Input SMILES file; without it, random molecules are generated.
    #[arg(long = "in", value_name = "FILE")]
    pub input: Option<PathBuf>,
    /// Number of random molecules when no input is given.
    #[arg(long, default_value_t = 1000)]
    pub count: usize,
    /// Largest random molecule (heavy atoms).
    #[arg(long, default_value_t = 16)]
    pub max_atoms: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct CorpusSource {
    /// Training SMILES file; without it a random desk corpus is used.
    #[arg(long = "in", value_name = "FILE")]
    pub input: Option<PathBuf>,
    /// Size of the random desk corpus.
    #[arg(long, default_value_t = 2000)]
    pub corpus_size: usize,
    /// Largest random molecule (heavy atoms).
    #[arg(long, default_value_t = 12)]
    pub max_atoms: usize,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub corpus: CorpusSource,
    /// Weight file to write.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Tab-separated training log (step, lr, L_token, L_attach).
    #[arg(long, value_name = "FILE")]
    pub log: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 50)]
    pub warmup: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr_max: f64,
    #[arg(long, default_value_t = 5e-5)]
    pub lr_min: f64,
    /// Keep the codebook orders fixed during training.
    #[arg(long)]
    pub no_shuffle: bool,
    /// Shuffle only the encoder codebook; the decoder trains in order.
    #[arg(long)]
    pub fixed_decoder_order: bool,
    /// Train scaffold + property conditioning.
    #[arg(long)]
    pub conditional: bool,
    /// Report to stderr every this many steps.
    #[arg(long, default_value_t = 50)]
    pub log_every: usize,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    /// Number of Graph Words (k).
    #[arg(long, default_value_t = 1)]
    pub words: usize,
    /// Position-codebook rows (most nodes per molecule).
    #[arg(long, default_value_t = 32)]
    pub slots: usize,
    /// Position-codebook row width.
    #[arg(long, default_value_t = 64)]
    pub slot_dim: usize,
    /// Right-placement similarity threshold.
    #[arg(long, default_value_t = 0.5)]
    pub epsilon: f64,
    /// Generation stops after this many blocks (default slots + 1).
    #[arg(long)]
    pub max_blocks: Option<usize>,
    /// Most distinct bond types allowed in the vocabulary.
    #[arg(long, default_value_t = 256)]
    pub bond_cap: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BankFormat {
    /// Tab-separated lines: canonical form, k, d, values.
    Text,
    /// Weight-file layout with one record per molecule.
    Binary,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = BankFormat::Text)]
    pub format: BankFormat,
    /// Encode under this codebook shuffle instead of the identity order.
    #[arg(long)]
    pub shuffle_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    /// Graph Words bank (text or binary).
    #[arg(long, value_name = "FILE", conflicts_with = "input", required_unless_present = "input")]
    pub bank: Option<PathBuf>,
    /// Molecules to encode and decode.
    #[arg(long = "in", value_name = "FILE")]
    pub input: Option<PathBuf>,
    /// Decoded molecules: `SMILES<TAB>status`, `*` when nothing decodes.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Per-step decisions: `index<TAB>kind<TAB>id<TAB>case<TAB>similarity`.
    #[arg(long, value_name = "FILE")]
    pub trace: Option<PathBuf>,
    /// Sample with this softmax temperature instead of greedy choices.
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub bank: PathBuf,
    /// Mixture component variance.
    #[arg(long, default_value_t = 0.5)]
    pub s: f64,
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    /// Reference set for novelty (default: the bank's molecules).
    #[arg(long, value_name = "FILE")]
    pub train: Option<PathBuf>,
    /// Decoded molecules, `SMILES<TAB>status` per line.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct LatentCommon {
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub bank: PathBuf,
    /// Output file (default stdout).
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum LatentCommand {
    /// Decode lambda * W_i + (1 - lambda) * W_j.
    Mix {
        #[command(flatten)]
        common: LatentCommon,
        /// Bank index i (0-based).
        #[arg(long)]
        first: usize,
        /// Bank index j (0-based).
        #[arg(long)]
        second: usize,
        #[arg(long, default_value_t = 0.5)]
        lambda: f64,
    },
    /// Decode evenly spaced points from source to target.
    Interp {
        #[command(flatten)]
        common: LatentCommon,
        #[arg(long)]
        source: usize,
        #[arg(long)]
        target: usize,
        /// Number of points including both ends.
        #[arg(long, default_value_t = 5)]
        points: usize,
    },
    /// Decode the source words with some rows taken from the target.
    Hybrid {
        #[command(flatten)]
        common: LatentCommon,
        #[arg(long)]
        source: usize,
        #[arg(long)]
        target: usize,
        /// Comma-separated 0-based word indices to replace (may be empty).
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        rows: Vec<usize>,
    },
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Generated molecules (`SMILES[<TAB>...]`; `*` marks a failure).
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    /// Training molecules for novelty.
    #[arg(long, value_name = "FILE")]
    pub train: Option<PathBuf>,
    /// Per-molecule file: `line<TAB>valid<TAB>canonical form`.
    #[arg(long, value_name = "FILE")]
    pub verbose: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConsistencyArgs {
    /// Weight file; without it the codec alone is checked.
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    /// Random orders per molecule.
    #[arg(long, default_value_t = 16)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    /// One label per molecule (integers for classes, reals with
    /// `--regression`).
    #[arg(long, value_name = "FILE", conflicts_with = "atom_threshold", required_unless_present = "atom_threshold")]
    pub labels: Option<PathBuf>,
    /// Built-in binary label: heavy-atom count above this value.
    #[arg(long)]
    pub atom_threshold: Option<usize>,
    #[arg(long)]
    pub regression: bool,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    #[arg(long, default_value_t = 1000)]
    pub count: usize,
    #[arg(long, default_value_t = 12)]
    pub max_atoms: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}
