//! Command-line entry points for the uninmt toolkit.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use uninmt::corpus::bpe::{learn_bpe, BpeModel};
use uninmt::corpus::{load_monolingual, tokenize, ParallelCorpus};
use uninmt::embeddings::EmbeddingTable;
use uninmt::nmt::train::evaluate_nll;
use uninmt::nmt::{fine_tune, load_checkpoint, save_checkpoint, translate, DecodeMode};
use uninmt::tensor::AdamState;
use uninmt::pipeline::experiments::{self, prepare, train_system, SystemKind};
use uninmt::pipeline::{
    backtranslate, bleu, evaluate_bleu_mode, export_gate_activations, ExperimentConfig,
};
use uninmt::projection::{extract_seeds, solve_procrustes, SeedDictionary};
use uninmt::Result;

#[derive(Parser)]
#[command(name = "uninmt", version, about = "Universal multilingual NMT toolkit")]
struct Cli {
    /// Experiment configuration file (flat `key = value`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the configuration's first seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SystemArg {
    Vanilla,
    Multi,
    ClosestUniToken,
    MultiUlrFrozenA,
    MultiUlr,
    MultiUlrMole,
}

impl From<SystemArg> for SystemKind {
    fn from(s: SystemArg) -> SystemKind {
        match s {
            SystemArg::Vanilla => SystemKind::Vanilla,
            SystemArg::Multi => SystemKind::Multi,
            SystemArg::ClosestUniToken => SystemKind::ClosestUniToken,
            SystemArg::MultiUlrFrozenA => SystemKind::MultiUlrFrozenA,
            SystemArg::MultiUlr => SystemKind::MultiUlr,
            SystemArg::MultiUlrMole => SystemKind::MultiUlrMole,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Learn a byte-pair encoding model from one-sentence-per-line text.
    LearnBpe {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 4000)]
        num_ops: usize,
        #[arg(long)]
        output: PathBuf,
    },
    /// Segment text with a learned merge file.
    ApplyBpe {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Train skip-gram embeddings on monolingual text.
    TrainEmbeddings {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        lang: String,
        #[arg(long)]
        output: PathBuf,
        /// Unit-normalize rows before writing.
        #[arg(long)]
        normalize: bool,
    },
    /// Validate (and optionally normalize) a text-format vector file.
    LoadEmbeddings {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        lang: String,
        #[arg(long)]
        expected_dim: Option<usize>,
        #[arg(long)]
        normalize: bool,
        /// Re-write the table here after validation.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Build a seed dictionary from aligned token pairs (TSV src<TAB>tgt
    /// per line, or a parallel TSV aligned positionally).
    ExtractSeeds {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        lang: String,
        #[arg(long, default_value_t = 1)]
        min_count: u64,
        #[arg(long, default_value_t = 500)]
        max_seeds: usize,
        #[arg(long)]
        output: PathBuf,
    },
    /// Solve the orthogonal map from seed pairs and two vector tables.
    SolveProjection {
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        keys: PathBuf,
        #[arg(long)]
        seeds: PathBuf,
        #[arg(long)]
        lang: String,
        #[arg(long)]
        output: PathBuf,
    },
    /// Train a system on the configured task and write a checkpoint.
    Train {
        #[arg(long, value_enum, default_value = "multi-ulr")]
        system: SystemArg,
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Translate one-sentence-per-line text with a checkpoint.
    Translate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        lang: String,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 1)]
        beam: usize,
        #[arg(long, default_value_t = 64)]
        max_len: usize,
        /// Segment input with this merge file first.
        #[arg(long)]
        bpe: Option<PathBuf>,
    },
    /// Build a synthetic parallel corpus from target-side monolingual
    /// text and a reverse-direction checkpoint.
    Backtranslate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Language the reverse model reads (the forward target side).
        #[arg(long, default_value = "en")]
        reverse_src: String,
        /// Language code for the synthetic source side.
        #[arg(long)]
        forward_lang: String,
        #[arg(long)]
        mono: PathBuf,
        #[arg(long)]
        limit: usize,
        #[arg(long)]
        output: PathBuf,
    },
    /// Corpus BLEU of hypotheses vs references, or of a checkpoint on a
    /// parallel TSV.
    Evaluate {
        #[arg(long)]
        hypotheses: Option<PathBuf>,
        #[arg(long)]
        references: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        pairs: Option<PathBuf>,
        #[arg(long)]
        lang: Option<String>,
        #[arg(long, default_value_t = 1)]
        beam: usize,
    },
    /// Export per-position gate activations as CSV.
    ExportGates {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        lang: String,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Corpus-size sweep over the headline systems.
    Sweep {
        /// Comma-separated low-resource sizes, e.g. `0,100,500`.
        #[arg(long, value_delimiter = ',')]
        sizes: Vec<usize>,
    },
    /// The full ablation grid at desk scale.
    Ablate,
    /// Fine-tune a pretrained checkpoint on a low-resource TSV.
    Finetune {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        #[arg(long)]
        lang: String,
        #[arg(long, default_value_t = 3)]
        epochs: usize,
        #[arg(long)]
        output: PathBuf,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        if cfg.seeds.is_empty() {
            cfg.seeds = vec![seed];
        } else {
            cfg.seeds[0] = seed;
        }
    }
    cfg.out_dir = cli.out.to_string_lossy().to_string();
    Ok(cfg)
}

fn write_lines(path: &Path, lines: &[Vec<String>]) -> Result<()> {
    let text: String =
        lines.iter().map(|l| l.join(" ") + "\n").collect::<Vec<_>>().concat();
    std::fs::write(path, text)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    std::fs::create_dir_all(&cli.out)?;
    match &cli.command {
        Command::LearnBpe { input, num_ops, output } => {
            let sentences = load_monolingual(input)?;
            let model = learn_bpe(&sentences, *num_ops)?;
            model.save(output)?;
            println!("learned {} merges -> {}", model.merges.len(), output.display());
        }
        Command::ApplyBpe { model, input, output } => {
            let model = BpeModel::load(model)?;
            let sentences = load_monolingual(input)?;
            write_lines(output, &model.apply_corpus(&sentences))?;
            println!("segmented {} lines -> {}", sentences.len(), output.display());
        }
        Command::TrainEmbeddings { input, lang, output, normalize } => {
            let cfg = load_config(&cli)?;
            let sentences = load_monolingual(input)?;
            let mut sg = cfg.skipgram.clone();
            sg.seed = cfg.seeds.first().copied().unwrap_or(1);
            let mut table = uninmt::embeddings::train_skipgram(lang, &sentences, &sg)?;
            if *normalize {
                table = table.normalize_rows();
            }
            table.save(output)?;
            println!("trained {} vectors (dim {}) -> {}", table.len(), table.dim, output.display());
        }
        Command::LoadEmbeddings { input, lang, expected_dim, normalize, output } => {
            let mut table = EmbeddingTable::load(input, lang, *expected_dim)?;
            if *normalize {
                table = table.normalize_rows();
                if !table.zero_rows.is_empty() {
                    eprintln!("warning: {} zero rows left unnormalized", table.zero_rows.len());
                }
            }
            println!("loaded {} vectors of dim {}", table.len(), table.dim);
            if let Some(out) = output {
                table.save(out)?;
            }
        }
        Command::ExtractSeeds { pairs, lang, min_count, max_seeds, output } => {
            let text = std::fs::read_to_string(pairs)?;
            let mut stream = Vec::new();
            for line in text.lines() {
                if let Some((s, t)) = line.split_once('\t') {
                    let s_toks = tokenize(s);
                    let t_toks = tokenize(t);
                    if s_toks.len() == 1 && t_toks.len() == 1 {
                        stream.push((s_toks[0].clone(), t_toks[0].clone()));
                    } else {
                        for i in 0..s_toks.len().min(t_toks.len()) {
                            stream.push((s_toks[i].clone(), t_toks[i].clone()));
                        }
                    }
                }
            }
            let dict = extract_seeds(lang, stream, *min_count, *max_seeds)?;
            dict.save(output)?;
            println!("{} seed pairs -> {}", dict.pairs.len(), output.display());
        }
        Command::SolveProjection { queries, keys, seeds, lang, output } => {
            let queries = EmbeddingTable::load(queries, lang, None)?.normalize_rows();
            let keys = EmbeddingTable::load(keys, "en", None)?.normalize_rows();
            let dict = SeedDictionary::load(seeds, lang)?;
            let solution = solve_procrustes(&queries, &keys, &dict)?;
            for w in &solution.warnings {
                eprintln!("warning: {w}");
            }
            solution.map.save(output)?;
            println!(
                "objective {:.4} (identity {:.4}), orthogonality residual {:.2e} -> {}",
                solution.objective,
                solution.identity_objective,
                solution.map.orthogonality_residual(),
                output.display()
            );
        }
        Command::Train { system, steps } => {
            let cfg = load_config(&cli)?;
            let seed = cfg.seeds.first().copied().unwrap_or(1);
            let res = prepare(&cfg, seed)?;
            let trained = train_system((*system).into(), &res, cfg.low_pairs, None, *steps)?;
            let report = evaluate_bleu_mode(
                &trained.model,
                &trained.params,
                &res.test,
                decode_mode(cfg.beam),
                cfg.max_decode_len,
            )?;
            let ckpt = cli.out.join("model.ckpt");
            save_checkpoint(&trained.model, &trained.params, Some(&res.cfg.train), &ckpt)?;
            let log_path = cli.out.join("train.jsonl");
            let mut log = String::new();
            for entry in &trained.log {
                log.push_str(&serde_json::to_string(entry).expect("entry serializes"));
                log.push('\n');
            }
            std::fs::write(&log_path, log)?;
            println!("test BLEU {:.2}; checkpoint -> {}", report.bleu, ckpt.display());
        }
        Command::Translate { checkpoint, lang, input, output, beam, max_len, bpe } => {
            let (model, params, _) = load_checkpoint(checkpoint)?;
            let mut sentences = load_monolingual(input)?;
            if let Some(bpe_path) = bpe {
                let bpe = BpeModel::load(bpe_path)?;
                sentences = bpe.apply_corpus(&sentences);
            }
            let mut out_lines = Vec::with_capacity(sentences.len());
            for sent in &sentences {
                let t = translate(&model, &params, lang, sent, decode_mode(*beam), *max_len)?;
                out_lines.push(BpeModel::detokenize(&t.tokens));
            }
            write_lines(output, &out_lines)?;
            println!("translated {} lines -> {}", out_lines.len(), output.display());
        }
        Command::Backtranslate { checkpoint, reverse_src, forward_lang, mono, limit, output } => {
            let (model, params, _) = load_checkpoint(checkpoint)?;
            let sentences = load_monolingual(mono)?;
            let corpus =
                backtranslate(&model, &params, reverse_src, forward_lang, &sentences, *limit, 64)?;
            let mut text = String::new();
            for (s, t) in &corpus.pairs {
                text.push_str(&s.join(" "));
                text.push('\t');
                text.push_str(&t.join(" "));
                text.push('\n');
            }
            std::fs::write(output, text)?;
            println!("{} synthetic pairs -> {}", corpus.len(), output.display());
        }
        Command::Evaluate { hypotheses, references, checkpoint, pairs, lang, beam } => {
            let report = match (hypotheses, references, checkpoint, pairs) {
                (Some(h), Some(r), _, _) => {
                    let hyp = load_monolingual(h)?;
                    let refs = load_monolingual(r)?;
                    bleu(&hyp, &refs)?
                }
                (_, _, Some(c), Some(p)) => {
                    let (model, params, _) = load_checkpoint(c)?;
                    let lang = lang.clone().unwrap_or_else(|| model.langs[0].clone());
                    let corpus = ParallelCorpus::from_tsv(&lang, p)?;
                    evaluate_bleu_mode(&model, &params, &corpus, decode_mode(*beam), 64)?
                }
                _ => {
                    return Err(uninmt::Error::Config(
                        "evaluate needs --hypotheses/--references or --checkpoint/--pairs".into(),
                    ))
                }
            };
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
        }
        Command::ExportGates { checkpoint, lang, input, output } => {
            let (model, params, _) = load_checkpoint(checkpoint)?;
            let sentences = load_monolingual(input)?;
            let csv = export_gate_activations(&model, &params, lang, &sentences)?;
            std::fs::write(output, csv)?;
            println!("gate activations -> {}", output.display());
        }
        Command::Sweep { sizes } => {
            let cfg = load_config(&cli)?;
            let (_, csv, json) = experiments::corpus_size_sweep(&cfg, sizes)?;
            std::fs::write(cli.out.join("sweep.csv"), csv)?;
            std::fs::write(cli.out.join("sweep.json"), json)?;
            println!("sweep artifacts -> {}", cli.out.display());
        }
        Command::Ablate => {
            let cfg = load_config(&cli)?;
            let seed = cfg.seeds.first().copied().unwrap_or(1);
            let (rows, csv) = experiments::run_ablation(&cfg, seed)?;
            std::fs::write(cli.out.join("ablation.csv"), &csv)?;
            for row in &rows {
                match (row.bleu, &row.error) {
                    (Some(b), _) => println!("{:<22} {b:.2}", row.system),
                    (None, Some(e)) => println!("{:<22} FAILED: {e}", row.system),
                    _ => {}
                }
            }
        }
        Command::Finetune { checkpoint, pairs, dev, lang, epochs, output } => {
            let cfg = load_config(&cli)?;
            let (mut model, mut params, train_cfg) = load_checkpoint(checkpoint)?;
            let corpus = ParallelCorpus::from_tsv(lang, pairs)?;
            let dev = ParallelCorpus::from_tsv(lang, dev)?;
            let tcfg = train_cfg.unwrap_or(cfg.train);
            let mut adam = AdamState::new(&params, tcfg.lr);
            let report =
                fine_tune(&mut model, &mut params, &mut adam, &corpus, &dev, *epochs, &tcfg)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            for e in &report.epochs {
                println!(
                    "epoch {:2}  dev NLL {:.4}  dev BLEU {:.2}",
                    e.epoch, e.dev_nll, e.dev_bleu
                );
            }
            save_checkpoint(&model, &params, Some(&tcfg), output)?;
            let final_nll = evaluate_nll(&model, &params, &dev)?;
            println!("fine-tuned checkpoint -> {} (dev NLL {final_nll:.4})", output.display());
        }
    }
    Ok(())
}

fn decode_mode(beam: usize) -> DecodeMode {
    if beam <= 1 {
        DecodeMode::Greedy
    } else {
        DecodeMode::Beam(beam)
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
