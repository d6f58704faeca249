//! `dinfer`: train toy models, extract traces and features, and run
//! dataset-inference audits.

mod io;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dinfer::di::{self, DiConfig, DiVerdict, Scoring};
use dinfer::pipeline::{self, CorpusSide};
use dinfer::toy::{self, Checkpoint};
use dinfer::{make_candidate_set, AttackConfig, FeatureMatrix, Modality, Traces};

use settings::{FileConfig, TrainSettings};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Core(dinfer::Error),
    Io { path: String, source: std::io::Error },
}

impl From<dinfer::Error> for CliError {
    fn from(e: dinfer::Error) -> Self {
        CliError::Core(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io { path, source } => write!(f, "{path}: {source}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use dinfer::Error as E;
        match self {
            CliError::Config(_) | CliError::Core(E::InvalidConfig(_)) => 2,
            CliError::Core(E::DivergenceDetected { .. }) => 3,
            CliError::Core(
                E::MalformedLine { .. }
                | E::SchemaViolation { .. }
                | E::DuplicateSample(_)
                | E::Overlap(_)
                | E::TokenOutOfRange { .. }
                | E::NonFinite { .. },
            ) => 4,
            CliError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 4,
            _ => 1,
        }
    }
}

#[derive(Parser)]
#[command(name = "dinfer", version, about = "Membership and dataset inference audits for generative models")]
struct Cli {
    /// TOML file with `seed`, `[attack]`, `[di]` and `[train]` tables.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for every random draw.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModalityArg {
    Arm,
    Dm,
}

impl From<ModalityArg> for Modality {
    fn from(m: ModalityArg) -> Self {
        match m {
            ModalityArg::Arm => Modality::Arm,
            ModalityArg::Dm => Modality::Dm,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SideArg {
    Members,
    Nonmembers,
}

#[derive(Subcommand)]
enum Command {
    /// Train a toy model on a synthetic corpus and write a checkpoint.
    TrainToy(TrainArgs),
    /// Trace one side of a checkpoint's corpus to NDJSON.
    Trace {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "members")]
        set: SideArg,
        /// Trace only the first N samples.
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn a trace file into a feature CSV.
    Features {
        #[arg(long)]
        traces: PathBuf,
        #[arg(long, value_enum)]
        modality: ModalityArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Partitioned Welch test on suspect and reference feature CSVs.
    DiTest {
        #[command(flatten)]
        sets: FeatureSets,
        #[command(flatten)]
        di: DiFlags,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Smallest suspect-set size that rejects.
    MinP {
        #[command(flatten)]
        sets: FeatureSets,
        #[command(flatten)]
        di: DiFlags,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-attack AUC and TPR at 1% FPR.
    MiaEval {
        #[arg(long)]
        suspects: PathBuf,
        #[arg(long)]
        references: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Traces, features, test, minimal-P search and metrics in one run.
    Audit(AuditArgs),
    /// Print the summary of a report JSON.
    Report {
        #[arg(long)]
        report: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    modality: ModalityArg,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    n_members: Option<usize>,
    #[arg(long)]
    n_nonmembers: Option<usize>,
    /// Sequence length (arm).
    #[arg(long)]
    length: Option<usize>,
    #[arg(long)]
    vocab: Option<usize>,
    /// Data dimension (dm).
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Corpus manifest path; defaults to `<out>.manifest.json`.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct FeatureSets {
    /// Suspect-set feature CSV.
    #[arg(long)]
    suspects: PathBuf,
    /// Reference-set feature CSV.
    #[arg(long)]
    references: PathBuf,
    #[arg(long, value_enum)]
    modality: ModalityArg,
}

#[derive(Args, Default)]
struct DiFlags {
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    partitions: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    /// Comma-separated minimal-P grid.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<usize>>,
}

#[derive(Args)]
struct AuditArgs {
    /// Toy checkpoint; suspects are its members, references its non-members.
    #[arg(long, conflicts_with_all = ["suspects", "references"])]
    checkpoint: Option<PathBuf>,
    /// Set size drawn from each side of the checkpoint corpus.
    #[arg(long)]
    n: Option<usize>,
    /// Suspect trace NDJSON.
    #[arg(long, requires = "references")]
    suspects: Option<PathBuf>,
    /// Reference trace NDJSON.
    #[arg(long, requires = "suspects")]
    references: Option<PathBuf>,
    #[arg(long, value_enum)]
    modality: Option<ModalityArg>,
    #[command(flatten)]
    di: DiFlags,
    #[arg(long)]
    out: PathBuf,
    /// Also write the joint feature CSV here.
    #[arg(long)]
    features_out: Option<PathBuf>,
}

fn di_config(file: &FileConfig, flags: &DiFlags) -> Result<DiConfig, CliError> {
    let mut c = file.di.clone();
    if let Some(a) = flags.alpha {
        c.alpha = a;
    }
    if let Some(p) = flags.partitions {
        c.n_partitions = p;
    }
    if let Some(t) = flags.trials {
        c.trials = t;
    }
    if let Some(g) = &flags.grid {
        c.grid = g.clone();
    }
    c.validate()?;
    Ok(c)
}

fn load_sets(sets: &FeatureSets) -> Result<(FeatureMatrix, FeatureMatrix), CliError> {
    let p = io::read_features(&sets.suspects)?;
    let u = io::read_features(&sets.references)?;
    make_candidate_set(p.ids().to_vec(), u.ids().to_vec(), sets.modality.into())?;
    Ok((p, u))
}

fn print_attack_table(verdict_attacks: &std::collections::BTreeMap<String, di::AttackMetrics>) {
    println!("{:<28} {:>8} {:>12}", "attack", "AUC", "TPR@1%FPR");
    for (name, m) in verdict_attacks {
        println!("{:<28} {:>8.4} {:>12.4}", name, m.auc, m.tpr_at_1pct);
    }
}

fn print_verdict(v: &DiVerdict) {
    print_attack_table(&v.attacks);
    if !v.dropped_columns.is_empty() {
        eprintln!("warning: zero-variance columns dropped: {}", v.dropped_columns.join(", "));
    }
    match v.minimal_p {
        Some(n) => println!("minimal P: {n}"),
        None => println!("minimal P: not reached"),
    }
    println!("{}", v.summary_line());
}

fn cmd_train(args: &TrainArgs, file: &FileConfig, seed: u64) -> Result<(), CliError> {
    let modality: Modality = args.modality.into();
    let flags = TrainSettings {
        epochs: args.epochs,
        lr: args.lr,
        n_members: args.n_members,
        n_nonmembers: args.n_nonmembers,
        length: args.length,
        vocab: args.vocab,
        dim: args.dim,
        ..TrainSettings::default()
    };
    let (spec, epochs, lr) = file.train.merged(&flags).resolve(modality, seed);
    if epochs == 0 {
        return Err(CliError::Config("--epochs must be at least 1".into()));
    }
    let ck = toy::train_checkpoint(spec.clone(), epochs, lr, seed)?;
    let mut buf = Vec::new();
    ck.write(&mut buf)?;
    io::write_atomic(&args.out, &buf)?;

    let (n_m, n_nm) = match spec {
        toy::CorpusSpec::Arm { n_members, n_nonmembers, .. } | toy::CorpusSpec::Dm { n_members, n_nonmembers, .. } => {
            (n_members, n_nonmembers)
        }
    };
    let manifest = serde_json::json!({
        "corpus": spec,
        "members": (0..n_m).map(toy::SyntheticCorpus::<()>::member_id).collect::<Vec<_>>(),
        "nonmembers": (0..n_nm).map(toy::SyntheticCorpus::<()>::nonmember_id).collect::<Vec<_>>(),
    });
    let manifest_path = args.manifest.clone().unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".manifest.json");
        PathBuf::from(p)
    });
    io::write_json(&manifest_path, &manifest)?;
    println!("final train loss: {:.6}", ck.final_loss);
    Ok(())
}

fn audit_traces(args: &AuditArgs, attack: &AttackConfig, seed: u64) -> Result<(Traces, Traces, Modality), CliError> {
    if let Some(path) = &args.checkpoint {
        let ck: Checkpoint = io::read_checkpoint(path)?;
        let modality = ck.model.modality();
        if args.modality.is_some_and(|m| Modality::from(m) != modality) {
            return Err(CliError::Config("--modality disagrees with the checkpoint".into()));
        }
        let p = pipeline::trace_checkpoint(&ck, CorpusSide::Members, args.n, attack, seed)?;
        let u = pipeline::trace_checkpoint(&ck, CorpusSide::Nonmembers, args.n, attack, seed)?;
        let n = p.len().min(u.len());
        let (p, u) = if p.len() == u.len() {
            (p, u)
        } else {
            (
                pipeline::trace_checkpoint(&ck, CorpusSide::Members, Some(n), attack, seed)?,
                pipeline::trace_checkpoint(&ck, CorpusSide::Nonmembers, Some(n), attack, seed)?,
            )
        };
        return Ok((p, u, modality));
    }
    let (Some(sp), Some(rp)) = (&args.suspects, &args.references) else {
        return Err(CliError::Config("audit needs --checkpoint or --suspects and --references".into()));
    };
    let Some(modality) = args.modality.map(Modality::from) else {
        return Err(CliError::Config("--modality is required with trace files".into()));
    };
    Ok((io::read_traces(sp, modality)?, io::read_traces(rp, modality)?, modality))
}

fn cmd_audit(args: &AuditArgs, file: &FileConfig, seed: u64) -> Result<(), CliError> {
    let di_cfg = di_config(file, &args.di)?;
    let (p_traces, u_traces, modality) = audit_traces(args, &file.attack, seed)?;
    let set = make_candidate_set(
        p_traces.ids().iter().map(|s| s.to_string()).collect(),
        u_traces.ids().iter().map(|s| s.to_string()).collect(),
        modality,
    )?;
    let (p, u) = pipeline::paired_feature_matrices(&p_traces, &u_traces, &file.attack)?;
    if let Some(path) = &args.features_out {
        let joint = {
            let mut m = FeatureMatrix::new(p.feature_names().to_vec());
            for (id, row) in p.ids().iter().zip(p.rows()).chain(u.ids().iter().zip(u.rows())) {
                m.push_row(id, row.clone())?;
            }
            m
        };
        io::write_features(path, &joint)?;
    }
    let verdict = di::audit(&p, &u, set.modality, &di_cfg, seed)?;
    io::write_json(&args.out, &verdict)?;
    print_verdict(&verdict);
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = settings::load(cli.config.as_deref())?;
    let seed = cli.seed.or(file.seed).unwrap_or(0);
    file.attack.validate()?;
    match &cli.command {
        Command::TrainToy(args) => cmd_train(args, &file, seed),
        Command::Trace { checkpoint, set, limit, out } => {
            let ck = io::read_checkpoint(checkpoint)?;
            let side = match set {
                SideArg::Members => CorpusSide::Members,
                SideArg::Nonmembers => CorpusSide::Nonmembers,
            };
            let traces = pipeline::trace_checkpoint(&ck, side, *limit, &file.attack, seed)?;
            io::write_traces(out, &traces)?;
            println!("wrote {} traces", traces.len());
            Ok(())
        }
        Command::Features { traces, modality, out } => {
            let t = io::read_traces(traces, (*modality).into())?;
            let m = pipeline::feature_matrix(&t, &file.attack)?;
            io::write_features(out, &m)?;
            println!("wrote {} rows x {} features", m.n_rows(), m.n_features());
            Ok(())
        }
        Command::DiTest { sets, di: flags, out } => {
            let (p, u) = load_sets(sets)?;
            let cfg = di_config(&file, flags)?;
            let r = di::di_test(&p, &u, Scoring::from(Modality::from(sets.modality)), &cfg, seed)?;
            let dropped = r.dropped_columns();
            if !dropped.is_empty() {
                eprintln!("warning: zero-variance columns dropped: {}", dropped.join(", "));
            }
            io::emit_json(out.as_deref(), &r)?;
            if r.rejected {
                println!("REJECT H0 (p={:.3e})", r.mean_p);
            } else {
                println!("INCONCLUSIVE");
            }
            Ok(())
        }
        Command::MinP { sets, di: flags, out } => {
            let (p, u) = load_sets(sets)?;
            let cfg = di_config(&file, flags)?;
            let r = di::minimal_p_search(&p, &u, Scoring::from(Modality::from(sets.modality)), &cfg, seed)?;
            io::emit_json(out.as_deref(), &r)?;
            match r.minimal_p {
                Some(n) => println!("minimal P: {n}"),
                None => println!("minimal P: not reached"),
            }
            Ok(())
        }
        Command::MiaEval { suspects, references, out } => {
            let p = io::read_features(suspects)?;
            let u = io::read_features(references)?;
            let m = di::mia_eval(&p, &u)?;
            io::emit_json(out.as_deref(), &m)?;
            print_attack_table(&m);
            Ok(())
        }
        Command::Audit(args) => cmd_audit(args, &file, seed),
        Command::Report { report } => {
            let text = io::read_to_string(report)?;
            let v: DiVerdict = serde_json::from_str(&text).map_err(|e| {
                CliError::Core(dinfer::Error::SchemaViolation { sample_id: report.display().to_string(), field: e.to_string() })
            })?;
            print_verdict(&v);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
