//! `loopfm` command-line driver.
//!
//! Stage commands read and write files under `<root>/seed_<n>/`, where the root is
//! `--out`, else `$LOOPFM_OUT`, else the current directory, joined with the config's
//! `output_dir`. Exit codes: 0 ok, 2 config, 3 verification failure, 4 data.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use loopfm::error::{Error, Result};
use loopfm::metrics::evaluate;
use loopfm::models::{Checkpoint, FeatureSchema, LayerSelector, VmModel};
use loopfm::pipeline::{
    ablation_json, build_store, encode_log, fit_ae, fit_codec, load_dataset, predict_vm, run_ablation,
    run_streaming_experiment, run_theory_suite, train_fm, train_vm, world_spec, write_json, write_text, AblationAxis,
    ablation_tsv, Arm, CheckpointPolicy, CodeSet, Dataset, ExperimentConfig, FmLog, ReportBundle, TrainedFm,
    VmContext, AE_CHUNK, FM_TRAIN_CHUNKS, RUN_JSON, TEST_CHUNK, THEORY_JSON, VM_TRAIN_CHUNKS,
};
use loopfm::compression::MatryoshkaAe;
use loopfm::seqstore::SeqStore;
use loopfm::synthworld::{ingest_event_log, save_event_log};

const EVENTS: &str = "events.tsv";
const FM: &str = "fm.lfmm";
const LOG: &str = "fm_log.lfmm";
const AE: &str = "ae.lfmm";
const CODES: &str = "codes.lfmm";
const STORE: &str = "store.lfsq";

#[derive(Parser)]
#[command(name = "loopfm", version, about = "Foundation-model to vertical-model transfer pipeline")]
struct Cli {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output root; overrides LOOPFM_OUT.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write the seed's event log (synthetic draw or the configured ingested log).
    GenWorld(SeedArg),
    /// Train the teacher on chunks 1-4.
    TrainFm(SeedArg),
    /// Log soft labels and selected-layer embeddings for chunks 5-8.
    Extract(SeedArg),
    /// Fit the Matryoshka autoencoder on chunk-5 embeddings.
    TrainAe(SeedArg),
    /// Encode logged embeddings and fit the configured codec.
    Quantize(SeedArg),
    /// Fill the embedding-sequence store from the quantized codes.
    BuildStore(SeedArg),
    /// Train one VM arm for one pass over chunks 5-7.
    TrainVm {
        #[arg(long)]
        arm: Arm,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// With --arm: score a staged VM on chunk 8. Without: run every arm and seed end to end.
    Eval {
        #[arg(long)]
        arm: Option<Arm>,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Run one ablation axis over the configured seeds.
    Ablate {
        /// layer, seqlen, dim, codec, checkpoint or deltasweep
        axis: AblationAxis,
    },
    /// Run the exact information-theory checks; exit 3 on any failure.
    VerifyTheory,
    /// Render tables and a text summary from the JSON artifacts in the output root.
    Report,
}

#[derive(clap::Args)]
struct SeedArg {
    /// Experiment seed; defaults to the config's first seed.
    #[arg(long)]
    seed: Option<u64>,
}

struct Ctx {
    cfg: ExperimentConfig,
    root: PathBuf,
}

impl Ctx {
    fn seed(&self, s: &SeedArg) -> u64 {
        s.seed.unwrap_or(self.cfg.seeds[0])
    }

    fn stage_dir(&self, seed: u64) -> PathBuf {
        self.root.join(format!("seed_{seed}"))
    }

    /// The seed's staged event log, with the feature schema the config implies.
    fn dataset(&self, dir: &Path) -> Result<Dataset> {
        let (log, _) = ingest_event_log(dir.join(EVENTS))?;
        let schema = match &self.cfg.data.event_log {
            Some(_) => FeatureSchema::from_log(&log.schema, &self.cfg.data.item_features, &self.cfg.data.user_features)?,
            None => FeatureSchema::from_world(&world_spec(&self.cfg))?,
        };
        Dataset::new(log, schema)
    }

    fn fixed_only(&self) -> Result<()> {
        if self.cfg.checkpoint == CheckpointPolicy::PerSplit {
            return Err(Error::Config(
                "stage commands follow the fixed checkpoint; use `eval` or `ablate checkpoint` for per_split".into(),
            ));
        }
        Ok(())
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        None => Ok(ExperimentConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            ExperimentConfig::from_toml_str(&text)
        }
    }
}

fn output_root(cli_out: Option<PathBuf>, cfg: &ExperimentConfig) -> PathBuf {
    let base = cli_out
        .or_else(|| std::env::var_os("LOOPFM_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    match &cfg.output_dir {
        Some(d) => base.join(d),
        None => base,
    }
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })
}

fn vm_file(arm: Arm) -> String {
    format!("vm_{}.lfmm", arm.name())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(cli.config.as_deref())?;
    let ctx = Ctx { root: output_root(cli.out, &cfg), cfg };
    let cfg = &ctx.cfg;
    match cli.cmd {
        Cmd::GenWorld(s) => {
            let seed = ctx.seed(&s);
            let dir = ctx.stage_dir(seed);
            mkdir(&dir)?;
            let ds = load_dataset(cfg, seed)?;
            save_event_log(&ds.log, dir.join(EVENTS))?;
            println!("wrote {} events to {}", ds.events().len(), dir.join(EVENTS).display());
        }
        Cmd::TrainFm(s) => {
            let seed = ctx.seed(&s);
            let dir = ctx.stage_dir(seed);
            let ds = ctx.dataset(&dir)?;
            let fm = train_fm(&ds, &cfg.fm, FM_TRAIN_CHUNKS, &ds.all_extras(), seed)?;
            fm.to_checkpoint().save(dir.join(FM))?;
            let test = ds.indices(TEST_CHUNK..=TEST_CHUNK);
            let e = fm.evaluate(&ds, &test)?;
            println!("fm epoch losses {:?}; chunk {TEST_CHUNK} AUC {:.4} NE {:.4}", fm.epoch_losses, e.auc, e.ne);
        }
        Cmd::Extract(s) => {
            ctx.fixed_only()?;
            let dir = ctx.stage_dir(ctx.seed(&s));
            let ds = ctx.dataset(&dir)?;
            let fm = TrainedFm::from_checkpoint(&Checkpoint::load(dir.join(FM))?)?;
            let log = fm.log(&ds, &ds.indices(AE_CHUNK..=TEST_CHUNK), cfg.transfer.selector)?;
            log.to_checkpoint(ds.schema.hash(), cfg.transfer.selector)?.save(dir.join(LOG))?;
            println!("logged {} events, {} columns ({})", log.indices.len(), log.emb.cols(), cfg.transfer.selector);
        }
        Cmd::TrainAe(s) => {
            ctx.fixed_only()?;
            let seed = ctx.seed(&s);
            let dir = ctx.stage_dir(seed);
            let ds = ctx.dataset(&dir)?;
            let log = staged_log(&ctx, &ds, &dir)?;
            match fit_ae(&ds, &log, &cfg.transfer, &cfg.ae, AE_CHUNK, seed)? {
                Some((ae, params, trace)) => {
                    ae.checkpoint(&params).save(dir.join(AE))?;
                    println!("ae epoch losses {:?}", trace.epoch_losses);
                }
                None => println!("softlabel_only: no autoencoder needed"),
            }
        }
        Cmd::Quantize(s) => {
            ctx.fixed_only()?;
            let seed = ctx.seed(&s);
            let dir = ctx.stage_dir(seed);
            let ds = ctx.dataset(&dir)?;
            let log = staged_log(&ctx, &ds, &dir)?;
            let ae = if cfg.transfer.selector != LayerSelector::SoftlabelOnly {
                Some(MatryoshkaAe::from_checkpoint(&Checkpoint::load(dir.join(AE))?)?)
            } else {
                None
            };
            let codes = encode_log(&log, &cfg.transfer, ae.as_ref().map(|(a, p)| (a, p)))?;
            let codec = fit_codec(&ds, &log, &codes, &cfg.transfer, AE_CHUNK, seed)?;
            println!("{} codes of width {} with codec {}", codes.rows(), codes.cols(), codec.name());
            CodeSet { codes, codec }.to_checkpoint(ds.schema.hash())?.save(dir.join(CODES))?;
        }
        Cmd::BuildStore(s) => {
            ctx.fixed_only()?;
            let dir = ctx.stage_dir(ctx.seed(&s));
            let ds = ctx.dataset(&dir)?;
            let log = staged_log(&ctx, &ds, &dir)?;
            let cs = CodeSet::from_checkpoint(&Checkpoint::load(dir.join(CODES))?, &ds.schema.hash())?;
            let store = build_store(&ds, &log, &cs.codes, &cs.codec)?;
            store.persist(dir.join(STORE))?;
            println!("store holds {} records of dim {}", store.len(), store.dim());
        }
        Cmd::TrainVm { arm, seed } => {
            let seed = ctx.seed(&seed);
            let dir = ctx.stage_dir(seed);
            let ds = ctx.dataset(&dir)?;
            let (soft, store) = vm_inputs(&ctx, &ds, &dir, arm)?;
            let vctx = VmContext { soft: &soft, store: store.as_ref(), transfer: &cfg.transfer };
            let (model, params) = train_vm(&ds, arm, &cfg.vm, &vctx, &ds.indices(VM_TRAIN_CHUNKS), seed)?;
            model.checkpoint(&params).save(dir.join(vm_file(arm)))?;
            println!("trained {} on {} events", arm.name(), ds.indices(VM_TRAIN_CHUNKS).len());
        }
        Cmd::Eval { arm: Some(arm), seed } => {
            let dir = ctx.stage_dir(ctx.seed(&seed));
            let ds = ctx.dataset(&dir)?;
            let (model, params) = VmModel::from_checkpoint(&Checkpoint::load(dir.join(vm_file(arm)))?)?;
            let store = if model.has_branch() { Some(SeqStore::load(dir.join(STORE))?) } else { None };
            let test = ds.indices(TEST_CHUNK..=TEST_CHUNK);
            let preds = predict_vm(&ds, &model, &params, store.as_ref(), &cfg.transfer, &test)?;
            let e = evaluate(&preds, &ds.labels(&test))?;
            write_json(dir.join(format!("eval_{}.json", arm.name())), &e)?;
            println!("{} chunk {TEST_CHUNK}: AUC {:.4} logloss {:.4} NE {:.4}", arm.name(), e.auc, e.logloss, e.ne);
        }
        Cmd::Eval { arm: None, .. } => {
            let report = run_streaming_experiment(cfg)?;
            write_json(ctx.root.join(RUN_JSON), &report)?;
            let bundle = ReportBundle { run: Some(report), ..Default::default() };
            print!("{}", bundle.render());
        }
        Cmd::Ablate { axis } => {
            let table = run_ablation(cfg, axis)?;
            write_json(ctx.root.join(ablation_json(axis)), &table)?;
            let text = ablation_tsv(&table);
            write_text(ctx.root.join(format!("ablation_{}.tsv", axis.name())), &text)?;
            print!("{text}");
        }
        Cmd::VerifyTheory => {
            let summary = run_theory_suite(&cfg.theory)?;
            write_json(ctx.root.join(THEORY_JSON), &summary)?;
            let bundle = ReportBundle { theory: Some(summary), ..Default::default() };
            print!("{}", bundle.render());
            bundle.theory.expect("set above").into_result()?;
        }
        Cmd::Report => {
            let bundle = ReportBundle::load(&ctx.root)?;
            if bundle.is_empty() {
                return Err(Error::Data(format!(
                    "no run, ablation or theory artifacts under {}",
                    ctx.root.display()
                )));
            }
            let files = bundle.write_tables(&ctx.root)?;
            print!("{}", bundle.render());
            println!("wrote {} files under {}", files.len(), ctx.root.display());
        }
    }
    Ok(())
}

fn staged_log(ctx: &Ctx, ds: &Dataset, dir: &Path) -> Result<FmLog> {
    let (log, sel) = FmLog::from_checkpoint(&Checkpoint::load(dir.join(LOG))?, &ds.schema.hash())?;
    if sel != ctx.cfg.transfer.selector {
        return Err(Error::Config(format!(
            "staged log used selector {sel}, config asks for {}; rerun extract",
            ctx.cfg.transfer.selector
        )));
    }
    Ok(log)
}

fn vm_inputs(ctx: &Ctx, ds: &Dataset, dir: &Path, arm: Arm) -> Result<(Vec<f64>, Option<SeqStore>)> {
    let soft = if arm.uses_kd() {
        staged_log(ctx, ds, dir)?.soft_by_event(ds.events().len())
    } else {
        vec![f64::NAN; ds.events().len()]
    };
    let store = if arm.uses_sequence() { Some(SeqStore::load(dir.join(STORE))?) } else { None };
    Ok((soft, store))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
