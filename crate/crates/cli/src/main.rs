//! Command-line front end: synthetic data, partition inspection, training
//! runs, cross-run reports and closed-form overhead tables.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use cloudlet_stgcn::accounting::{
    aggregation_flops_per_epoch, feature_bytes_per_epoch, holder_sizes, model_bytes_per_epoch,
    training_flops_per_epoch, OverheadRow, Setup, BYTES_PER_MB,
};
use cloudlet_stgcn::config::ExperimentConfig;
use cloudlet_stgcn::dataset::{make_windows, save_series, Split};
use cloudlet_stgcn::graph::write_sensors;
use cloudlet_stgcn::model::ModelParams;
use cloudlet_stgcn::output::{self, MetricRow};
use cloudlet_stgcn::partition::suggest_positions;
use cloudlet_stgcn::protocols::{self, GOSSIP_BUFFER};

#[derive(Parser)]
#[command(
    name = "cloudlet-stgcn",
    version,
    about = "Simulate ST-GCN traffic forecasting trained over cloudlets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured synthetic dataset as CSV files.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Assign sensors to cloudlets and write the ownership and exchange plan.
    Partition {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also print k-means suggested positions for this many cloudlets.
        #[arg(long)]
        suggest: Option<usize>,
    },
    /// Train every configured horizon and write a run directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Parent folder; the run directory is named from the config hash.
        #[arg(long, default_value = "runs")]
        out_root: PathBuf,
    },
    /// Join run directories into comparison tables.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Write `report_metrics.csv` and `report_overhead.csv` here
        /// instead of printing.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Closed-form per-epoch overhead of all four setups for a config.
    Account {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = dispatch(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { config, out } => synth(&config, &out),
        Command::Partition {
            config,
            out,
            suggest,
        } => partition(&config, &out, suggest),
        Command::Run { config, out_root } => run(&config, &out_root),
        Command::Report { runs, out } => report(&runs, out.as_deref()),
        Command::Account { config } => account(&config),
    }
}

fn load(config: &Path) -> Result<ExperimentConfig> {
    Ok(ExperimentConfig::load(config)?)
}

fn synth(config: &Path, out: &Path) -> Result<()> {
    let cfg = load(config)?;
    if cfg.dataset.synth.is_none() {
        bail!("config has no [dataset.synth] section");
    }
    let (graph, series) = cfg.load_inputs()?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    save_series(&out.join("speeds.csv"), &series)?;
    write_sensors(&out.join("sensors.csv"), &graph.ids, &graph.coords)?;
    println!(
        "wrote {} sensors x {} timesteps ({} graph edges) to {}",
        graph.n(),
        series.timesteps(),
        graph.edge_count(),
        out.display()
    );
    Ok(())
}

fn partition(config: &Path, out: &Path, suggest: Option<usize>) -> Result<()> {
    let cfg = load(config)?;
    let (graph, _) = cfg.load_inputs()?;
    let part = cfg.build_partition(&graph)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    part.write_owner_csv(&out.join(output::PARTITION_FILE), &graph.ids)?;
    part.write_plan_csv(&out.join(output::PLAN_FILE), &graph.ids)?;
    println!("cloudlet,owned,halo,degree");
    for c in 0..part.n_cloudlets() {
        println!(
            "{c},{},{},{}",
            part.owned[c].len(),
            part.halo[c].len(),
            part.degree(c)
        );
    }
    println!(
        "hops {} duplication_factor {}",
        part.hops,
        part.duplication_factor()
    );
    if let Some(k) = suggest {
        println!("suggested positions (advisory):");
        for p in suggest_positions(&graph.coords, k, 0)? {
            println!("{},{}", p.lat, p.lon);
        }
    }
    Ok(())
}

fn run(config: &Path, out_root: &Path) -> Result<()> {
    let cfg = load(config)?;
    let (graph, series) = cfg.load_inputs()?;
    let part = cfg.build_partition(&graph)?;
    let run_cfg = cfg.run_config();
    let mut results = Vec::with_capacity(cfg.horizons.len());
    for &h in &cfg.horizons {
        let data = make_windows(&series, h)?;
        log::info!(
            "horizon {h}: {} training samples",
            data.range(Split::Train).len()
        );
        results.push(protocols::run(&data, &graph, &part, &run_cfg)?);
    }
    let dir = out_root.join(cfg.run_dir_name());
    output::write_run_dir(&dir, &cfg, &part, &graph.ids, &results)?;
    println!("{}", dir.display());
    Ok(())
}

fn report(runs: &[PathBuf], out: Option<&Path>) -> Result<()> {
    let mut metrics: Vec<MetricRow> = Vec::new();
    let mut overhead: Vec<OverheadRow> = Vec::new();
    for dir in runs {
        let cfg = output::read_config(dir).with_context(|| format!("reading {}", dir.display()))?;
        let rows = output::read_metrics(dir)?;
        metrics.extend(rows.into_iter().filter(|r| r.scope == "global"));
        overhead.push(output::overhead_from_ledger(
            cfg.training.setup,
            &output::read_ledger(dir)?,
        ));
    }
    metrics.sort_by_key(|r| (r.setup, r.horizon));
    overhead.sort_by_key(|r| r.setup);

    let mut m = csv::Writer::from_writer(Vec::new());
    m.write_record(["setup", "horizon", "MAE", "RMSE", "WMAPE"])?;
    for r in &metrics {
        m.write_record([
            r.setup.name().to_string(),
            r.horizon.to_string(),
            r.mae.to_string(),
            r.rmse.to_string(),
            r.wmape.to_string(),
        ])?;
    }
    let m = m.into_inner()?;
    let o = overhead_csv(&overhead)?;
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join("report_metrics.csv"), m)?;
            std::fs::write(dir.join("report_overhead.csv"), o)?;
            println!("wrote reports to {}", dir.display());
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(&m)?;
            writeln!(stdout)?;
            stdout.write_all(&o)?;
        }
    }
    Ok(())
}

fn overhead_csv(rows: &[OverheadRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "setup",
        "model_mb_per_epoch",
        "training_flops_per_epoch",
        "aggregation_flops_per_epoch",
        "feature_mb_per_epoch",
    ])?;
    for r in rows {
        w.write_record([
            r.setup.name().to_string(),
            r.model_mb_per_epoch.to_string(),
            r.training_flops_per_epoch.to_string(),
            r.aggregation_flops_per_epoch.to_string(),
            r.feature_mb_per_epoch.to_string(),
        ])?;
    }
    Ok(w.into_inner()?)
}

fn account(config: &Path) -> Result<()> {
    let cfg = load(config)?;
    let (graph, series) = cfg.load_inputs()?;
    let part = cfg.build_partition(&graph)?;
    let h = cfg.horizons[0];
    let data = make_windows(&series, h)?;
    let p = ModelParams::zeros(&cfg.model);
    let samples = data.range(Split::Train).len() * cfg.training.local_epochs;
    // gossip at full buffers: an upper bound
    let full = vec![GOSSIP_BUFFER; part.n_cloudlets()];
    let rows: Vec<OverheadRow> = Setup::ALL
        .into_iter()
        .map(|s| OverheadRow {
            setup: s,
            model_mb_per_epoch: model_bytes_per_epoch(
                s,
                part.n_cloudlets(),
                part.degree_sum(),
                p.param_bytes(),
            ) as f64
                / BYTES_PER_MB,
            training_flops_per_epoch: training_flops_per_epoch(
                &cfg.model,
                samples,
                &holder_sizes(s, &part),
            ) as f64,
            aggregation_flops_per_epoch: aggregation_flops_per_epoch(
                s,
                &part,
                p.param_count(),
                &full,
            ) as f64,
            feature_mb_per_epoch: feature_bytes_per_epoch(s, &part, data.train_timesteps()).total
                as f64
                / BYTES_PER_MB,
        })
        .collect();
    println!(
        "params {} ({} bytes/model), horizon {h}, duplication factor {}",
        p.param_count(),
        p.param_bytes(),
        part.duplication_factor()
    );
    std::io::stdout().write_all(&overhead_csv(&rows)?)?;
    Ok(())
}
