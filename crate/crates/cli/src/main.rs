use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use macau_core::analysis::{
    interaction_difference, rank_proteins, rmse, select_divergent_dims, InteractionDifferenceTable,
    MeasurementLatentReport,
};
use macau_core::io::output::{self, load_snapshot, read_measurement_latents};
use macau_core::io::synthetic::{gen_synthetic, write_synthetic, SyntheticSpec};
use macau_core::io::tensor::write_header;
use macau_core::io::{format_sig6, load_manifest, prepare_run, read_tensor_cells};
use macau_core::{run_sampler, SamplerConfig};

#[derive(Parser)]
#[command(name = "macau", version, about = "Bayesian tensor factorization with sparse side information")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug)]
enum Threads {
    Auto,
    Count(usize),
}

impl FromStr for Threads {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "auto" {
            return Ok(Threads::Auto);
        }
        match s.parse::<usize>() {
            Ok(n) if n > 0 => Ok(Threads::Count(n)),
            _ => Err(format!("expected a positive thread count or 'auto', got '{s}'")),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the Gibbs sampler on a manifest and write the run directory.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// Overrides the manifest seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<Threads>,
        /// Overrides the manifest output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Posterior-mean predictions for arbitrary cells of a finished run.
    Predict {
        /// Run directory written by `train`.
        #[arg(long)]
        out: PathBuf,
        /// TSV of cells (`mode0<TAB>mode1<TAB>…`, value column optional).
        #[arg(long)]
        cells: PathBuf,
        /// Write here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// RMSE, divergent latent dimensions and the protein ranking of a run.
    Analyze {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3.0)]
        tau: f64,
        #[arg(long, default_value_t = 10)]
        top_n: usize,
    },
    /// Generate a synthetic dataset with a ready-to-train manifest.
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// TOML file overriding generator settings.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
}

fn train(manifest: &Path, seed: Option<u64>, threads: Option<Threads>, out: Option<PathBuf>) -> Result<()> {
    let mut m = load_manifest(manifest).with_context(|| format!("loading {}", manifest.display()))?;
    if let Some(s) = seed {
        m.sampler.seed = s;
    }
    match threads {
        Some(Threads::Auto) => m.sampler.threads = None,
        Some(Threads::Count(n)) => m.sampler.threads = Some(n),
        None => {}
    }
    let dir = output::output_dir(&m, out)?;
    let inputs = prepare_run(&m)?;
    eprintln!(
        "training on {} cells ({} test), dims {:?}, D = {}, {} + {} sweeps",
        inputs.train.len(),
        inputs.test.as_ref().map_or(0, |t| t.len()),
        inputs.train.mode_dims(),
        m.sampler.num_latent,
        m.sampler.burn_in,
        m.sampler.n_samples
    );
    let summary = run_sampler(&inputs.train, &inputs.modes, inputs.test.as_ref(), &m.sampler)?;
    output::write_run_outputs(&dir, &m, &inputs, &summary)?;
    if let Some(r) = inputs.test.as_ref().and_then(|t| summary.test_rmse(t)) {
        eprintln!("test RMSE {}", format_sig6(r));
    }
    eprintln!("wrote {}", dir.display());
    Ok(())
}

fn predict(out: &Path, cells: &Path, output: Option<PathBuf>) -> Result<()> {
    let snap = load_snapshot(out)?;
    let cells_in = read_tensor_cells(cells, false)?;
    if cells_in.n_modes != snap.mode_dims.len() {
        bail!(
            "{}: cells have {} modes but the model has {}",
            cells.display(),
            cells_in.n_modes,
            snap.mode_dims.len()
        );
    }
    let mut buf = Vec::new();
    write_header(&mut buf, cells_in.n_modes, true)?;
    for (row, idx) in cells_in.indices.iter().enumerate() {
        if let Some(m) = (0..idx.len()).find(|&m| idx[m] >= snap.mode_dims[m]) {
            bail!(
                "{}: cell {idx:?} (data row {}) is out of range: mode {m} has {} entities",
                cells.display(),
                row + 1,
                snap.mode_dims[m]
            );
        }
        let p = snap.predict(idx)?;
        for i in idx {
            write!(buf, "{i}\t")?;
        }
        writeln!(buf, "{}", format_sig6(p))?;
    }
    match output {
        Some(path) => std::fs::write(&path, buf).with_context(|| format!("writing {}", path.display()))?,
        None => std::io::stdout().write_all(&buf)?,
    }
    Ok(())
}

fn analyze(out: &Path, tau: f64, top_n: usize) -> Result<()> {
    let test_cells = out.join(output::TEST_CELLS);
    if test_cells.is_file() {
        let actual = read_tensor_cells(&test_cells, true)?;
        let pred = read_tensor_cells(out.join(output::PREDICTIONS), true)?;
        if pred.indices != actual.indices {
            bail!("{}: predictions do not line up with the test cells", out.display());
        }
        let r = rmse(pred.values.as_deref().unwrap_or(&[]), actual.values.as_deref().unwrap_or(&[]))?;
        println!("test_rmse\t{}", format_sig6(r));
    }

    let (latents, norms) = read_measurement_latents(out.join(output::MEASUREMENT_LATENTS))?;
    let report = MeasurementLatentReport::from_parts(&latents, &norms);
    let dims = select_divergent_dims(&report.samples, (0, 1), tau)?;
    output::write_divergent_dims(out.join(output::DIVERGENT_DIMS), &dims)?;
    let selected: Vec<usize> = (0..dims.mask.len()).filter(|&d| dims.mask[d]).collect();
    println!("divergent_dims\t{selected:?}");
    if selected.is_empty() {
        eprintln!("no divergent dimensions at tau = {tau}; skipping the interaction-difference ranking");
        return Ok(());
    }

    let snap = load_snapshot(out)?;
    let table = match (&snap.samples, &snap.difference) {
        (Some(samples), _) if !samples.is_empty() => interaction_difference(samples, &dims.mask, (0, 1))?,
        (_, Some(online)) if online.mask == dims.mask => InteractionDifferenceTable::from_online(online)?,
        _ => bail!(
            "the run kept no per-sample latents for mask {selected:?}; retrain with keep_samples = true \
             or difference_mask set in the manifest's [sampler] table"
        ),
    };
    let ranking = rank_proteins(&table, top_n)?;
    output::write_chat_ranking(out.join(output::CHAT), &ranking)?;
    output::write_protein_lists(out.join(output::PROTEIN_RANKING), &ranking)?;
    let ids = |v: &[(usize, f64)]| v.iter().map(|e| e.0).collect::<Vec<_>>();
    println!("top\t{:?}", ids(&ranking.top));
    println!("bottom\t{:?}", ids(&ranking.bottom));
    Ok(())
}

fn gen(out: &Path, seed: Option<u64>, spec: Option<PathBuf>) -> Result<()> {
    let mut s = match &spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str::<SyntheticSpec>(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => SyntheticSpec::default(),
    };
    if let Some(seed) = seed {
        s.seed = seed;
    }
    let data = gen_synthetic(&s)?;
    let sampler = SamplerConfig {
        num_latent: 2 * s.num_latent,
        burn_in: 200,
        n_samples: 200,
        seed: s.seed,
        keep_samples: true,
        ..Default::default()
    };
    let manifest = write_synthetic(out, &data, &sampler)?;
    eprintln!(
        "wrote {} training and {} test cells; manifest {}",
        data.train.len(),
        data.test.len(),
        manifest.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { manifest, seed, threads, out } => train(&manifest, seed, threads, out),
        Command::Predict { out, cells, output } => predict(&out, &cells, output),
        Command::Analyze { out, tau, top_n } => analyze(&out, tau, top_n),
        Command::Gen { out, seed, spec } => gen(&out, seed, spec),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
