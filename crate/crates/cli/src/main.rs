mod config;
mod failure;
mod parse;
mod plot;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use squeezefit::estimator::{
    estimate_xi, pvalue_over_time, pvalue_time_to_csv, read_sweep, sweep_to_csv, sweep_xi,
    SmoothingParams,
};
use squeezefit::phasespace::{
    cloud_to_csv, ensemble_from_csv, ensemble_to_csv, read_cloud, snapshot_at, synth_experiment,
};
use squeezefit::sde::simulate_ensemble;

use config::RunConfig;
use failure::Failure;
use parse::parse_time;

#[derive(Parser, Debug)]
#[command(
    name = "squeezefit",
    version,
    about = "Estimate a Duffing non-linearity from squeezed phase-space clouds"
)]
struct Cli {
    /// Maximum worker threads (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct ConfigArg {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize reference clouds at the configured xi.
    Synth {
        #[command(flatten)]
        cfg: ConfigArg,
        /// Number of simulated experimental runs.
        #[arg(long)]
        runs: Option<usize>,
        /// Delay after the pulse, e.g. 77.5us. Repeat for several clouds.
        #[arg(long = "t-snap", required = true)]
        t_snap: Vec<String>,
        /// Pass the reference through the band-pass detection model.
        #[arg(long)]
        chain: bool,
        /// Non-linearity in um^-2 (default: the configured xi).
        #[arg(long, allow_hyphen_values = true)]
        xi: Option<f64>,
        /// Output file (one delay) or directory (several delays).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate an ensemble at one xi and write all trajectories.
    Simulate {
        #[command(flatten)]
        cfg: ConfigArg,
        /// Number of trajectories (default: sim.trajectories)
        #[arg(long)]
        runs: Option<usize>,
        /// Non-linearity in um^-2 (default: the configured xi).
        #[arg(long, allow_hyphen_values = true)]
        xi: Option<f64>,
        /// Simulated time after the pulse ends.
        #[arg(long = "t-end", default_value = "100us")]
        t_end: String,
        /// Output ensemble CSV (default: output_dir/ensemble.csv)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Extract a cloud from an ensemble file.
    Snapshot {
        /// Ensemble CSV written by `simulate`
        #[arg(long = "in")]
        input: PathBuf,
        /// Delay after the pulse, e.g. 20us
        #[arg(long = "t-snap")]
        t_snap: String,
        /// Output cloud CSV
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep xi against a reference cloud.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArg,
        /// Reference cloud CSV
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Grid `lo:hi:n` in um^-2.
        #[arg(long, allow_hyphen_values = true)]
        grid: Option<String>,
        /// Simulations per grid point.
        #[arg(long)]
        runs: Option<usize>,
        /// Output sweep CSV (default: output_dir/sweep.csv)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Smooth and fit a sweep to estimate xi.
    Estimate {
        /// Sweep CSV written by `sweep`
        #[arg(long = "in")]
        input: PathBuf,
        /// Configuration supplying smoothing settings
        #[arg(long)]
        config: Option<PathBuf>,
        /// Savitzky-Golay window (odd)
        #[arg(long)]
        window: Option<usize>,
        /// Savitzky-Golay polynomial order
        #[arg(long)]
        order: Option<usize>,
        /// Fit the Gaussian to raw rather than smoothed p-values
        #[arg(long = "fit-raw")]
        fit_raw: bool,
        /// Also write the summary to this file
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// P-value against reference clouds at several delays.
    PvalueTime {
        #[command(flatten)]
        cfg: ConfigArg,
        /// Reference cloud files; their delays set the time points.
        #[arg(long = "ref", required = true)]
        references: Vec<PathBuf>,
        /// Candidate xi in um^-2 (default: the configured xi).
        #[arg(long, allow_hyphen_values = true)]
        xi: Option<f64>,
        /// Simulations per delay (default: sweep.trajectories)
        #[arg(long)]
        runs: Option<usize>,
        /// Output CSV (default: output_dir/pvalue_time.csv)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a cloud, sweep or p-value-vs-time CSV as SVG.
    Plot {
        /// Cloud, sweep or p-value-vs-time CSV
        #[arg(long = "in")]
        input: PathBuf,
        /// Output SVG file
        #[arg(long)]
        out: PathBuf,
        /// Plot cloud velocity in m/s instead of v / omega0.
        #[arg(long)]
        physical: bool,
    },
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.threads {
        Some(0) => Err(Failure::usage("--threads must be >= 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Failure::usage(e.to_string()))
            .and_then(|pool| pool.install(|| run(cli.command))),
        None => run(cli.command),
    };
    if let Err(e) = result {
        eprintln!("{}", e.json());
        std::process::exit(e.exit_code());
    }
}

struct Loaded {
    cfg: RunConfig,
    source: String,
}

impl Loaded {
    fn new(arg: &ConfigArg) -> Result<Self, Failure> {
        Self::from_path(arg.config.as_deref(), arg.seed)
    }

    fn from_path(path: Option<&Path>, seed: Option<u64>) -> Result<Self, Failure> {
        let (mut cfg, source) = match path {
            Some(p) => (RunConfig::load(p)?, p.display().to_string()),
            None => (RunConfig::default(), "defaults".to_string()),
        };
        if let Some(s) = seed {
            cfg.seed = s;
        }
        Ok(Self { cfg, source })
    }

    fn header(&self, command: &str) -> Vec<(String, String)> {
        vec![
            ("command".into(), command.into()),
            ("seed".into(), self.cfg.seed.to_string()),
            ("config".into(), self.source.clone()),
            ("config_json".into(), self.cfg.to_json()),
        ]
    }

    fn default_out(&self, name: &str) -> Result<PathBuf, Failure> {
        std::fs::create_dir_all(&self.cfg.output_dir)?;
        Ok(self.cfg.output_dir.join(name))
    }
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text).map_err(|e| Failure {
        kind: "io",
        message: format!("{}: {e}", path.display()),
    })
}

fn read_text(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn time_tag(t: f64) -> String {
    format!("{}us", (t * 1e7).round() / 10.0)
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Synth {
            cfg,
            runs,
            t_snap,
            chain,
            xi,
            out,
        } => {
            let l = Loaded::new(&cfg)?;
            let mut params = l.cfg.params()?;
            if let Some(x) = xi {
                params = params.with_xi_um2(x).map_err(Failure::config_from)?;
            }
            let pulse = l.cfg.pulse_schedule(&params)?;
            let times = t_snap
                .iter()
                .map(|s| parse_time(s))
                .collect::<Result<Vec<_>, _>>()?;
            let t_max = times.iter().copied().fold(0.0, f64::max);
            let n = runs.unwrap_or(l.cfg.sim.trajectories);
            let sim = l
                .cfg
                .sim_config(n, pulse.t_end() + t_max + l.cfg.sim.sample_dt_us * 1e-6);
            sim.validate(&params)?;
            let chain = if chain || l.cfg.chain.enabled {
                Some(l.cfg.chain(&params)?)
            } else {
                None
            };
            let snaps = synth_experiment(&params, &pulse, &sim, chain.as_ref(), &times)?;
            let mut header = l.header("synth");
            header.push((
                "xi_um2".into(),
                format!("{}", squeezefit::units::xi_to_um2(params.xi())),
            ));
            header.push(("chain".into(), chain.is_some().to_string()));
            for snap in &snaps {
                let mut h = header.clone();
                h.push(("escaped".into(), snap.escaped.to_string()));
                let path = match (&out, snaps.len()) {
                    (Some(p), 1) => p.clone(),
                    (Some(dir), _) => dir.join(format!("ref_{}.csv", time_tag(snap.cloud.t_snap))),
                    (None, _) => {
                        l.default_out(&format!("ref_{}.csv", time_tag(snap.cloud.t_snap)))?
                    }
                };
                write(&path, &cloud_to_csv(&snap.cloud, &h))?;
                if snap.escaped > 0 {
                    eprintln!(
                        "warning: {} of {n} runs escaped and were excluded",
                        snap.escaped
                    );
                }
                println!("{}", path.display());
            }
            Ok(())
        }
        Command::Simulate {
            cfg,
            runs,
            xi,
            t_end,
            out,
        } => {
            let l = Loaded::new(&cfg)?;
            let mut params = l.cfg.params()?;
            if let Some(x) = xi {
                params = params.with_xi_um2(x).map_err(Failure::config_from)?;
            }
            let pulse = l.cfg.pulse_schedule(&params)?;
            let n = runs.unwrap_or(l.cfg.sim.trajectories);
            let sim = l.cfg.sim_config(n, pulse.t_end() + parse_time(&t_end)?);
            let e = simulate_ensemble(&params, &pulse, &sim)?;
            let path = match out {
                Some(p) => p,
                None => l.default_out("ensemble.csv")?,
            };
            write(&path, &ensemble_to_csv(&e, &l.header("simulate")))?;
            if e.escaped_count() > 0 {
                eprintln!("warning: {} of {n} trajectories escaped", e.escaped_count());
            }
            println!("{}", path.display());
            Ok(())
        }
        Command::Snapshot { input, t_snap, out } => {
            let e = ensemble_from_csv(&read_text(&input)?)?;
            let snap = snapshot_at(&e, parse_time(&t_snap)?)?;
            let header = vec![
                ("command".into(), "snapshot".into()),
                ("seed".into(), e.config.seed.to_string()),
                ("ensemble".into(), input.display().to_string()),
                ("escaped".into(), snap.escaped.to_string()),
            ];
            write(&out, &cloud_to_csv(&snap.cloud, &header))?;
            println!("{}", out.display());
            Ok(())
        }
        Command::Sweep {
            cfg,
            reference,
            grid,
            runs,
            out,
        } => {
            let l = Loaded::new(&cfg)?;
            let params = l.cfg.params()?;
            let pulse = l.cfg.pulse_schedule(&params)?;
            let mut sweep = l.cfg.sweep_config(grid.as_deref())?;
            if let Some(n) = runs {
                sweep.n_trajectories = n;
            }
            let r = read_cloud(&reference)?;
            let mut result = sweep_xi(&r, &sweep, &params, &pulse)?;
            result.resmooth(&l.cfg.smoothing(result.len()));
            for w in &result.warnings {
                eprintln!("warning: {w}");
            }
            let mut header = l.header("sweep");
            header.push(("reference".into(), reference.display().to_string()));
            header.push(("grid_points".into(), result.len().to_string()));
            header.push((
                "trajectories_per_xi".into(),
                sweep.n_trajectories.to_string(),
            ));
            let path = match out {
                Some(p) => p,
                None => l.default_out("sweep.csv")?,
            };
            write(&path, &sweep_to_csv(&result, &header))?;
            println!("{}", path.display());
            Ok(())
        }
        Command::Estimate {
            input,
            config,
            window,
            order,
            fit_raw,
            out,
        } => {
            let l = Loaded::from_path(config.as_deref(), None)?;
            let s = read_sweep(&input).map_err(|e| match e {
                squeezefit::Error::Io(io) => Failure::input(format!("{}: {io}", input.display())),
                other => other.into(),
            })?;
            let base = if config.is_some() {
                l.cfg.smoothing(s.len())
            } else {
                SmoothingParams::for_grid(s.len())
            };
            let smoothing = SmoothingParams {
                window: window.unwrap_or(base.window),
                order: order.unwrap_or(base.order),
                fit_raw: fit_raw || base.fit_raw,
            };
            let mut est = estimate_xi(&s, &smoothing)?;
            est.warnings
                .extend(s.warnings.iter().map(|w| format!("sweep: {w}")));
            let mut text = format!("# sweep={}\n", input.display());
            text.push_str(&format!(
                "# smoothing_window={} smoothing_order={} fit_raw={}\n",
                smoothing.window, smoothing.order, smoothing.fit_raw
            ));
            text.push_str(&est.summary());
            text.push_str(&est.json_line());
            text.push('\n');
            print!("{text}");
            if let Some(p) = out {
                write(&p, &text)?;
            }
            Ok(())
        }
        Command::PvalueTime {
            cfg,
            references,
            xi,
            runs,
            out,
        } => {
            let l = Loaded::new(&cfg)?;
            let params = l.cfg.params()?;
            let pulse = l.cfg.pulse_schedule(&params)?;
            let clouds = references
                .iter()
                .map(|p| {
                    read_cloud(p).map_err(|e| match e {
                        squeezefit::Error::Io(io) => {
                            Failure::input(format!("{}: {io}", p.display()))
                        }
                        other => other.into(),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            let mut times: Vec<f64> = clouds.iter().map(|c| c.t_snap).collect();
            times.sort_by(f64::total_cmp);
            let xi_um2 = xi.unwrap_or(l.cfg.oscillator.xi_um2);
            let n = runs.unwrap_or(l.cfg.sweep.trajectories);
            let sim = l.cfg.sim_config(n, 0.0);
            let series = pvalue_over_time(
                &clouds,
                &times,
                xi_um2,
                &params,
                &pulse,
                &sim,
                l.cfg.pvalue_method(),
            )?;
            let mut header = l.header("pvalue-time");
            header.push(("xi_um2".into(), xi_um2.to_string()));
            let path = match out {
                Some(p) => p,
                None => l.default_out("pvalue_time.csv")?,
            };
            write(&path, &pvalue_time_to_csv(&series, &header))?;
            println!("{}", path.display());
            Ok(())
        }
        Command::Plot {
            input,
            out,
            physical,
        } => {
            let svg = plot::render(&read_text(&input)?, physical)?;
            write(&out, &svg)?;
            println!("{}", out.display());
            Ok(())
        }
    }
}
