use std::io::{self, BufReader, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mrxai::bench::{self, BenchError, ConfigOverrides, RunConfig, SynthParams};
use mrxai::explain::{self, ExplainError, ExplainerConfig, Target, Tool, ToolParams};
use mrxai::extract::{extract_minimal_mask, ExtractionParams};
use mrxai::imaging::io::{load_image, load_mask, load_saliency, save_heat, save_mask, save_saliency, IoError};
use mrxai::imaging::Connectivity;
use mrxai::metrics::{pdc, PdcParams};
use mrxai::oracle::{wire, Oracle, OracleError, OracleSpec};

#[derive(Parser)]
#[command(name = "mrxai", version, about = "Black-box saliency explainers and penalized-dice scoring")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct OracleArgs {
    /// blob:<window>:<tau>, tcp:<host>:<port> or cmd:<program args...>
    #[arg(long, env = "MRX_ORACLE")]
    oracle: Option<String>,
    /// Reconnect attempts when a remote oracle drops.
    #[arg(long, default_value_t = 0)]
    retries: u32,
}

impl OracleArgs {
    fn spec(&self) -> Result<OracleSpec, Failure> {
        let text = self
            .oracle
            .as_deref()
            .ok_or_else(|| Failure::Config("no oracle: pass --oracle or set MRX_ORACLE".into()))?;
        text.parse().map_err(|e: OracleError| Failure::Config(e.to_string()))
    }

    fn build(&self) -> Result<Box<dyn Oracle>, Failure> {
        Ok(self.spec()?.build(self.retries)?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic blob dataset and its manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 8)]
        blob_min: usize,
        #[arg(long, default_value_t = 16)]
        blob_max: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Explain one image with one tool.
    Explain {
        #[arg(long)]
        tool: Tool,
        #[arg(long)]
        image: PathBuf,
        /// Directory for saliency.mrxs, heat.png and (for rex and lime) mask.png.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        budget: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Explain this label instead of the oracle's label for the image.
        #[arg(long)]
        label: Option<String>,
        #[arg(long, default_value_t = 40)]
        segments: usize,
        /// Blur window for SHAP occlusion.
        #[arg(long, default_value_t = 63)]
        shap_blur: usize,
        #[command(flatten)]
        oracle: OracleArgs,
    },
    /// Turn a saliency grid into a minimal passing mask.
    Extract {
        #[arg(long)]
        saliency: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value_t = 0.01)]
        step: f64,
        #[arg(long)]
        min_conf: Option<f64>,
        #[arg(long)]
        label: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        oracle: OracleArgs,
    },
    /// Penalized dice of an explanation mask against an annotation.
    Score {
        #[arg(long)]
        exp: PathBuf,
        #[arg(long)]
        hpe: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        s: f64,
        #[arg(long, default_value_t = 1.0)]
        b: f64,
        /// 4 or 8.
        #[arg(long, default_value_t = 8)]
        connectivity: u8,
    },
    /// Run every configured tool over a manifest.
    Bench {
        #[arg(long)]
        manifest: PathBuf,
        /// TOML key-value file; flags take precedence.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        tools: Option<Vec<Tool>>,
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        step: Option<f64>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        shap_blur: Option<usize>,
        #[arg(long)]
        connectivity: Option<u8>,
        #[arg(long, env = "MRX_ORACLE")]
        oracle: Option<String>,
    },
    /// Overlay an annotation and an explanation on an image.
    Render {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        hpe: PathBuf,
        #[arg(long)]
        exp: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Answer the classifier wire protocol with a built-in oracle.
    Serve {
        #[arg(long, env = "MRX_ORACLE")]
        oracle: String,
        /// Listen on this address instead of standard input/output.
        #[arg(long)]
        tcp: Option<String>,
        #[arg(long, value_delimiter = ',', default_value = "no_tumor,tumor")]
        labels: Vec<String>,
    },
}

enum Failure {
    Config(String),
    Oracle(String),
    Other(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) | Failure::Other(_) => 1,
            Failure::Oracle(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Oracle(m) | Failure::Other(m) => m,
        }
    }
}

impl From<OracleError> for Failure {
    fn from(e: OracleError) -> Self {
        Failure::Oracle(e.to_string())
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        Failure::Other(e.to_string())
    }
}

impl From<ExplainError> for Failure {
    fn from(e: ExplainError) -> Self {
        match e {
            ExplainError::Oracle(o) => o.into(),
            ExplainError::InvalidParams(m) => Failure::Config(m),
            other => Failure::Other(other.to_string()),
        }
    }
}

impl From<BenchError> for Failure {
    fn from(e: BenchError) -> Self {
        match e.exit_code() {
            2 => Failure::Oracle(e.to_string()),
            _ => Failure::Config(e.to_string()),
        }
    }
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("json"));
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("mrxai: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn dispatch(command: Command) -> Result<u8, Failure> {
    match command {
        Command::Synth {
            out,
            count,
            height,
            width,
            blob_min,
            blob_max,
            seed,
        } => {
            let params = SynthParams {
                count,
                height,
                width,
                blob_min,
                blob_max,
                seed,
            };
            let manifest = bench::synth_dataset(&params, &out)?;
            println!("{}", manifest.display());
            Ok(0)
        }
        Command::Explain {
            tool,
            image,
            out,
            budget,
            seed,
            label,
            segments,
            shap_blur,
            oracle,
        } => {
            let oracle = oracle.build()?;
            let img = load_image(&image)?;
            let cfg = ExplainerConfig {
                budget,
                seed,
                target: label.map_or(Target::OriginalLabel, Target::Label),
                occlusion: None,
            };
            let mut params = ToolParams {
                segments,
                ..ToolParams::default()
            };
            params.shap.blur_window = shap_blur;
            let explanation = explain::explain(tool, &img, oracle.as_ref(), &cfg, &params)?;
            create_dir(&out)?;
            save_saliency(&explanation.saliency, &out.join("saliency.mrxs"))?;
            save_heat(&explanation.saliency, &out.join("heat.png"))?;
            if let Some(mask) = &explanation.mask {
                save_mask(mask, &out.join("mask.png"))?;
            }
            print_json(&serde_json::json!({
                "tool": tool,
                "target": explanation.target,
                "queries": explanation.queries,
                "mask_pixels": explanation.mask.as_ref().map(|m| m.count()),
            }));
            Ok(0)
        }
        Command::Extract {
            saliency,
            image,
            step,
            min_conf,
            label,
            out,
            oracle,
        } => {
            let oracle = oracle.build()?;
            let img = load_image(&image)?;
            let map = load_saliency(&saliency)?;
            let target = match label {
                Some(l) => l,
                None => oracle.classify(&img)?.label,
            };
            let params = ExtractionParams {
                step,
                min_confidence: min_conf,
                ..ExtractionParams::default()
            };
            let found = extract_minimal_mask(&map, &img, oracle.as_ref(), &target, &params)?;
            save_mask(&found.mask, &out)?;
            print_json(&serde_json::json!({
                "target": target,
                "rounds": found.rounds,
                "mask_pixels": found.mask.count(),
            }));
            Ok(0)
        }
        Command::Score {
            exp,
            hpe,
            s,
            b,
            connectivity,
        } => {
            let params = PdcParams::new(s, b).map_err(|e| Failure::Config(e.to_string()))?;
            let connectivity = match connectivity {
                4 => Connectivity::Four,
                8 => Connectivity::Eight,
                n => return Err(Failure::Config(format!("connectivity must be 4 or 8, got {n}"))),
            };
            let breakdown = pdc(&load_mask(&exp)?, &load_mask(&hpe)?, params, connectivity)
                .map_err(|e| Failure::Other(e.to_string()))?;
            print_json(&serde_json::to_value(breakdown).expect("json"));
            Ok(0)
        }
        Command::Bench {
            manifest,
            config,
            out,
            tools,
            budget,
            seed,
            step,
            workers,
            shap_blur,
            connectivity,
            oracle,
        } => {
            let file = match &config {
                Some(path) => {
                    let text = std::fs::read_to_string(path)
                        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
                    ConfigOverrides::parse(&text)?
                }
                None => ConfigOverrides::default(),
            };
            let flags = ConfigOverrides {
                tools,
                budget,
                seed,
                step,
                workers,
                shap_blur,
                connectivity,
                oracle,
                output: out,
                ..ConfigOverrides::default()
            };
            let cfg = RunConfig::from_overrides(file.overlay(flags))?;
            let manifest = bench::ingest_with(&manifest, &cfg.positive_label)?;
            let outcome = bench::run(&manifest, &cfg)?;
            if let Some(dir) = &cfg.output {
                bench::write_outputs(&outcome, dir)?;
            }
            print!("{}", outcome.report.table_csv());
            let report = &outcome.report;
            if !report.false_negatives.is_empty() {
                eprintln!("mrxai: {} false negatives skipped", report.false_negatives.len());
            }
            Ok(report.exit_code() as u8)
        }
        Command::Render { image, hpe, exp, out } => {
            let img = load_image(&image)?;
            bench::render_overlay(&img, &load_mask(&hpe)?, &load_mask(&exp)?, &out)?;
            Ok(0)
        }
        Command::Serve { oracle, tcp, labels } => {
            let spec: OracleSpec = oracle.parse().map_err(|e: OracleError| Failure::Config(e.to_string()))?;
            let oracle = spec.build(0)?;
            match tcp {
                None => {
                    let stdin = io::stdin();
                    wire::serve(oracle.as_ref(), &labels, stdin.lock(), io::stdout().lock())
                        .map_err(|e| Failure::Other(e.to_string()))?;
                }
                Some(addr) => {
                    let listener = TcpListener::bind(&addr).map_err(|e| Failure::Config(format!("{addr}: {e}")))?;
                    eprintln!("listening on {}", listener.local_addr().map_err(|e| Failure::Other(e.to_string()))?);
                    let _ = io::stderr().flush();
                    std::thread::scope(|scope| {
                        for stream in listener.incoming().flatten() {
                            let (oracle, labels) = (oracle.as_ref(), &labels);
                            scope.spawn(move || {
                                if let Ok(reader) = stream.try_clone() {
                                    let _ = wire::serve(oracle, labels, BufReader::new(reader), stream);
                                }
                            });
                        }
                    });
                }
            }
            Ok(0)
        }
    }
}

fn create_dir(path: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(path).map_err(|e| Failure::Other(format!("{}: {e}", path.display())))
}
