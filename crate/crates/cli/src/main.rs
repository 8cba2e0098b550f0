//! `bqnn`: fixture generation, validation, lowering, execution, benchmarks,
//! accelerator traffic reports and C emission.
//!
//! Exit codes: 0 ok, 1 I/O or undecodable input, 2 validation diagnostics,
//! 3 lowering failure, 4 internal error.

use std::fmt::Display;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use bqnn_core::accel::{choose_pen, compare_orderings, AccelError, OrderingReport, PenBudget};
use bqnn_core::bench::{bench_ops, compare_binconv_f32};
use bqnn_core::codegen::emit_inference_source;
use bqnn_core::engine::run_network;
use bqnn_core::fixture::{generate, random_image, Arch};
use bqnn_core::model_ir::{
    is_lowered, model_size_report, parse_model, validate_graph, BlobData, DType, Layout, ModelError, TensorBlob,
};
use bqnn_core::transform::{lower_graph, parse_lowered, serialize_lowered, LoweredGraph, TransformError};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "bqnn", version, about = "Binarized CNN compiler and packed inference engine")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a seeded random-weight model container.
    GenFixture {
        #[arg(long, default_value = "toy")]
        arch: String,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print design-rule diagnostics for a model.
    Validate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        #[arg(long)]
        allow_warnings: bool,
    },
    /// Validate, lower and pack a model; print its size report.
    Compile {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        allow_warnings: bool,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Run inference; the image is raw little-endian f32, H x W x D with depth fastest.
    Run {
        #[command(flatten)]
        model: ModelArgs,
        /// Image file; a seeded uniform image is used when absent.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Per-operation wall-clock timings, or packed against f32 convolution with `--compare`.
    Bench {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        #[arg(long)]
        compare: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Memory-transaction and cycle estimates under both activation orderings.
    AccelReport {
        #[command(flatten)]
        model: ModelArgs,
        /// Restricts json and csv output to one ordering.
        #[arg(long, value_enum, default_value_t = Ordering::Both)]
        ordering: Ordering,
        /// Local memory budget in bytes for sizing the PEN width.
        #[arg(long, default_value_t = PenBudget::default().local_mem_budget)]
        pe_budget: usize,
        #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
        format: ReportFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit a self-contained C99 translation unit.
    EmitC {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ModelArgs {
    /// Lowered container, or an unlowered one to lower on the fly.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    allow_warnings: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ReportFormat {
    Text,
    Json,
    Csv,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Ordering {
    Depth,
    Width,
    Both,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn io(e: impl Display) -> Self {
        Self {
            code: 1,
            message: e.to_string(),
        }
    }

    fn validation(e: impl Display) -> Self {
        Self {
            code: 2,
            message: e.to_string(),
        }
    }

    fn lowering(e: impl Display) -> Self {
        Self {
            code: 3,
            message: e.to_string(),
        }
    }

    fn internal(e: impl Display) -> Self {
        Self {
            code: 4,
            message: e.to_string(),
        }
    }
}

impl From<TransformError> for Failure {
    fn from(e: TransformError) -> Self {
        match e {
            TransformError::Invalid(d) => Failure::validation(d.to_string().trim_end()),
            TransformError::Model(m) => Failure::io(m),
            other => Failure::lowering(other),
        }
    }
}

type Result<T> = std::result::Result<T, Failure>;

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Failure::io(format!("{}: {e}", path.display())))
}

fn decode(path: &Path, e: ModelError) -> Failure {
    Failure::io(format!("{}: {e}", path.display()))
}

fn threads(n: Option<usize>) -> usize {
    n.unwrap_or(0)
}

/// Validates a graph, failing on errors, and on warnings unless allowed.
fn check(g: &bqnn_core::model_ir::Graph, allow_warnings: bool) -> Result<()> {
    let diags = validate_graph(g);
    if !diags.is_empty() {
        eprint!("{diags}");
    }
    if diags.has_errors() || (!allow_warnings && diags.warnings().next().is_some()) {
        return Err(Failure::validation(format!(
            "{} diagnostic(s); see above{}",
            diags.len(),
            if diags.has_errors() {
                ""
            } else {
                " (pass --allow-warnings to continue)"
            }
        )));
    }
    Ok(())
}

fn load_lowered(args: &ModelArgs) -> Result<LoweredGraph> {
    let bytes = read(&args.model)?;
    if is_lowered(&bytes).map_err(|e| decode(&args.model, e))? {
        return parse_lowered(&bytes).map_err(|e| match e {
            TransformError::Model(m) => decode(&args.model, m),
            other => Failure::io(format!("{}: {other}", args.model.display())),
        });
    }
    let g = parse_model(&bytes).map_err(|e| decode(&args.model, e))?;
    check(&g, args.allow_warnings)?;
    Ok(lower_graph(&g)?)
}

fn load_image(lg: &LoweredGraph, input: Option<&Path>, seed: u64) -> Result<TensorBlob> {
    let shape = lg.input_shape();
    let Some(path) = input else {
        return Ok(random_image(shape, seed));
    };
    let bytes = read(path)?;
    if bytes.len() != shape.elements() * 4 {
        return Err(Failure::io(format!(
            "{}: {} bytes, expected {} for a {shape} f32 image",
            path.display(),
            bytes.len(),
            shape.elements() * 4
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    TensorBlob::single(shape.desc(DType::F32, Layout::DepthInnermost), BlobData::F32(data)).map_err(Failure::internal)
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => write(p, text),
        None => {
            let mut out = std::io::stdout().lock();
            match writeln!(out, "{text}") {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Failure::io(e)),
                _ => Ok(()),
            }
        }
    }
}

fn filter_ordering(r: &OrderingReport, ordering: Ordering) -> serde_json::Value {
    let mut v = serde_json::to_value(r).expect("report is serializable");
    let drop = match ordering {
        Ordering::Both => return v,
        Ordering::Depth => "width_innermost",
        Ordering::Width => "depth_innermost",
    };
    if let Some(obj) = v.as_object_mut() {
        obj.remove(drop);
        obj.remove("transaction_ratio");
    }
    if let Some(layers) = v["layers"].as_array_mut() {
        for l in layers {
            if let Some(o) = l.as_object_mut() {
                o.remove(drop);
                o.remove("transaction_ratio");
            }
        }
    }
    v
}

fn csv_ordering(r: &OrderingReport, ordering: Ordering) -> String {
    let keep = match ordering {
        Ordering::Both => None,
        Ordering::Depth => Some(",depth,"),
        Ordering::Width => Some(",width,"),
    };
    r.to_csv()
        .lines()
        .enumerate()
        .filter(|(i, l)| *i == 0 || keep.is_none_or(|k| l.contains(k)))
        .map(|(_, l)| format!("{l}\n"))
        .collect()
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::GenFixture { arch, seed, out } => {
            let arch: Arch = arch.parse().map_err(Failure::io)?;
            let g = generate(arch, seed);
            write(&out, bqnn_core::model_ir::serialize_model(&g))?;
            println!(
                "{arch} seed {seed}: {} nodes, {} blobs -> {}",
                g.len(),
                g.blobs().len(),
                out.display()
            );
        }
        Cmd::Validate {
            model,
            format,
            allow_warnings,
        } => {
            let g = parse_model(&read(&model)?).map_err(|e| decode(&model, e))?;
            let diags = validate_graph(&g);
            match format {
                Format::Json => println!("{}", serde_json::to_string_pretty(&diags).expect("serializable")),
                Format::Text if diags.is_empty() => println!("ok: {} nodes", g.len()),
                Format::Text => print!("{diags}"),
            }
            if diags.has_errors() || (!allow_warnings && !diags.is_empty()) {
                return Err(Failure::validation(format!("{} diagnostic(s)", diags.len())));
            }
        }
        Cmd::Compile {
            model,
            out,
            allow_warnings,
            format,
        } => {
            let bytes = read(&model)?;
            if is_lowered(&bytes).map_err(|e| decode(&model, e))? {
                return Err(TransformError::AlreadyLowered.into());
            }
            let g = parse_model(&bytes).map_err(|e| decode(&model, e))?;
            check(&g, allow_warnings)?;
            let lg = lower_graph(&g)?;
            write(&out, serialize_lowered(&lg))?;
            let report = model_size_report(&g, &lg);
            match format {
                Format::Json => println!("{}", serde_json::to_string_pretty(&report).expect("serializable")),
                Format::Text => println!("{report}"),
            }
        }
        Cmd::Run {
            model,
            input,
            seed,
            out,
            threads: t,
        } => {
            let lg = load_lowered(&model)?;
            let img = load_image(&lg, input.as_deref(), seed)?;
            let start = Instant::now();
            let y = run_network(&lg, &img, threads(t)).map_err(Failure::internal)?;
            let elapsed = start.elapsed();
            let v = y.as_f32().expect("network output is f32");
            if let Some(p) = &out {
                write(p, v.iter().flat_map(|x| x.to_le_bytes()).collect::<Vec<u8>>())?;
            }
            let (lo, hi) = v
                .iter()
                .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
            println!(
                "output {} ({} values), min {lo} max {hi}, {:.1} ms",
                y.desc.shape(),
                v.len(),
                elapsed.as_secs_f64() * 1e3
            );
        }
        Cmd::Bench {
            model,
            input,
            seed,
            repeats,
            threads: t,
            format,
            compare,
            out,
        } => {
            let lg = load_lowered(&model)?;
            let text = if compare {
                let r = compare_binconv_f32(&lg, repeats, threads(t), seed).map_err(Failure::internal)?;
                match format {
                    Format::Json => serde_json::to_string_pretty(&r).expect("serializable"),
                    Format::Text => r.to_text(),
                }
            } else {
                let img = load_image(&lg, input.as_deref(), seed)?;
                let r = bench_ops(&lg, &img, repeats, threads(t)).map_err(Failure::internal)?;
                match format {
                    Format::Json => r.to_json(),
                    Format::Text => r.to_text(),
                }
            };
            emit(&text, out.as_deref())?;
        }
        Cmd::AccelReport {
            model,
            ordering,
            pe_budget,
            format,
            out,
        } => {
            let lg = load_lowered(&model)?;
            let budget = PenBudget {
                local_mem_budget: pe_budget,
                ..PenBudget::default()
            };
            let cfg = choose_pen(&lg, &budget).map_err(|e| match e {
                AccelError::BudgetTooSmall { .. } | AccelError::ZeroBurst => Failure::lowering(e),
                other => Failure::internal(other),
            })?;
            let r = compare_orderings(&lg, &cfg);
            let text = match format {
                ReportFormat::Json => {
                    serde_json::to_string_pretty(&filter_ordering(&r, ordering)).expect("serializable")
                }
                ReportFormat::Csv => csv_ordering(&r, ordering),
                ReportFormat::Text => r.to_text(),
            };
            emit(text.trim_end(), out.as_deref())?;
        }
        Cmd::EmitC { model, out } => {
            let lg = load_lowered(&model)?;
            let src = emit_inference_source(&lg).map_err(Failure::lowering)?;
            write(&out, &src)?;
            println!("{} bytes of C -> {}", src.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
