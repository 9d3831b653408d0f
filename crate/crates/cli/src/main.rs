use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use schwarzscope::certify::{
    mobius_certificate, partition_certificate_with, verify_certificate, Certificate, CertifyOptions, Outcome,
    Partition, Rigor,
};
use schwarzscope::measure::{
    correlation_decay, dn_sequence, growth_fit, summability_check, ulam_density, CorrelationOptions, SumMode,
};
use schwarzscope::neuro::{
    check_theorem6, family_features, find_landmarks, find_misiurewicz, lingering_family, synth_family,
    MisiurewiczOutcome, Regime, ReturnMapFamily,
};
use schwarzscope::orbits::{critical_interval, find_critical_points, find_periodic_orbits, singer_census};
use schwarzscope::schwarzian::{convexity_profile, convexity_scan, schwarzian_iterate};
use schwarzscope::{fixtures, parse_expr, Error, MapExpr};

const EXIT_INPUT: u8 = 1;
const EXIT_REFUSAL: u8 = 2;
const EXIT_CENSUS: u8 = 3;

#[derive(Parser)]
#[command(name = "schwarzscope", version, about = "Eventual negative Schwarzian analysis of interval maps")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory for JSON summaries and CSV series.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for stochastic estimators.
    #[arg(long, global = true, env = "SCHWARZSCOPE_SEED", default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct MapArg {
    /// Map file (JSON) or bundled name: logistic, f78, g17, quartic, neuro.
    #[arg(long)]
    map: String,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a map and report pieces, continuity and the self-map check.
    Parse(MapArg),
    /// S(f^k) at points.
    Schwarzian {
        #[command(flatten)]
        map: MapArg,
        #[arg(long, default_value_t = 1)]
        k: usize,
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        x: Vec<f64>,
    },
    /// Convexity of |(f^k)′|^{-1/2} between critical points of f^k.
    Convexity {
        #[command(flatten)]
        map: MapArg,
        #[arg(long, default_value_t = 1)]
        k: usize,
        #[arg(long, default_value_t = 512)]
        grid: usize,
    },
    /// Search for a certificate of eventual negative Schwarzian derivative.
    Certify {
        #[command(flatten)]
        map: MapArg,
        /// Partition file: {"endpoints": [...]} or a plain array.
        #[arg(long)]
        partition: Option<PathBuf>,
        /// Uniform partition size when no file is given.
        #[arg(long, default_value_t = 16)]
        cells: usize,
        #[arg(long, default_value_t = 3)]
        kmax: usize,
        #[arg(long, value_enum, default_value_t = CertMode::Partition)]
        mode: CertMode,
        /// `sampled` gives heuristic grid bounds instead of interval enclosures.
        #[arg(long, value_enum, default_value_t = RigorArg::Interval)]
        rigor: RigorArg,
        #[arg(long)]
        no_refine: bool,
        #[arg(long, default_value_t = 64)]
        cell_budget: usize,
    },
    /// Replay a certificate file.
    Verify {
        #[command(flatten)]
        map: MapArg,
        #[arg(long)]
        cert: PathBuf,
    },
    /// Critical points, critical interval and periodic orbits.
    Orbits {
        #[command(flatten)]
        map: MapArg,
        #[arg(long, default_value_t = 6)]
        pmax: usize,
    },
    /// Census of non-repelling orbits against the critical-point bound.
    Census {
        #[command(flatten)]
        map: MapArg,
        #[arg(long, default_value_t = 6)]
        pmax: usize,
    },
    #[command(subcommand)]
    Measure(MeasureCmd),
    #[command(subcommand)]
    Neuro(NeuroCmd),
    /// CSV of g = |(f^k)′|^{-1/2} on the critical-point-free intervals.
    PlotData {
        #[command(flatten)]
        map: MapArg,
        #[arg(long, default_value_t = 1)]
        k: usize,
        #[arg(long, default_value_t = 512)]
        grid: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum CertMode {
    Partition,
    Mobius,
}

#[derive(Clone, Copy, ValueEnum)]
enum RigorArg {
    Interval,
    Sampled,
}

#[derive(Subcommand)]
enum MeasureCmd {
    /// D_n along the orbit of a critical point.
    Dn {
        #[command(flatten)]
        map: MapArg,
        /// Critical point (default: first one found).
        #[arg(long)]
        c: Option<f64>,
        #[arg(long = "N", default_value_t = 100)]
        n: usize,
    },
    /// Ulam approximation of the acip.
    Acip {
        #[command(flatten)]
        map: MapArg,
        #[arg(long, default_value_t = 1024)]
        bins: usize,
    },
    /// Correlation decay of two observables.
    Corr {
        #[command(flatten)]
        map: MapArg,
        #[arg(long, default_value = "x")]
        phi: String,
        #[arg(long, default_value = "x")]
        psi: String,
        #[arg(long = "N", default_value_t = 50)]
        n: usize,
        #[arg(long, default_value_t = 4096)]
        bins: usize,
        #[arg(long, default_value_t = 16)]
        streams: usize,
        #[arg(long, default_value_t = 625_000)]
        steps: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyName {
    Lingering,
    Sqrt,
}

#[derive(Args, Clone)]
struct FamilyArg {
    #[arg(long, value_enum, default_value_t = FamilyName::Lingering)]
    family: FamilyName,
    #[arg(long, default_value_t = 0.8)]
    d: f64,
    /// Right-branch level (sqrt family).
    #[arg(long, default_value_t = 0.05)]
    w: f64,
}

#[derive(Subcommand)]
enum NeuroCmd {
    /// Features over a uniform δ grid.
    Sweep {
        #[command(flatten)]
        family: FamilyArg,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
    },
    /// δ₀, δ_n and δ_b.
    Landmarks {
        #[command(flatten)]
        family: FamilyArg,
    },
    /// Parameter whose critical orbit lands on the fixed point after m steps.
    Misiurewicz {
        #[command(flatten)]
        family: FamilyArg,
        #[arg(long, default_value_t = 3)]
        m: usize,
        /// δ₁,δ₂ (default: scan).
        #[arg(long, value_delimiter = ',', num_args = 2)]
        bracket: Option<Vec<f64>>,
    },
    /// Hypothesis report at a Misiurewicz parameter.
    Check {
        #[command(flatten)]
        family: FamilyArg,
        #[arg(long, default_value_t = 3)]
        m: usize,
        #[arg(long, default_value_t = 3)]
        kmax: usize,
        /// Parameter to check (default: result of the Misiurewicz search).
        #[arg(long)]
        delta: Option<f64>,
    },
}

/// Failure carried to the exit status.
enum Fail {
    Input(String, String),
    Refusal(Value),
    Census(Value),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Input(e.kind().to_string(), e.to_string())
    }
}

fn io_fail(path: &Path, e: impl std::fmt::Display) -> Fail {
    Fail::Input("io".into(), format!("{}: {e}", path.display()))
}

struct Ctx {
    out: Option<PathBuf>,
    seed: u64,
}

impl Ctx {
    fn write(&self, name: &str, body: &str) -> Result<(), Fail> {
        if let Some(dir) = &self.out {
            fs::create_dir_all(dir).map_err(|e| io_fail(dir, e))?;
            let p = dir.join(name);
            fs::write(&p, body).map_err(|e| io_fail(&p, e))?;
        }
        Ok(())
    }

    /// Prints the summary and stores it as summary.json under --out.
    fn summary(&self, v: &Value) -> Result<(), Fail> {
        let text = pretty(v);
        self.write("summary.json", &text)?;
        emit(&format!("{text}\n"));
        Ok(())
    }

    /// Series go to --out as CSV next to the summary, or to stdout.
    fn series(&self, name: &str, csv: &str, summary: &Value) -> Result<(), Fail> {
        if self.out.is_some() {
            self.write(name, csv)?;
            self.summary(summary)
        } else {
            emit(csv);
            Ok(())
        }
    }
}

/// Writes to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|_| out.flush());
}

fn pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable")
}

fn load_map(arg: &MapArg) -> Result<MapExpr, Fail> {
    if let Some(m) = fixtures::by_name(&arg.map) {
        return Ok(m);
    }
    let path = Path::new(&arg.map);
    let text = fs::read_to_string(path).map_err(|e| io_fail(path, e))?;
    Ok(MapExpr::from_json(&text)?)
}

fn load_partition(map: &MapExpr, path: &Path) -> Result<Partition, Fail> {
    let text = fs::read_to_string(path).map_err(|e| io_fail(path, e))?;
    let v: Value = serde_json::from_str(&text).map_err(|e| Fail::Input("partition_file".into(), e.to_string()))?;
    let arr = match &v {
        Value::Array(_) => &v,
        Value::Object(o) => o
            .get("endpoints")
            .ok_or_else(|| Fail::Input("partition_file".into(), "missing \"endpoints\"".into()))?,
        _ => return Err(Fail::Input("partition_file".into(), "expected an array or an object".into())),
    };
    let endpoints: Vec<f64> =
        serde_json::from_value(arr.clone()).map_err(|e| Fail::Input("partition_file".into(), e.to_string()))?;
    Ok(Partition::for_map(map, endpoints)?)
}

fn make_family(f: &FamilyArg) -> Result<ReturnMapFamily, Fail> {
    Ok(match f.family {
        FamilyName::Lingering => lingering_family(f.d)?,
        FamilyName::Sqrt => synth_family(f.d, f.w)?,
    })
}

fn observable(src: &str) -> Result<impl Fn(f64) -> f64 + Sync, Fail> {
    let e = parse_expr(src, &Default::default())?;
    Ok(move |x: f64| e.eval(x).unwrap_or(f64::NAN))
}

fn run(cli: Cli) -> Result<(), Fail> {
    let ctx = Ctx { out: cli.out.clone(), seed: cli.seed };
    match cli.command {
        Command::Parse(m) => {
            let map = load_map(&m)?;
            let check = map.check_self_map()?;
            let cont = map.continuity_report(1e-9)?;
            ctx.summary(&json!({
                "map": map.to_json(),
                "self_map": check,
                "continuity": cont,
                "c2": map.is_c2()?,
            }))
        }
        Command::Schwarzian { map, k, x } => {
            let map = load_map(&map)?;
            let vals = x
                .iter()
                .map(|&x| schwarzian_iterate(&map, k, x))
                .collect::<Result<Vec<_>, _>>()?;
            ctx.summary(&json!({ "k": k, "values": vals }))
        }
        Command::Convexity { map, k, grid } => {
            let map = load_map(&map)?;
            ctx.summary(&serde_json::to_value(convexity_scan(&map, k, grid)).expect("serializable"))
        }
        Command::Certify { map, partition, cells, kmax, mode, rigor, no_refine, cell_budget } => {
            let map = load_map(&map)?;
            if kmax == 0 {
                return Err(Fail::Input("precondition".into(), "kmax must be at least 1".into()));
            }
            let outcome = match mode {
                CertMode::Mobius => mobius_certificate(&map, kmax)?,
                CertMode::Partition => {
                    let part = match &partition {
                        Some(p) => load_partition(&map, p)?,
                        None => Partition::uniform(map.lo, map.hi, cells),
                    };
                    let opts = CertifyOptions { refine: !no_refine, cell_budget, ..Default::default() };
                    let rigor = match rigor {
                        RigorArg::Interval => Rigor::Interval,
                        RigorArg::Sampled => Rigor::Sampled,
                    };
                    partition_certificate_with(&map, &part, kmax, rigor, &opts)?
                }
            };
            let v = serde_json::to_value(&outcome).expect("serializable");
            match outcome {
                Outcome::Certified(_) => {
                    ctx.write("certificate.json", &pretty(&v))?;
                    ctx.summary(&v)
                }
                Outcome::Refused(_) => {
                    ctx.write("refusal.json", &pretty(&v))?;
                    Err(Fail::Refusal(v))
                }
            }
        }
        Command::Verify { map, cert } => {
            let map = load_map(&map)?;
            let text = fs::read_to_string(&cert).map_err(|e| io_fail(&cert, e))?;
            let v: Value = serde_json::from_str(&text).map_err(|e| Fail::Input("certificate_file".into(), e.to_string()))?;
            // Accept both a bare certificate and a certify summary.
            let c: Certificate = serde_json::from_value(v)
                .map_err(|e| Fail::Input("certificate_file".into(), e.to_string()))?;
            let ok = verify_certificate(&map, &c);
            let v = json!({ "verified": ok, "kind": c.kind, "order_bound": c.order_bound });
            if ok {
                ctx.summary(&v)
            } else {
                Err(Fail::Refusal(v))
            }
        }
        Command::Orbits { map, pmax } => {
            let map = load_map(&map)?;
            let crit = find_critical_points(&map)?;
            let ci = critical_interval(&map, 1000)?;
            let orbits = find_periodic_orbits(&map, pmax)?;
            ctx.summary(&json!({ "critical_points": crit, "critical_interval": ci, "orbits": orbits }))
        }
        Command::Census { map, pmax } => {
            let map = load_map(&map)?;
            let orbits = find_periodic_orbits(&map, pmax)?;
            let report = singer_census(&map, &orbits)?;
            let v = serde_json::to_value(&report).expect("serializable");
            if report.passed() {
                ctx.summary(&v)
            } else {
                ctx.write("summary.json", &pretty(&v))?;
                Err(Fail::Census(v))
            }
        }
        Command::Measure(cmd) => run_measure(&ctx, cmd),
        Command::Neuro(cmd) => run_neuro(&ctx, cmd),
        Command::PlotData { map, k, grid } => {
            let map = load_map(&map)?;
            let mut csv = String::from("segment,x,g\n");
            let profile = convexity_profile(&map, k, grid);
            for (i, (_, pts)) in profile.iter().enumerate() {
                for (x, g) in pts {
                    let _ = writeln!(csv, "{i},{x},{g}");
                }
            }
            let summary = json!({ "k": k, "segments": profile.iter().map(|(s, p)| json!({"interval": s, "points": p.len()})).collect::<Vec<_>>() });
            ctx.series("plot.csv", &csv, &summary)
        }
    }
}

fn run_measure(ctx: &Ctx, cmd: MeasureCmd) -> Result<(), Fail> {
    match cmd {
        MeasureCmd::Dn { map, c, n } => {
            let map = load_map(&map)?;
            let crit = find_critical_points(&map)?;
            let (c, ell) = match c {
                Some(c) => {
                    let ell = crit.iter().find(|p| (p.c - c).abs() < 1e-9 * map.width()).map(|p| p.order);
                    (c, ell)
                }
                None => {
                    let p = crit.first().ok_or(Error::NotCritical(f64::NAN))?;
                    (p.c, Some(p.order))
                }
            };
            let dn = dn_sequence(&map, c, n)?;
            let fit = growth_fit(&dn.log_d)?;
            let sums = match ell {
                Some(l) => json!({
                    "thm2": summability_check(&dn, l, SumMode::Thm2)?,
                    "thm3": summability_check(&dn, l, SumMode::Thm3)?,
                }),
                None => Value::Null,
            };
            let mut csv = String::from("n,D_n\n");
            for (i, l) in dn.log_d.iter().enumerate() {
                let _ = writeln!(csv, "{},{}", i + 1, l.exp());
            }
            ctx.series("dn.csv", &csv, &json!({ "c": c, "order": ell, "fit": fit, "summability": sums, "hit_critical": dn.hit_critical }))
        }
        MeasureCmd::Acip { map, bins } => {
            let map = load_map(&map)?;
            let d = ulam_density(&map, bins)?;
            let h = d.bin_width();
            let mut csv = String::from("bin,x,weight\n");
            for (i, w) in d.bin_masses().iter().enumerate() {
                let _ = writeln!(csv, "{i},{},{w}", d.lo + h * (i as f64 + 0.5));
            }
            ctx.series("acip.csv", &csv, &json!({ "support": [d.lo, d.hi], "bins": bins, "residual": d.residual, "iterations": d.iterations }))
        }
        MeasureCmd::Corr { map, phi, psi, n, bins, streams, steps } => {
            let map = load_map(&map)?;
            let f = observable(&phi)?;
            let g = observable(&psi)?;
            let opts = CorrelationOptions { bins, streams, steps_per_stream: steps, seed: ctx.seed };
            let r = correlation_decay(&map, &f, &g, n, &opts)?;
            let mut csv = String::from("n,operator,birkhoff,sigma_birkhoff,sigma_discretization,coherent\n");
            for row in &r.rows {
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{}",
                    row.n, row.operator, row.birkhoff, row.sigma_birkhoff, row.sigma_discretization, row.coherent
                );
            }
            let coherent = r.rows.iter().all(|r| r.coherent);
            ctx.series("corr.csv", &csv, &json!({ "phi": phi, "psi": psi, "seed": ctx.seed, "decay_rate": r.decay_rate, "coherent": coherent }))
        }
    }
}

fn run_neuro(ctx: &Ctx, cmd: NeuroCmd) -> Result<(), Fail> {
    match cmd {
        NeuroCmd::Sweep { family, steps } => {
            let fam = make_family(&family)?;
            let rows = schwarzscope::neuro::sweep(&fam, steps)?;
            let mut csv = String::from("delta,c,alpha,F_c,regime\n");
            for r in &rows {
                let regime = match r.regime {
                    Regime::Diffeo => "diffeo",
                    Regime::Unimodal => "unimodal",
                };
                let _ = writeln!(csv, "{},{},{},{},{regime}", r.delta, r.c, r.alpha, r.critical_value);
            }
            ctx.series("sweep.csv", &csv, &json!({ "family": fam, "rows": rows.len() }))
        }
        NeuroCmd::Landmarks { family } => {
            let fam = make_family(&family)?;
            let l = find_landmarks(&fam)?;
            ctx.summary(&json!({ "family": fam, "landmarks": l }))
        }
        NeuroCmd::Misiurewicz { family, m, bracket } => {
            let fam = make_family(&family)?;
            let bracket = bracket.map(|b| (b[0], b[1]));
            let out = find_misiurewicz(&fam, m, bracket)?;
            let v = json!({ "family": fam, "result": out });
            match out {
                MisiurewiczOutcome::Found(_) => ctx.summary(&v),
                MisiurewiczOutcome::Refused(_) => {
                    ctx.write("summary.json", &pretty(&v))?;
                    Err(Fail::Refusal(v))
                }
            }
        }
        NeuroCmd::Check { family, m, kmax, delta } => {
            let fam = make_family(&family)?;
            let delta = match delta {
                Some(d) => d,
                None => match find_misiurewicz(&fam, m, None)? {
                    MisiurewiczOutcome::Found(mz) => mz.delta,
                    MisiurewiczOutcome::Refused(r) => return Err(Fail::Refusal(json!({ "result": r }))),
                },
            };
            let features = family_features(&fam, delta)?;
            let report = check_theorem6(&fam, delta, m, kmax)?;
            ctx.summary(&json!({ "family": fam, "features": features, "report": report }))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("{}", pretty(&json!({ "error": { "kind": "threads", "message": e.to_string() } })));
            return ExitCode::from(EXIT_INPUT);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Fail::Input(kind, message)) => {
            eprintln!("{}", pretty(&json!({ "error": { "kind": kind, "message": message } })));
            ExitCode::from(EXIT_INPUT)
        }
        Err(Fail::Refusal(v)) => {
            emit(&format!("{}\n", pretty(&v)));
            ExitCode::from(EXIT_REFUSAL)
        }
        Err(Fail::Census(v)) => {
            emit(&format!("{}\n", pretty(&v)));
            ExitCode::from(EXIT_CENSUS)
        }
    }
}
