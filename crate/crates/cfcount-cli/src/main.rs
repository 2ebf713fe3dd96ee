//! Command-line surface: reproducible, machine-readable runs of the
//! dimension, counting, spectra, mixing, Zaremba and NLI experiments.
//!
//! Exit codes: 0 success, 2 validation error, 3 numerical non-convergence.

mod output;
mod selftest;

use cfcount::cf_dynamics::{self, Alphabet, CfError, MarkovSystem};
use cfcount::congruence::{CongruenceError, FiniteGroup};
use cfcount::counting::{self, BallQuery, CountError, TestFn};
use cfcount::mixing::{self, CosetFamily, MixError};
use cfcount::thermo::{self, ThermoError};
use cfcount::twisted::{self, TwistedError};
use cfcount::zaremba::{self, ZarembaError};
use clap::{Args, Parser, Subcommand};
use output::{float17, Csv, Json};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "cfcount", version, about = "Continued-fraction counting and spectra toolkit")]
struct Cli {
    /// Worker threads for parallel enumeration (default: all cores)
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Seed for all randomized experiments
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Output file (stdout when omitted)
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct AlphabetArg {
    /// Alphabet: a list `1,2,5` or a range `1..5`
    #[arg(long, value_parser = parse_alphabet)]
    alphabet: Alphabet,
}

#[derive(Subcommand)]
enum Command {
    /// Limit-set dimension via the pressure zero, with a stability report
    Dim {
        #[command(flatten)]
        alphabet: AlphabetArg,
        /// Collocation nodes per cylinder
        #[arg(long, default_value_t = 24)]
        nodes: usize,
        /// Root tolerance for the pressure zero
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        /// Also run the independent Ulam oracle at this many cells
        #[arg(long)]
        ulam_cells: Option<usize>,
    },
    /// Exact norm-ball count with optional congruence histogram
    Count {
        #[command(flatten)]
        alphabet: AlphabetArg,
        /// Ratio bound R in ‖γγ₀‖/‖γ₀‖ ≤ R
        #[arg(long = "R")]
        ratio: f64,
        /// Congruence modulus for the residue histogram
        #[arg(long = "mod")]
        modulus: Option<u32>,
        /// γ₀ as a word of pairs `a,a';a,a'` (identity when omitted)
        #[arg(long)]
        gamma0: Option<String>,
        /// Additional radii: emit a (R, count) series plus a power-law fit
        #[arg(long, value_delimiter = ',')]
        r_list: Vec<f64>,
    },
    /// Renewal counts N(a, x) over a threshold grid, with an optional fit
    Renewal {
        #[command(flatten)]
        alphabet: AlphabetArg,
        #[arg(long, default_value_t = 8.0)]
        a_min: f64,
        #[arg(long, default_value_t = 14.0)]
        a_max: f64,
        #[arg(long, default_value_t = 25)]
        steps: usize,
        /// Base point (defaults to the first cylinder's midpoint)
        #[arg(long)]
        x: Option<f64>,
        /// Fit log N against a and report slope/prefactor
        #[arg(long)]
        fit: bool,
    },
    /// Twisted spectral radii over (q, a, b) grids
    Spectrum {
        #[command(flatten)]
        alphabet: AlphabetArg,
        #[arg(long, value_delimiter = ',', default_value = "1,5,7")]
        q_list: Vec<u32>,
        /// Real parts; the keyword `delta` resolves to the dimension
        #[arg(long, value_delimiter = ',', default_value = "delta")]
        a_list: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        b_list: Vec<f64>,
        #[arg(long, default_value_t = 10)]
        nodes: usize,
        #[arg(long, default_value_t = 400)]
        iters: usize,
    },
    /// Random-walk mixing measurements in SL₂(ℤ/qℤ)
    Mix {
        #[command(flatten)]
        alphabet: AlphabetArg,
        /// Primes for one-step spectral gaps, list or range
        #[arg(long)]
        gap_primes: Option<String>,
        /// Modulus for flattening-norm decay
        #[arg(long)]
        flatten_q: Option<u32>,
        /// Walk lengths for the flattening series, list or range
        #[arg(long, default_value = "2..10")]
        flatten_r: String,
        /// Prime for coset-mass concentration
        #[arg(long)]
        coset_prime: Option<u32>,
        #[arg(long, default_value_t = 6)]
        coset_r: usize,
        #[arg(long, value_parser = ["borel", "point-stabilizer"], default_value = "borel")]
        coset_family: String,
    },
    /// Denominator-set enumeration and window densities
    Zaremba {
        #[command(flatten)]
        alphabet: AlphabetArg,
        /// Enumeration bound N
        #[arg(long = "N", default_value_t = 1_000_000)]
        bound: u64,
        /// Windows `lo:hi`, comma separated (defaults to [1,N] and [N/2,N])
        #[arg(long, value_delimiter = ',')]
        windows: Vec<String>,
        /// Also search a witness word for this denominator
        #[arg(long)]
        verify: Option<u64>,
    },
    /// Search for nonvanishing temporal-distance derivatives
    ProbeNli {
        #[command(flatten)]
        alphabet: AlphabetArg,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        /// Central-difference step
        #[arg(long, default_value_t = cf_dynamics::NLI_DEFAULT_FD_STEP)]
        fd_step: f64,
    },
    /// Run the cross-module invariant suite
    Selftest,
}

#[derive(Debug)]
enum CliError {
    Validation(String),
    Numerical(String),
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "validation error: {}", m),
            CliError::Numerical(m) => write!(f, "numerical non-convergence: {}", m),
            CliError::Io(m) => write!(f, "io error: {}", m),
        }
    }
}

impl From<ThermoError> for CliError {
    fn from(e: ThermoError) -> Self {
        match e {
            ThermoError::NonConvergence(_)
            | ThermoError::BracketFailure { .. }
            | ThermoError::DegenerateWeights(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<CfError> for CliError {
    fn from(e: CfError) -> Self {
        match e {
            CfError::ToleranceUnreachable { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<CongruenceError> for CliError {
    fn from(e: CongruenceError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<TwistedError> for CliError {
    fn from(e: TwistedError) -> Self {
        match e {
            TwistedError::Thermo(t) => t.into(),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<CountError> for CliError {
    fn from(e: CountError) -> Self {
        match e {
            CountError::Cf(c) => c.into(),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<MixError> for CliError {
    fn from(e: MixError) -> Self {
        match e {
            MixError::NonConvergence => CliError::Numerical(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<ZarembaError> for CliError {
    fn from(e: ZarembaError) -> Self {
        CliError::Validation(e.to_string())
    }
}

fn parse_alphabet(s: &str) -> Result<Alphabet, String> {
    let entries: Vec<u32> = if let Some((lo, hi)) = s.split_once("..") {
        let lo: u32 = lo.trim().parse().map_err(|_| "bad range start".to_string())?;
        let hi: u32 = hi.trim().parse().map_err(|_| "bad range end".to_string())?;
        if lo > hi {
            return Err("empty alphabet range".to_string());
        }
        (lo..=hi).collect()
    } else {
        s.split(',')
            .map(|t| t.trim().parse::<u32>().map_err(|_| format!("bad alphabet entry {t:?}")))
            .collect::<Result<_, _>>()?
    };
    Alphabet::new(entries).map_err(|e| e.to_string())
}

fn parse_u32_list(s: &str) -> Result<Vec<u32>, String> {
    if let Some((lo, hi)) = s.split_once("..") {
        let lo: u32 = lo.trim().parse().map_err(|_| "bad range start".to_string())?;
        let hi: u32 = hi.trim().parse().map_err(|_| "bad range end".to_string())?;
        Ok((lo..=hi).collect())
    } else {
        s.split(',')
            .map(|t| t.trim().parse::<u32>().map_err(|_| format!("bad entry {t:?}")))
            .collect()
    }
}

fn parse_gamma0_word(s: &str, sys: &MarkovSystem) -> Result<Vec<cf_dynamics::CylinderId>, CliError> {
    s.split(';')
        .map(|pair| {
            let (a, a2) = pair
                .split_once(',')
                .ok_or_else(|| CliError::Validation(format!("bad γ₀ pair {pair:?}")))?;
            let a: u32 = a.trim().parse().map_err(|_| CliError::Validation("bad γ₀ entry".into()))?;
            let a2: u32 =
                a2.trim().parse().map_err(|_| CliError::Validation("bad γ₀ entry".into()))?;
            sys.cylinder_id(a, a2)
                .ok_or_else(|| CliError::Validation(format!("({a},{a2}) not in the alphabet")))
        })
        .collect()
}

fn cache_dir() -> Option<PathBuf> {
    std::env::var_os("CFCOUNT_CACHE_DIR").map(PathBuf::from)
}

fn load_group(q: u32) -> Result<FiniteGroup, CliError> {
    Ok(FiniteGroup::load_cached(q, cache_dir().as_deref())?)
}

fn alphabet_display(a: &Alphabet) -> String {
    a.entries().iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn emit(out: &Option<PathBuf>, content: String) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, content).map_err(|e| CliError::Io(e.to_string())),
        None => {
            print!("{}", content);
            Ok(())
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Some(w) = cli.workers {
        if rayon::ThreadPoolBuilder::new().num_threads(w).build_global().is_err() {
            eprintln!("warning: worker pool already initialized");
        }
    }
    let seed = cli.seed;
    let out = cli.out.clone();
    let result = run(cli, seed, &out);
    if let Err(e) = result {
        eprintln!("cfcount: {}", e);
        std::process::exit(e.exit_code());
    }
}

fn run(cli: Cli, seed: u64, out: &Option<PathBuf>) -> Result<(), CliError> {
    match cli.command {
        Command::Dim { alphabet, nodes, tol, ulam_cells } => {
            let sys = MarkovSystem::build(alphabet.alphabet.clone())?;
            let gibbs = thermo::dimension(&sys, nodes, tol)?;
            let coarse = thermo::dimension(&sys, (nodes / 2).max(4), tol)?;
            let mut body = vec![
                ("delta".to_string(), Json::Float(gibbs.delta)),
                ("mean_tau".to_string(), Json::Float(gibbs.mean_tau)),
                ("nodes".to_string(), Json::UInt(nodes as u64)),
                ("tol".to_string(), Json::Float(tol)),
                (
                    "stability".to_string(),
                    Json::Float((gibbs.delta - coarse.delta).abs()),
                ),
            ];
            if let Some(cells) = ulam_cells {
                let ulam = thermo::ulam_dimension(&sys, cells, 1e-7)?;
                body.push(("ulam_delta".to_string(), Json::Float(ulam)));
                body.push(("ulam_cells".to_string(), Json::UInt(cells as u64)));
            }
            let meta = vec![
                ("alphabet".to_string(), Json::Str(alphabet_display(&alphabet.alphabet))),
                ("seed".to_string(), Json::UInt(seed)),
            ];
            emit(out, output::run_object("dim", meta, body))
        }

        Command::Count { alphabet, ratio, modulus, gamma0, r_list } => {
            let sys = MarkovSystem::build(alphabet.alphabet.clone())?;
            let mut query = BallQuery::new(sys.clone(), ratio);
            if let Some(word) = &gamma0 {
                let word = parse_gamma0_word(word, &sys)?;
                query.gamma0 = word.iter().try_fold(cfcount::mat2z::IDENTITY, |acc, &c| {
                    cfcount::mat2z::multiply(&acc, &sys.cylinder(c).matrix)
                        .map_err(|e| CliError::Validation(e.to_string()))
                })?;
                query.gamma0_word = word;
            }
            query.modulus = modulus;
            let group = modulus.map(load_group).transpose()?;
            let report = counting::enumerate_ball(&query, group.as_ref())?;

            let meta = [
                ("alphabet", alphabet_display(&alphabet.alphabet)),
                ("seed", seed.to_string()),
                ("ratio_bound", float17(ratio)),
                ("modulus", modulus.map(|q| q.to_string()).unwrap_or_else(|| "none".into())),
                ("gamma0", gamma0.unwrap_or_else(|| "identity".into())),
                ("max_depth", report.max_depth.to_string()),
                ("overflow_partial", report.overflow_partial.to_string()),
            ];
            let mut csv = Csv::new("count", &meta.iter().map(|(k, v)| (*k, v.clone())).collect::<Vec<_>>());
            csv.header(&["residue_index", "count"]);
            if let Some(hist) = &report.histogram {
                for (i, w) in hist.iter().enumerate() {
                    if *w != 0.0 {
                        csv.row(&[i.to_string(), float17(*w)]);
                    }
                }
            }
            csv.row(&["total".to_string(), float17(report.total_weight)]);

            if !r_list.is_empty() {
                let mut series = Vec::new();
                csv.header(&["r", "count"]);
                for &r in &r_list {
                    let mut q2 = query.clone();
                    q2.ratio_bound = r;
                    q2.modulus = None;
                    let c = counting::enumerate_ball(&q2, None)?;
                    csv.row(&[float17(r), c.total_count.to_string()]);
                    series.push((r.ln(), c.total_count as f64));
                }
                if series.len() >= 4 {
                    let fit = counting::asymptotic_fit(&series)?;
                    csv.comment("fit_slope_vs_log_r", float17(fit.slope));
                    csv.comment("fit_prefactor", float17(fit.prefactor));
                }
            }
            emit(out, csv.finish())
        }

        Command::Renewal { alphabet, a_min, a_max, steps, x, fit } => {
            let sys = MarkovSystem::build(alphabet.alphabet.clone())?;
            let x = x.unwrap_or_else(|| sys.cylinders()[0].midpoint_f64());
            if steps < 2 || a_max <= a_min {
                return Err(CliError::Validation("need a_max > a_min and ≥ 2 steps".into()));
            }
            let mut series = Vec::with_capacity(steps);
            for k in 0..steps {
                let a = a_min + (a_max - a_min) * k as f64 / (steps - 1) as f64;
                let n = counting::renewal_count(&sys, a, x, &TestFn::One)?;
                series.push((a, n));
            }
            let meta = [
                ("alphabet", alphabet_display(&alphabet.alphabet)),
                ("seed", seed.to_string()),
                ("x", float17(x)),
            ];
            let mut csv = Csv::new("renewal", &meta.iter().map(|(k, v)| (*k, v.clone())).collect::<Vec<_>>());
            csv.header(&["a", "count"]);
            for &(a, n) in &series {
                csv.row(&[float17(a), float17(n)]);
            }
            if fit {
                let f = counting::asymptotic_fit(&series)?;
                csv.comment("fit_slope", float17(f.slope));
                csv.comment("fit_prefactor", float17(f.prefactor));
            }
            emit(out, csv.finish())
        }

        Command::Spectrum { alphabet, q_list, a_list, b_list, nodes, iters } => {
            let sys = MarkovSystem::build(alphabet.alphabet.clone())?;
            let needs_delta = a_list.iter().any(|s| s == "delta");
            let delta = if needs_delta {
                Some(thermo::dimension(&sys, nodes.max(12), 1e-10)?.delta)
            } else {
                None
            };
            let a_grid: Vec<f64> = a_list
                .iter()
                .map(|s| {
                    if s == "delta" {
                        Ok(delta.unwrap())
                    } else {
                        s.parse::<f64>().map_err(|_| CliError::Validation(format!("bad a value {s:?}")))
                    }
                })
                .collect::<Result<_, _>>()?;
            let model = thermo::SpectralModel::new(sys, nodes)?;
            let cells = twisted::sweep(&model, &q_list, &a_grid, &b_list, iters, seed);

            let meta = [
                ("alphabet", alphabet_display(&alphabet.alphabet)),
                ("seed", seed.to_string()),
                ("nodes", nodes.to_string()),
                ("iters", iters.to_string()),
            ];
            let mut csv = Csv::new("spectrum", &meta.iter().map(|(k, v)| (*k, v.clone())).collect::<Vec<_>>());
            csv.header(&["q", "a", "b", "radius", "ratio_lo", "ratio_hi", "iterations", "converged", "error"]);
            for cell in &cells {
                match &cell.result {
                    Ok(r) => csv.row(&[
                        cell.q.to_string(),
                        float17(cell.a),
                        float17(cell.b),
                        float17(r.radius),
                        float17(r.ratio_lo),
                        float17(r.ratio_hi),
                        r.iterations.to_string(),
                        r.converged.to_string(),
                        String::new(),
                    ]),
                    Err(e) => csv.row(&[
                        cell.q.to_string(),
                        float17(cell.a),
                        float17(cell.b),
                        String::new(),
                        String::new(),
                        String::new(),
                        "0".into(),
                        "false".into(),
                        format!("\"{}\"", e),
                    ]),
                }
            }
            emit(out, csv.finish())
        }

        Command::Mix { alphabet, gap_primes, flatten_q, flatten_r, coset_prime, coset_r, coset_family } => {
            let a = &alphabet.alphabet;
            let meta = [
                ("alphabet", alphabet_display(a)),
                ("seed", seed.to_string()),
            ];
            let mut csv = Csv::new("mix", &meta.iter().map(|(k, v)| (*k, v.clone())).collect::<Vec<_>>());
            csv.header(&["measurement", "q", "r", "value", "baseline"]);
            let mut ran_any = false;
            if let Some(primes) = gap_primes {
                let primes = parse_u32_list(&primes).map_err(CliError::Validation)?;
                ran_any = true;
                for p in primes {
                    let group = load_group(p)?;
                    let gap = mixing::spectral_gap(&group, a)?;
                    csv.row(&["spectral_gap".into(), p.to_string(), "1".into(), float17(gap), String::new()]);
                }
            }
            if let Some(q) = flatten_q {
                ran_any = true;
                let group = load_group(q)?;
                for r in parse_u32_list(&flatten_r).map_err(CliError::Validation)? {
                    let norm = mixing::flattening_norm(&group, a, r as usize)?;
                    csv.row(&["flattening_norm".into(), q.to_string(), r.to_string(), float17(norm), String::new()]);
                }
            }
            if let Some(p) = coset_prime {
                ran_any = true;
                let group = load_group(p)?;
                let family = match coset_family.as_str() {
                    "borel" => CosetFamily::Borel,
                    _ => CosetFamily::PointStabilizer,
                };
                let rep = mixing::coset_mass(&group, a, coset_r, family)?;
                csv.row(&[
                    "coset_mass".into(),
                    p.to_string(),
                    coset_r.to_string(),
                    float17(rep.max_mass),
                    float17(rep.baseline),
                ]);
            }
            if !ran_any {
                return Err(CliError::Validation(
                    "mix needs at least one of --gap-primes, --flatten-q, --coset-prime".into(),
                ));
            }
            emit(out, csv.finish())
        }

        Command::Zaremba { alphabet, bound, windows, verify } => {
            let a = &alphabet.alphabet;
            let set = zaremba::denominator_set(a, bound);
            let mut window_list: Vec<(u64, u64)> = Vec::new();
            if windows.is_empty() {
                window_list.push((1, bound));
                window_list.push((bound / 2, bound));
            } else {
                for w in &windows {
                    let (lo, hi) = w
                        .split_once(':')
                        .ok_or_else(|| CliError::Validation(format!("bad window {w:?}")))?;
                    let lo = lo.parse().map_err(|_| CliError::Validation("bad window bound".into()))?;
                    let hi = hi.parse().map_err(|_| CliError::Validation("bad window bound".into()))?;
                    window_list.push((lo, hi));
                }
            }
            let mut window_objs = Vec::new();
            for (lo, hi) in window_list {
                let count = set.count_window(lo, hi)?;
                let density = set.density(lo, hi)?;
                window_objs.push(Json::Object(vec![
                    ("lo".to_string(), Json::UInt(lo)),
                    ("hi".to_string(), Json::UInt(hi)),
                    ("count".to_string(), Json::UInt(count)),
                    ("density".to_string(), Json::Float(density)),
                ]));
            }
            let mut body = vec![
                ("bound".to_string(), Json::UInt(bound)),
                ("windows".to_string(), Json::List(window_objs)),
            ];
            if let Some(d) = verify {
                let witness = zaremba::verify_member(d, a);
                body.push((
                    "verify".to_string(),
                    Json::Object(vec![
                        ("d".to_string(), Json::UInt(d)),
                        ("member".to_string(), Json::Bool(witness.is_some())),
                        (
                            "witness".to_string(),
                            Json::List(
                                witness
                                    .unwrap_or_default()
                                    .iter()
                                    .map(|&q| Json::UInt(q as u64))
                                    .collect(),
                            ),
                        ),
                    ]),
                ));
            }
            let meta = vec![
                ("alphabet".to_string(), Json::Str(alphabet_display(a))),
                ("seed".to_string(), Json::UInt(seed)),
            ];
            emit(out, output::run_object("zaremba", meta, body))
        }

        Command::ProbeNli { alphabet, samples, fd_step } => {
            let sys = MarkovSystem::build(alphabet.alphabet.clone())?;
            let report = cf_dynamics::nli_probe(&sys, samples, seed, fd_step)?;
            let w = &report.witness;
            let word_json = |word: &[cf_dynamics::CylinderId]| {
                Json::List(word.iter().map(|c| Json::UInt(c.0 as u64)).collect())
            };
            let body = vec![
                ("samples".to_string(), Json::UInt(report.samples as u64)),
                ("fd_step".to_string(), Json::Float(fd_step)),
                ("max_abs_du".to_string(), Json::Float(report.max_abs_du)),
                ("min_abs_du".to_string(), Json::Float(report.min_abs_du)),
                (
                    "witness".to_string(),
                    Json::Object(vec![
                        ("xi".to_string(), word_json(&w.xi)),
                        ("eta".to_string(), word_json(&w.eta)),
                        ("u".to_string(), Json::Float(w.u)),
                        ("v".to_string(), Json::Float(w.v)),
                        ("derivative".to_string(), Json::Float(w.derivative)),
                    ]),
                ),
            ];
            let meta = vec![
                ("alphabet".to_string(), Json::Str(alphabet_display(&alphabet.alphabet))),
                ("seed".to_string(), Json::UInt(seed)),
            ];
            emit(out, output::run_object("probe_nli", meta, body))
        }

        Command::Selftest => {
            let failures = selftest::run_all();
            if failures == 0 {
                println!("selftest: all checks passed");
                Ok(())
            } else {
                Err(CliError::Numerical(format!("{failures} selftest check(s) failed")))
            }
        }
    }
}
