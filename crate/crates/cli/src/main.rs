//! Command-line front end for the dark-state toolkit.
//!
//! Every run prints one JSON document to stdout whose `manifest` block pins
//! the command, the fully resolved parameters, the seed and the tool
//! version.  Floating-point values are printed with 17 significant digits,
//! so two runs with identical manifests produce identical numbers; the
//! trajectory CSV carries no timestamp and reruns byte-for-byte.
//!
//! Exit codes: 0 success (and verification PASS), 1 verification failure,
//! 2 bad usage or invalid input, 3 register or pairing capacity exceeded.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dicke_rvb::angular::{clebsch_gordan, HalfInt};
use dicke_rvb::dynamics::{estimate_null_probability, run_ensemble};
use dicke_rvb::numfmt::f64_repr;
use dicke_rvb::rvb::{certify_equivalence, dark_state_projection, rvb_permutation_sum};
use dicke_rvb::sector::{
    dark_sector_state, entanglement_entropy, expectation_s_squared, expectation_sz,
    null_emission_probability, schmidt_spectrum,
};
use dicke_rvb::spin_basis::real_expectation;
use dicke_rvb::{
    CavityParams, Error, FullState, Model, Result, RowSplit, TrajectoryConfig,
};

#[derive(Parser)]
#[command(name = "dicke-rvb", version, about = "Subradiant RVB dark states: construct, verify, analyze, simulate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the dark state with one chosen constructor.
    Construct(ConstructArgs),
    /// Cross-check all constructors and the ladder annihilation conditions.
    Verify(VerifyArgs),
    /// Closed-form observables: null probability, Schmidt spectrum, entropy.
    Analyze(AnalyzeArgs),
    /// Photon-counting Monte-Carlo trajectory ensemble.
    Simulate(SimulateArgs),
    /// One Clebsch-Gordan coefficient ⟨j1 m1; j2 m2|j (m1+m2)⟩.
    Cg(CgArgs),
}

#[derive(Args)]
struct ConstructArgs {
    /// Initially excited spins (top row), M.
    #[arg(long)]
    m: usize,
    /// Initially ground spins (bottom row), N.
    #[arg(long)]
    n: usize,
    #[arg(long, value_enum, default_value_t = Method::Closed)]
    method: Method,
    /// Write the state JSON here (with a sidecar manifest) instead of
    /// inlining it in the stdout document.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy)]
enum Method {
    /// Sum of singlet products over all dimer covers (full register).
    Perm,
    /// Per-cell closed-form coefficients (two-row sector, scales far best).
    Closed,
    /// Total-spin projection of the initial product state (full register).
    Project,
}

impl Method {
    fn name(self) -> &'static str {
        match self {
            Method::Perm => "perm",
            Method::Closed => "closed",
            Method::Project => "project",
        }
    }
}

#[derive(Args)]
struct VerifyArgs {
    /// Check the single pair (M, N).
    #[arg(long, requires = "n", conflicts_with = "max_n")]
    m: Option<usize>,
    #[arg(long, requires = "m", conflicts_with = "max_n")]
    n: Option<usize>,
    /// Sweep every pair M <= N up to this N.
    #[arg(long)]
    max_n: Option<usize>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    m: usize,
    #[arg(long)]
    n: usize,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, value_enum)]
    model: Option<ModelArg>,
    #[arg(long)]
    n_traj: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Integration horizon in units of 1/Γ.
    #[arg(long)]
    t_max: Option<f64>,
    /// Integrator step in units of 1/Γ.
    #[arg(long)]
    dt: Option<f64>,
    /// Spin-photon coupling g.
    #[arg(long)]
    g: Option<f64>,
    /// Cavity decay rate κ.
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    qubit_splitting: Option<f64>,
    #[arg(long)]
    cavity_freq: Option<f64>,
    /// Click-free collective decay periods required for a null record.
    #[arg(long)]
    deadtime_factor: Option<f64>,
    /// Probability that an emitted photon registers a click.
    #[arg(long)]
    detector_efficiency: Option<f64>,
    /// Highest Fock level kept by the full-cavity model.
    #[arg(long)]
    photon_cutoff: Option<usize>,
    /// JSON file with the same keys as the flags; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for trajectories.csv and summary.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy)]
enum ModelArg {
    /// Cavity adiabatically eliminated; pure collective decay.
    Effective,
    /// Spins plus truncated cavity mode.
    Full,
}

#[derive(Args)]
struct CgArgs {
    #[arg(long, value_parser = half_int, allow_hyphen_values = true)]
    j1: HalfInt,
    #[arg(long, value_parser = half_int, allow_hyphen_values = true)]
    j2: HalfInt,
    #[arg(long, value_parser = half_int, allow_hyphen_values = true)]
    j: HalfInt,
    #[arg(long, value_parser = half_int, allow_hyphen_values = true)]
    m1: HalfInt,
    #[arg(long, value_parser = half_int, allow_hyphen_values = true)]
    m2: HalfInt,
}

fn half_int(s: &str) -> std::result::Result<HalfInt, String> {
    HalfInt::from_str(s).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_thread_pool();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(if err.is_capacity() { 3 } else { 2 })
        }
    }
}

/// Honors DICKE_RVB_THREADS before rayon spins up its default pool.
fn init_thread_pool() {
    if let Ok(raw) = std::env::var("DICKE_RVB_THREADS") {
        match raw.trim().parse::<usize>() {
            Ok(k) if k > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
            }
            _ => eprintln!("warning: ignoring DICKE_RVB_THREADS={raw:?} (want a positive integer)"),
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Construct(args) => {
            println!("{}", cmd_construct(&args)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify(args) => {
            let (doc, pass) = cmd_verify(&args)?;
            println!("{doc}");
            Ok(if pass { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Analyze(args) => {
            println!("{}", cmd_analyze(&args)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Simulate(args) => {
            println!("{}", cmd_simulate(&args)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Cg(args) => {
            println!("{}", cmd_cg(&args)?);
            Ok(ExitCode::SUCCESS)
        }
    }
}

/// JSON string literal with escaping.
fn js(s: &str) -> String {
    serde_json::Value::from(s).to_string()
}

fn render_doc(fields: &[(&str, String)]) -> String {
    let body: Vec<String> = fields
        .iter()
        .map(|(k, v)| format!("  {}: {}", js(k), v))
        .collect();
    format!("{{\n{}\n}}", body.join(",\n"))
}

fn render_manifest(command: &str, seed: Option<u64>, params: &[(&str, String)]) -> String {
    let body: Vec<String> = params
        .iter()
        .map(|(k, v)| format!("{}: {}", js(k), v))
        .collect();
    let seed = seed.map_or_else(|| "null".to_string(), |s| s.to_string());
    let timestamp = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Micros, true);
    format!(
        "{{\"command\": {}, \"version\": {}, \"seed\": {}, \"timestamp\": {}, \"params\": {{{}}}}}",
        js(command),
        js(env!("CARGO_PKG_VERSION")),
        seed,
        js(&timestamp),
        body.join(", ")
    )
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents)
        .map_err(|e| Error::invalid(format!("cannot write {}: {e}", path.display())))
}

/// `state.json` gets its manifest next door as `state.json.manifest.json`.
fn sidecar_manifest_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_os_string();
    os.push(".manifest.json");
    PathBuf::from(os)
}

fn full_state_observables(state: &FullState) -> (f64, f64, f64) {
    (
        state.norm(),
        real_expectation(state, &state.apply_sz()),
        real_expectation(state, &state.apply_s_squared()),
    )
}

fn cmd_construct(args: &ConstructArgs) -> Result<String> {
    let split = RowSplit::new(args.m, args.n);
    split.check_dark_ordering()?;
    let manifest = render_manifest(
        "construct",
        None,
        &[
            ("m", args.m.to_string()),
            ("n", args.n.to_string()),
            ("method", js(args.method.name())),
        ],
    );

    let mut fields: Vec<(&str, String)> = vec![
        ("manifest", manifest.clone()),
        ("m", args.m.to_string()),
        ("n", args.n.to_string()),
        ("method", js(args.method.name())),
    ];

    let state_json = match args.method {
        Method::Closed => {
            let state = dark_sector_state(split)?;
            fields.push(("representation", js("sector")));
            fields.push(("norm", f64_repr(state.norm())));
            fields.push(("m_tot", f64_repr(expectation_sz(&state))));
            fields.push(("s_squared", f64_repr(expectation_s_squared(&state))));
            state.to_json_string()
        }
        Method::Perm => {
            let state = rvb_permutation_sum(split)?;
            let (norm, m_tot, s2) = full_state_observables(&state);
            fields.push(("representation", js("full")));
            fields.push(("norm", f64_repr(norm)));
            fields.push(("m_tot", f64_repr(m_tot)));
            fields.push(("s_squared", f64_repr(s2)));
            state.to_json_string()
        }
        Method::Project => {
            let (state, pre_norm2) = dark_state_projection(split)?;
            let (norm, m_tot, s2) = full_state_observables(&state);
            fields.push(("representation", js("full")));
            fields.push(("norm", f64_repr(norm)));
            fields.push(("m_tot", f64_repr(m_tot)));
            fields.push(("s_squared", f64_repr(s2)));
            fields.push(("pre_normalization_squared_norm", f64_repr(pre_norm2)));
            state.to_json_string()
        }
    };

    match &args.out {
        Some(path) => {
            write_file(path, &format!("{state_json}\n"))?;
            write_file(&sidecar_manifest_path(path), &format!("{manifest}\n"))?;
            fields.push(("state_path", js(&path.display().to_string())));
        }
        None => fields.push(("state", state_json)),
    }
    Ok(render_doc(&fields))
}

fn cmd_verify(args: &VerifyArgs) -> Result<(String, bool)> {
    let (pairs, params) = match (args.m, args.n, args.max_n) {
        (Some(m), Some(n), None) => (
            vec![RowSplit::new(m, n)],
            vec![("m", m.to_string()), ("n", n.to_string())],
        ),
        (None, None, Some(max_n)) => {
            if max_n == 0 {
                return Err(Error::invalid("--max-n must be at least 1"));
            }
            let pairs = (1..=max_n)
                .flat_map(|n| (0..=n).map(move |m| RowSplit::new(m, n)))
                .collect();
            (pairs, vec![("max_n", max_n.to_string())])
        }
        _ => return Err(Error::invalid("pass --m with --n, or --max-n")),
    };

    let mut reports = Vec::with_capacity(pairs.len());
    let mut pass = true;
    for split in &pairs {
        let report = certify_equivalence(*split)?;
        pass &= report.pass;
        reports.push(report.to_json_string());
    }

    let fields = [
        ("manifest", render_manifest("verify", None, &params)),
        ("reports", format!("[{}]", reports.join(", "))),
        ("pass", pass.to_string()),
    ];
    Ok((render_doc(&fields), pass))
}

fn cmd_analyze(args: &AnalyzeArgs) -> Result<String> {
    let split = RowSplit::new(args.m, args.n);
    split.check_dark_ordering()?;
    let state = dark_sector_state(split)?;
    let spectrum = schmidt_spectrum(&state)?;
    let coefficients: Vec<String> = spectrum.coefficients.iter().map(|c| f64_repr(*c)).collect();

    let fields = [
        (
            "manifest",
            render_manifest(
                "analyze",
                None,
                &[("m", args.m.to_string()), ("n", args.n.to_string())],
            ),
        ),
        ("m", args.m.to_string()),
        ("n", args.n.to_string()),
        (
            "sector_dimension",
            ((args.m + 1) * (args.n + 1)).to_string(),
        ),
        (
            "null_emission_probability",
            f64_repr(null_emission_probability(split)),
        ),
        ("schmidt_coefficients", format!("[{}]", coefficients.join(", "))),
        (
            "entanglement_entropy_nats",
            f64_repr(entanglement_entropy(&spectrum)),
        ),
    ];
    Ok(render_doc(&fields))
}

/// Keys a simulate config file may set; command-line flags override them.
const CONFIG_KEYS: &[&str] = &[
    "m",
    "n",
    "model",
    "n_traj",
    "seed",
    "t_max",
    "dt",
    "g",
    "kappa",
    "qubit_splitting",
    "cavity_freq",
    "deadtime_factor",
    "detector_efficiency",
    "photon_cutoff",
];

struct FileConfig(serde_json::Map<String, serde_json::Value>);

impl FileConfig {
    fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::invalid(format!("cannot read {}: {e}", path.display())))?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| Error::invalid(format!("{} is not valid JSON: {e}", path.display())))?;
        let map = match value {
            serde_json::Value::Object(map) => map,
            _ => return Err(Error::invalid("config must be a JSON object")),
        };
        for key in map.keys() {
            if !CONFIG_KEYS.contains(&key.as_str()) {
                return Err(Error::invalid(format!("unknown config key {key:?}")));
            }
        }
        Ok(Self(map))
    }

    fn get_u64(&self, key: &str) -> Result<Option<u64>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(v) => v.as_u64().map(Some).ok_or_else(|| {
                Error::invalid(format!("config key {key:?} must be a nonnegative integer"))
            }),
        }
    }

    fn get_usize(&self, key: &str) -> Result<Option<usize>> {
        Ok(self.get_u64(key)?.map(|v| v as usize))
    }

    fn get_f64(&self, key: &str) -> Result<Option<f64>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(v) => v
                .as_f64()
                .map(Some)
                .ok_or_else(|| Error::invalid(format!("config key {key:?} must be a number"))),
        }
    }

    fn get_str(&self, key: &str) -> Result<Option<&str>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(v) => v
                .as_str()
                .map(Some)
                .ok_or_else(|| Error::invalid(format!("config key {key:?} must be a string"))),
        }
    }
}

fn cfg_usize(file: Option<&FileConfig>, key: &str) -> Result<Option<usize>> {
    file.map_or(Ok(None), |c| c.get_usize(key))
}

fn cfg_u64(file: Option<&FileConfig>, key: &str) -> Result<Option<u64>> {
    file.map_or(Ok(None), |c| c.get_u64(key))
}

fn cfg_f64(file: Option<&FileConfig>, key: &str) -> Result<Option<f64>> {
    file.map_or(Ok(None), |c| c.get_f64(key))
}

fn parse_model_name(s: &str) -> Result<Model> {
    match s {
        "effective" | "effective-collective" => Ok(Model::EffectiveCollective),
        "full" | "full-cavity" => Ok(Model::FullCavity),
        _ => Err(Error::invalid(format!(
            "unknown model {s:?} (use \"effective\" or \"full\")"
        ))),
    }
}

fn resolve_simulate(
    args: &SimulateArgs,
) -> Result<(RowSplit, TrajectoryConfig, CavityParams)> {
    let file = match &args.config {
        Some(path) => Some(FileConfig::load(path)?),
        None => None,
    };
    let file = file.as_ref();

    let m = args
        .m
        .or(cfg_usize(file, "m")?)
        .ok_or_else(|| Error::invalid("--m is required (flag or config)"))?;
    let n = args
        .n
        .or(cfg_usize(file, "n")?)
        .ok_or_else(|| Error::invalid("--n is required (flag or config)"))?;
    let split = RowSplit::new(m, n);

    let model = match args.model {
        Some(ModelArg::Effective) => Model::EffectiveCollective,
        Some(ModelArg::Full) => Model::FullCavity,
        None => match file.map(|c| c.get_str("model")).transpose()?.flatten() {
            Some(name) => parse_model_name(name)?,
            None => Model::EffectiveCollective,
        },
    };

    let mut cfg = TrajectoryConfig::default_for(model);
    if let Some(v) = args.n_traj.or(cfg_usize(file, "n_traj")?) {
        cfg.n_traj = v;
    }
    if let Some(v) = args.seed.or(cfg_u64(file, "seed")?) {
        cfg.seed = v;
    }
    if let Some(v) = args.t_max.or(cfg_f64(file, "t_max")?) {
        cfg.t_max = v;
    }
    if let Some(v) = args.dt.or(cfg_f64(file, "dt")?) {
        cfg.dt = v;
    }
    if let Some(v) = args.deadtime_factor.or(cfg_f64(file, "deadtime_factor")?) {
        cfg.deadtime_factor = v;
    }
    if let Some(v) = args
        .detector_efficiency
        .or(cfg_f64(file, "detector_efficiency")?)
    {
        cfg.detector_efficiency = v;
    }

    let mut params = CavityParams::protocol_defaults(split);
    if let Some(v) = args.g.or(cfg_f64(file, "g")?) {
        params.coupling = v;
    }
    if let Some(v) = args.kappa.or(cfg_f64(file, "kappa")?) {
        params.cavity_decay = v;
    }
    if let Some(v) = args.qubit_splitting.or(cfg_f64(file, "qubit_splitting")?) {
        params.qubit_splitting = v;
    }
    if let Some(v) = args.cavity_freq.or(cfg_f64(file, "cavity_freq")?) {
        params.cavity_freq = v;
    }
    if let Some(v) = args.photon_cutoff.or(cfg_usize(file, "photon_cutoff")?) {
        params.photon_cutoff = v;
    }

    cfg.validate()?;
    params.validate()?;
    Ok((split, cfg, params))
}

fn trajectories_csv(records: &[dicke_rvb::TrajectoryRecord]) -> String {
    let mut csv = String::from("index,n_jumps,first_jump_time,null_flag,fidelity\n");
    for r in records {
        let first = r.first_jump_time().map(f64_repr).unwrap_or_default();
        let fidelity = r.fidelity_to_dark.map(f64_repr).unwrap_or_default();
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.index,
            r.emitted_count,
            first,
            u8::from(r.null),
            fidelity
        ));
    }
    csv
}

fn cmd_simulate(args: &SimulateArgs) -> Result<String> {
    let (split, cfg, params) = resolve_simulate(args)?;
    split.check_dark_ordering()?;

    let manifest = render_manifest(
        "simulate",
        Some(cfg.seed),
        &[
            ("m", split.m_top.to_string()),
            ("n", split.n_bottom.to_string()),
            ("model", js(&cfg.model.to_string())),
            ("n_traj", cfg.n_traj.to_string()),
            ("seed", cfg.seed.to_string()),
            ("t_max", f64_repr(cfg.t_max)),
            ("dt", f64_repr(cfg.dt)),
            ("deadtime_factor", f64_repr(cfg.deadtime_factor)),
            ("detector_efficiency", f64_repr(cfg.detector_efficiency)),
            ("g", f64_repr(params.coupling)),
            ("kappa", f64_repr(params.cavity_decay)),
            ("qubit_splitting", f64_repr(params.qubit_splitting)),
            ("cavity_freq", f64_repr(params.cavity_freq)),
            ("photon_cutoff", params.photon_cutoff.to_string()),
        ],
    );

    let records = run_ensemble(&params, split, &cfg)?;
    let stats = estimate_null_probability(&records);

    let mut fields: Vec<(&str, String)> = vec![
        ("manifest", manifest),
        ("model", js(&cfg.model.to_string())),
        ("collective_rate", f64_repr(params.collective_rate())),
        (
            "lossy_regime",
            params.is_lossy_regime(split.total()).to_string(),
        ),
        ("stats", stats.to_json_string()),
        (
            "p_null_closed_form",
            f64_repr(null_emission_probability(split)),
        ),
    ];

    if let Some(dir) = &args.out {
        fs::create_dir_all(dir)
            .map_err(|e| Error::invalid(format!("cannot create {}: {e}", dir.display())))?;
        let csv_path = dir.join("trajectories.csv");
        let summary_path = dir.join("summary.json");
        write_file(&csv_path, &trajectories_csv(&records))?;
        fields.push(("trajectories_path", js(&csv_path.display().to_string())));
        fields.push(("summary_path", js(&summary_path.display().to_string())));
        let doc = render_doc(&fields);
        write_file(&summary_path, &format!("{doc}\n"))?;
        return Ok(doc);
    }
    Ok(render_doc(&fields))
}

fn cmd_cg(args: &CgArgs) -> Result<String> {
    let value = clebsch_gordan(args.j1, args.j2, args.j, args.m1, args.m2)?;
    let params = [
        ("j1", js(&args.j1.to_string())),
        ("j2", js(&args.j2.to_string())),
        ("j", js(&args.j.to_string())),
        ("m1", js(&args.m1.to_string())),
        ("m2", js(&args.m2.to_string())),
    ];
    let fields = [
        ("manifest", render_manifest("cg", None, &params)),
        ("j1", js(&args.j1.to_string())),
        ("j2", js(&args.j2.to_string())),
        ("j", js(&args.j.to_string())),
        ("m1", js(&args.m1.to_string())),
        ("m2", js(&args.m2.to_string())),
        ("value", f64_repr(value)),
    ];
    Ok(render_doc(&fields))
}
