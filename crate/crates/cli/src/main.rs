use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::Value;

use edt_core::choice::{ChoiceRule, RegularizationRule, RegularizationSchedule};
use edt_core::harness::{self, ScenarioSpec};
use edt_core::inference::{self, ResampleMode, TestConfig};
use edt_core::{ActionId, ColumnSchema, ContaminationSpec, FunctionClassSpec, Protocol, Utility};

#[derive(Parser)]
#[command(name = "edt", version, about = "Empirical choice sets and membership tests over act/consequence protocols")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute an empirical choice set.
    Choice(ChoiceArgs),
    /// Resampling test of choice-set membership.
    Test(TestArgs),
    /// Membership test valid under contamination.
    Robust(RobustArgs),
    /// Robust p-values of one pair over a grid of contamination shares.
    Breakdown(BreakdownArgs),
    /// Run a scenario round by round.
    Simulate(SimulateArgs),
    /// Run one of the bundled studies.
    Replicate(ReplicateArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Protocol file (CSV `action,<c1>,...` or JSON export).
    #[arg(long)]
    data: PathBuf,
    /// Columns to minimize.
    #[arg(long = "min", value_delimiter = ',')]
    minimize: Vec<String>,
    /// Columns to maximize (the default for unlisted columns).
    #[arg(long = "max", value_delimiter = ',')]
    maximize: Vec<String>,
    /// JSON sidecar declaring column directions.
    #[arg(long)]
    schema: Option<PathBuf>,
}

impl DataArgs {
    fn load(&self) -> Result<Protocol> {
        let mut schema = match &self.schema {
            Some(p) => ColumnSchema::from_json_file(p)?,
            None => ColumnSchema::default(),
        };
        let flags = ColumnSchema::from_flags(&self.minimize, &self.maximize)?;
        schema.columns.extend(flags.columns);
        Protocol::load(&self.data, &schema).with_context(|| format!("loading {}", self.data.display()))
    }
}

#[derive(Args)]
struct OutArgs {
    /// Directory for JSON and CSV outputs; without it JSON goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum RuleKind {
    Eu,
    Dominance,
    Regularized,
    Robust,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Args)]
struct ChoiceArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value = "dominance")]
    rule: RuleKind,
    /// `fsd`, `eu[:w1,w2,..]`, `ssd[:lo:hi:points]` or `file:<path>`.
    #[arg(long, default_value = "fsd")]
    class: String,
    /// Restrict to these actions.
    #[arg(long, value_delimiter = ',')]
    actions: Vec<String>,
    /// Scale of the regularization margin.
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    #[arg(long, default_value_t = 2.0)]
    lipschitz: f64,
    /// Apply the margin to both criterion components.
    #[arg(long)]
    both_regularized: bool,
    #[command(flatten)]
    contamination: ContaminationArgs,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Args)]
struct ContaminationArgs {
    /// Contamination share: a number for every action, or `a=0.1,b=0.2`.
    #[arg(long, conflicts_with = "k")]
    gamma: Option<String>,
    /// Contaminated point counts: a number for every action, or `a=2,b=1`.
    #[arg(long)]
    k: Option<String>,
}

impl ContaminationArgs {
    fn spec(&self, p: &Protocol) -> Result<Option<ContaminationSpec>> {
        if let Some(g) = &self.gamma {
            if let Ok(x) = g.parse::<f64>() {
                return Ok(Some(ContaminationSpec::uniform(x)));
            }
            let gamma = parse_map(g)?;
            return Ok(Some(ContaminationSpec::Gamma { gamma }));
        }
        if let Some(k) = &self.k {
            let k: BTreeMap<ActionId, usize> = match k.parse::<usize>() {
                Ok(n) => p.actions().iter().map(|a| (a.clone(), n)).collect(),
                Err(_) => parse_map::<f64>(k)?.into_iter().map(|(a, v)| (a, v as usize)).collect(),
            };
            return Ok(Some(ContaminationSpec::Count { k }));
        }
        Ok(None)
    }
}

fn parse_map<T: std::str::FromStr>(s: &str) -> Result<BTreeMap<ActionId, T>> {
    let mut m = BTreeMap::new();
    for part in s.split(',') {
        let (a, v) = part.split_once('=').with_context(|| format!("expected action=value, got {part:?}"))?;
        let v = v.trim().parse::<T>().map_err(|_| anyhow::anyhow!("bad value in {part:?}"))?;
        m.insert(ActionId(a.trim().to_string()), v);
    }
    Ok(m)
}

#[derive(Args)]
struct TestCommon {
    #[arg(long, default_value = "fsd")]
    class: String,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 10_000)]
    resamples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "permutation")]
    mode: Mode,
    /// Include every resampled statistic in the report.
    #[arg(long)]
    keep_resamples: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Permutation,
    Bootstrap,
}

impl TestCommon {
    fn config(&self) -> TestConfig {
        TestConfig {
            alpha: self.alpha,
            n_resamples: self.resamples,
            seed: self.seed,
            mode: match self.mode {
                Mode::Permutation => ResampleMode::Permutation,
                Mode::Bootstrap => ResampleMode::Bootstrap,
            },
            keep_resamples: self.keep_resamples,
        }
    }
}

#[derive(Args)]
struct TestArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    target: String,
    /// Actions compared with the target; all others by default.
    #[arg(long, value_delimiter = ',')]
    against: Vec<String>,
    #[command(flatten)]
    common: TestCommon,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct RobustArgs {
    #[command(flatten)]
    test: TestArgs,
    #[command(flatten)]
    contamination: ContaminationArgs,
}

#[derive(Args)]
struct BreakdownArgs {
    #[command(flatten)]
    data: DataArgs,
    /// The action tested for membership.
    #[arg(long)]
    target: String,
    /// The competing action.
    #[arg(long)]
    against: String,
    /// Share grid as `lo:hi:step`.
    #[arg(long, default_value = "0:0.5:0.01")]
    shares: String,
    #[command(flatten)]
    common: TestCommon,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario description in JSON.
    #[arg(long, conflicts_with = "cards")]
    scenario: Option<PathBuf>,
    /// One of the binomial card scenarios (1 or 2).
    #[arg(long)]
    cards: Option<u8>,
    /// Deterministic adversary card game.
    #[arg(long, conflicts_with_all = ["scenario", "cards"])]
    adversary: bool,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "eu")]
    rule: RuleKind,
    #[arg(long, default_value = "fsd")]
    class: String,
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    #[arg(long, default_value_t = 2.0)]
    lipschitz: f64,
    #[arg(long)]
    both_regularized: bool,
    #[arg(long)]
    gamma: Option<f64>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Study {
    Table1,
    Example4Eu,
    Example4Fsd,
    Prompting,
    SsdDemo,
}

#[derive(Args)]
struct ReplicateArgs {
    #[arg(value_enum)]
    study: Study,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 10_000)]
    resamples: usize,
    #[arg(long, default_value_t = 500)]
    rounds: usize,
    /// Group size for the concave-class demonstration.
    #[arg(long, default_value_t = 5)]
    n: usize,
    /// Repetitions for the concave-class demonstration.
    #[arg(long, default_value_t = 10_000)]
    reps: usize,
    /// Prompting data to use instead of the bundled tables.
    #[arg(long)]
    data: Option<PathBuf>,
    #[command(flatten)]
    out: OutArgs,
}

fn emit(out: &OutArgs, stem: &str, json: &Value, csv: &[(&str, String)]) -> Result<()> {
    let text = serde_json::to_string_pretty(json)?;
    match &out.out {
        None => println!("{text}"),
        Some(dir) => {
            fs::create_dir_all(dir)?;
            write(&dir.join(format!("{stem}.json")), &text)?;
            for (name, body) in csv {
                write(&dir.join(format!("{name}.csv")), body)?;
            }
        }
    }
    Ok(())
}

fn write(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn rule_from(
    kind: RuleKind,
    class: &str,
    c: f64,
    lipschitz: f64,
    both: bool,
    contamination: Option<ContaminationSpec>,
) -> Result<ChoiceRule> {
    let class = FunctionClassSpec::parse(class)?;
    Ok(match kind {
        RuleKind::Eu => match class {
            FunctionClassSpec::EuSingleton { utility, .. } => ChoiceRule::Eu { utility },
            FunctionClassSpec::FsdIsotoneIndicators => ChoiceRule::Eu { utility: Utility::identity() },
            _ => bail!("the eu rule needs an `eu[:weights]` class"),
        },
        RuleKind::Dominance => ChoiceRule::Dominance { class },
        RuleKind::Regularized => ChoiceRule::Regularized {
            class,
            schedule: RegularizationSchedule {
                c,
                lipschitz,
                rule: if both { RegularizationRule::BothRegularized } else { RegularizationRule::Standard },
            },
        },
        RuleKind::Robust => ChoiceRule::Robust {
            class,
            contamination: contamination.context("the robust rule needs --gamma or --k")?,
        },
    })
}

fn against(p: &Protocol, target: &str, listed: &[String]) -> Vec<String> {
    let mut set: Vec<String> = if listed.is_empty() {
        p.actions().iter().map(|a| a.0.clone()).collect()
    } else {
        listed.to_vec()
    };
    if !set.iter().any(|a| a == target) {
        set.push(target.to_string());
    }
    set
}

fn share_range(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<f64> = s
        .split(':')
        .map(|x| x.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("bad share grid {s:?}"))?;
    if parts.len() != 3 {
        bail!("share grid must be lo:hi:step");
    }
    Ok(inference::share_grid(parts[0], parts[1], parts[2])?)
}

fn pairwise_csv(report: &inference::TestReport) -> String {
    let mut s = String::from("j,i,observed,p_value,reject\n");
    for r in &report.pairwise {
        s.push_str(&format!("{},{},{},{},{}\n", r.j, r.i, r.observed.value, r.p_value, r.reject));
    }
    s
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Choice(a) => {
            let p = a.data.load()?;
            let rule = rule_from(a.rule, &a.class, a.c, a.lipschitz, a.both_regularized, a.contamination.spec(&p)?)?;
            let sp = if a.actions.is_empty() { p.full() } else { p.sub_protocol(&a.actions)? };
            let set = rule.apply(&sp)?;
            match a.format {
                Format::Json => println!("{}", serde_json::to_string_pretty(&set)?),
                Format::Table => print!("{}", set.to_table()),
            }
        }
        Command::Test(a) => {
            let p = a.data.load()?;
            let class = FunctionClassSpec::parse(&a.common.class)?;
            let set = against(&p, &a.target, &a.against);
            let r = inference::membership_test(&p, &a.target, &set, &class, &a.common.config())?;
            emit(&a.out, "test", &serde_json::to_value(&r)?, &[("pairwise", pairwise_csv(&r))])?;
        }
        Command::Robust(a) => {
            let t = &a.test;
            let p = t.data.load()?;
            let class = FunctionClassSpec::parse(&t.common.class)?;
            let spec = a.contamination.spec(&p)?.context("robust tests need --gamma or --k")?;
            let set = against(&p, &t.target, &t.against);
            let r = inference::robust_membership_test(&p, &t.target, &set, &class, &spec, &t.common.config())?;
            emit(&t.out, "robust", &serde_json::to_value(&r)?, &[("pairwise", pairwise_csv(&r))])?;
        }
        Command::Breakdown(a) => {
            let p = a.data.load()?;
            let class = FunctionClassSpec::parse(&a.common.class)?;
            let shares = share_range(&a.shares)?;
            let c = inference::breakdown_curve(&p, &a.against, &a.target, &class, &a.common.config(), &shares)?;
            emit(&a.out, "breakdown", &serde_json::to_value(&c)?, &[("breakdown", c.to_csv())])?;
        }
        Command::Simulate(a) => {
            let mut spec: ScenarioSpec = match (&a.scenario, a.cards, a.adversary) {
                (Some(path), _, _) => serde_json::from_str(&fs::read_to_string(path)?)?,
                (None, Some(k), _) => harness::example4_scenario(k, 500, 0)?,
                (None, None, true) => harness::adversary_scenario(500),
                (None, None, false) => bail!("give --scenario, --cards or --adversary"),
            };
            if let Some(r) = a.rounds {
                spec.rounds = r;
            }
            if let Some(s) = a.seed {
                spec.seed = s;
            }
            let contamination = a.gamma.map(ContaminationSpec::uniform);
            let rule = rule_from(a.rule, &a.class, a.c, a.lipschitz, a.both_regularized, contamination)?;
            let trace = harness::run_scenario(&spec, &rule)?;
            emit(&a.out, "trace", &serde_json::to_value(&trace)?, &[("trace", trace.to_csv())])?;
        }
        Command::Replicate(a) => replicate(a)?,
    }
    Ok(())
}

fn replicate(a: ReplicateArgs) -> Result<()> {
    match a.study {
        Study::Table1 => {
            let r = harness::replicate_table1()?;
            emit(&a.out, "table1", &serde_json::to_value(&r)?, &[])?;
        }
        Study::Example4Eu | Study::Example4Fsd => {
            let (which, rule) = match a.study {
                Study::Example4Eu => (1, harness::example4_eu_rule()),
                _ => (2, harness::example4_fsd_rule()),
            };
            let spec = harness::example4_scenario(which, a.rounds, a.seed)?;
            let trace = harness::run_scenario(&spec, &rule)?;
            emit(&a.out, "trace", &serde_json::to_value(&trace)?, &[("trace", trace.to_csv())])?;
        }
        Study::Prompting => {
            let cfg = TestConfig::new(0.05, a.resamples, a.seed);
            let r = harness::replicate_prompting_study(a.data.as_deref(), &cfg)?;
            let mut csv = vec![("pairwise", {
                let mut s = String::from("j,i,observed,p_value,reject\n");
                for x in &r.pairwise {
                    s.push_str(&format!("{},{},{},{},{}\n", x.j, x.i, x.observed.value, x.p_value, x.reject));
                }
                s
            })];
            let names = ["breakdown_inpolite_neutral", "breakdown_polite_neutral"];
            for (c, n) in r.breakdown.iter().zip(names) {
                csv.push((n, c.to_csv()));
            }
            emit(&a.out, "prompting", &serde_json::to_value(&r)?, &csv)?;
        }
        Study::SsdDemo => {
            let r = harness::ssd_assumption3_demo(a.n, a.reps, a.seed)?;
            emit(&a.out, "ssd_demo", &serde_json::to_value(&r)?, &[("ssd_demo_ecdf", r.to_csv())])?;
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
