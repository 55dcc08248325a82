use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crs_core::agents::relation_shots_from_examples;
use crs_core::corpus::SpeakerScope;
use crs_core::eval::run_eval_detailed;
use crs_core::{
    converse, retrieve_knowledge, train_goal_baseline, AgentDeps, AgentError, ConverseMode,
    Corpus, DialogueHistory, EvalError, GoalTrainingConfig, TaskKind, Turn,
};

use crate::app::{load_corpus, App, CliError};
use crate::config::{AppConfig, CorpusFiles};
use crate::service::{self, AppState};

#[derive(Debug, Parser)]
#[command(name = "crs", version, about = "Knowledge-grounded, goal-directed conversational recommender")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Where to write the command's JSON output.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Use a scripted rule file instead of the configured model.
    #[arg(long, global = true)]
    pub script: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score a generation mode on the test corpus.
    Eval(EvalArgs),
    /// Knowledge ratio per goal and goal distribution of a corpus.
    Analyze(AnalyzeArgs),
    /// Fit the local goal planner on the training corpus.
    TrainGoal(TrainGoalArgs),
    /// Retrieve knowledge for a single utterance.
    Retrieve(RetrieveArgs),
    /// Interactive chat on the terminal.
    Chat(ChatArgs),
    /// Run the HTTP chat service.
    Serve(ServeArgs),
}

#[derive(Debug, Args, Default)]
pub struct CorpusArgs {
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long, requires = "train")]
    pub train_header: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long, requires = "test")]
    pub test_header: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// response | rec
    #[arg(long)]
    pub task: Option<String>,
    /// dg | cot-g | cot-k | oracle-g | oracle-k | oracle-both | chatcrs
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub shots: Option<usize>,
    #[arg(long)]
    pub kb: Option<PathBuf>,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub limit: Option<usize>,
    /// Write every scored turn as JSONL.
    #[arg(long)]
    pub details: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Scope {
    All,
    System,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long, requires = "header")]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub header: Option<PathBuf>,
    /// Which speakers' turns count towards the knowledge ratio.
    #[arg(long, value_enum, default_value = "all")]
    pub scope: Scope,
}

#[derive(Debug, Args)]
pub struct TrainGoalArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub context_window: Option<usize>,
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub text: String,
    #[arg(long)]
    pub kb: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ChatArgs {
    #[arg(long)]
    pub kb: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub bind: Option<String>,
    #[arg(long)]
    pub kb: Option<PathBuf>,
}

fn write_out(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents)
        .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

fn pick_corpus(
    data: &Option<PathBuf>,
    header: &Option<PathBuf>,
    configured: &Option<CorpusFiles>,
) -> Result<Option<Corpus>, CliError> {
    match (data, header) {
        (Some(data), Some(header)) => load_corpus(&CorpusFiles {
            data: data.clone(),
            header: header.clone(),
        })
        .map(Some),
        (Some(_), None) | (None, Some(_)) => {
            Err(CliError::usage("a corpus needs both its data file and its header"))
        }
        (None, None) => configured.as_ref().map(load_corpus).transpose(),
    }
}

fn parse_task(arg: &Option<String>, config: &AppConfig) -> Result<TaskKind, CliError> {
    arg.as_ref()
        .or(config.task.as_ref())
        .ok_or_else(|| CliError::usage("--task is required"))?
        .parse()
        .map_err(CliError::usage)
}

fn parse_mode(arg: &Option<String>, config: &AppConfig) -> Result<ConverseMode, CliError> {
    arg.as_ref()
        .or(config.mode.as_ref())
        .ok_or_else(|| CliError::usage("--mode is required"))?
        .parse()
        .map_err(CliError::usage)
}

/// Few-shot demonstrations whose gold turn carries everything the prompt
/// template shows, plus relation-selection shots for retrieval.
fn attach_shots(
    deps: &mut AgentDeps,
    train: Option<&Corpus>,
    n: usize,
    seed: u64,
    mode: ConverseMode,
    task: TaskKind,
) -> Result<(), CliError> {
    if n == 0 {
        return Ok(());
    }
    let train = train.ok_or_else(|| CliError::usage("few-shot prompting needs a training corpus"))?;
    let template = mode.template_mode(task);
    deps.shots = train
        .sample_shots_where(n, seed, |_, gold| {
            (task != TaskKind::Recommendation || !gold.gold_items.is_empty())
                && (!template.needs_gold_goal() || !gold.goals.is_empty())
        })
        .map_err(CliError::runtime)?;
    if let Some(kb) = &deps.kb {
        let examples = train
            .sample_shots_where(n, seed, |_, gold| !gold.knowledge.is_empty())
            .map_err(CliError::runtime)?;
        deps.relation_shots = relation_shots_from_examples(&examples, kb);
    }
    Ok(())
}

/// Interactive sessions offer the goals declared by the configured corpora
/// unless the config lists its own.
fn fill_inventory(deps: &mut AgentDeps, app: &App, train: Option<&Corpus>) -> Result<(), CliError> {
    if !deps.config.goal_inventory.is_empty() {
        return Ok(());
    }
    if let Some(c) = train {
        deps.config.goal_inventory = c.goal_inventory().to_vec();
    } else if let Some(c) = pick_corpus(&None, &None, &app.config.corpus.test)? {
        deps.config.goal_inventory = c.goal_inventory().to_vec();
    }
    Ok(())
}

fn check_mode_deps(deps: &AgentDeps, mode: ConverseMode, task: TaskKind) -> Result<(), CliError> {
    if mode == ConverseMode::ChatCrs {
        if deps.kb.is_none() {
            return Err(CliError::usage("chatcrs mode needs a knowledge base (--kb or kb_path)"));
        }
        if task == TaskKind::ResponseGeneration && deps.goal_backend.is_none() {
            return Err(CliError::usage("chatcrs responses need a goal backend ([goal] in the config)"));
        }
    }
    Ok(())
}

pub fn eval(app: &App, args: &EvalArgs, out: Option<&Path>) -> Result<(), CliError> {
    let cfg = &app.config;
    let task = parse_task(&args.task, cfg)?;
    let mode = parse_mode(&args.mode, cfg)?;
    let n_shots = args.shots.unwrap_or(cfg.n_shots);
    let test = pick_corpus(&args.corpus.test, &args.corpus.test_header, &cfg.corpus.test)?
        .ok_or_else(|| CliError::usage("no test corpus (--test/--test-header or [corpus.test])"))?;

    let mut deps = app.deps(args.kb.as_deref())?;
    check_mode_deps(&deps, mode, task)?;
    if deps.config.goal_inventory.is_empty() {
        deps.config.goal_inventory = test.goal_inventory().to_vec();
    }
    let train = if n_shots > 0 {
        pick_corpus(&args.corpus.train, &args.corpus.train_header, &cfg.corpus.train)?
    } else {
        None
    };
    attach_shots(&mut deps, train.as_ref(), n_shots, cfg.seed, mode, task)?;

    let mut eval_cfg = cfg.eval.clone();
    if args.limit.is_some() {
        eval_cfg.limit = args.limit;
    }
    let (report, records) = match run_eval_detailed(&test, mode, task, &deps, &eval_cfg) {
        Ok(r) => r,
        Err(e @ EvalError::WrongSplit { .. }) => return Err(CliError::usage(e)),
        Err(EvalError::Agent(e @ AgentError::MissingDependency { .. })) => {
            return Err(CliError::usage(e))
        }
        Err(e) => return Err(CliError::runtime(e)),
    };
    if let Some(path) = out {
        write_out(path, &report.to_json())?;
    }
    if let Some(path) = &args.details {
        let lines: String = records
            .iter()
            .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
            .collect();
        write_out(path, &lines)?;
    }
    println!("{mode}/{task}  {}", report.table_row());
    let counts: Vec<String> = report.counts.iter().map(|(k, v)| format!("{k}={v}")).collect();
    println!("{}", counts.join(" "));
    Ok(())
}

pub fn analyze(app: &App, args: &AnalyzeArgs, out: Option<&Path>) -> Result<(), CliError> {
    let cfg = &app.config;
    let corpus = pick_corpus(&args.corpus, &args.header, &None)?
        .or(pick_corpus(&None, &None, &cfg.corpus.train)?)
        .or(pick_corpus(&None, &None, &cfg.corpus.test)?)
        .ok_or_else(|| CliError::usage("no corpus (--corpus/--header or [corpus])"))?;
    if !corpus.has_goal_annotations() {
        return Err(CliError::runtime(format!(
            "corpus {} has no goal annotations",
            corpus.name()
        )));
    }
    let scope = match args.scope {
        Scope::All => SpeakerScope::All,
        Scope::System => SpeakerScope::SystemOnly,
    };
    let ratio = corpus.knowledge_ratio(scope);
    let distribution = corpus.goal_distribution();

    println!("knowledge ratio");
    let mut rows = Vec::new();
    for (goal, s) in ratio.sorted() {
        println!("{goal} {}/{} {:.3}", s.n_with_knowledge, s.n_total, s.ratio);
        rows.push(json!({
            "goal": goal,
            "n_with_knowledge": s.n_with_knowledge,
            "n_total": s.n_total,
            "ratio": s.ratio,
        }));
    }
    println!("goal distribution");
    let mut dist: Vec<_> = distribution.iter().collect();
    dist.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
    for (goal, n) in &dist {
        println!("{goal} {n}");
    }
    if let Some(path) = out {
        let report = json!({
            "corpus": corpus.name(),
            "knowledge_ratio": rows,
            "goal_distribution": distribution,
        });
        write_out(path, &serde_json::to_string_pretty(&report).expect("report serializes"))?;
    }
    Ok(())
}

pub fn train_goal(app: &App, args: &TrainGoalArgs, out: Option<&Path>) -> Result<(), CliError> {
    let out = out.ok_or_else(|| CliError::usage("train-goal needs --out for the model file"))?;
    let train = pick_corpus(&args.corpus.train, &args.corpus.train_header, &app.config.corpus.train)?
        .ok_or_else(|| CliError::usage("no training corpus (--train/--train-header or [corpus.train])"))?;
    let mut tc = GoalTrainingConfig::default();
    if let Some(w) = args.context_window {
        tc.context_window = w;
    }
    if let Some(l2) = args.l2 {
        tc.l2 = l2;
    }
    if let Some(e) = args.max_epochs {
        tc.max_epochs = e;
    }
    let (model, report) = train_goal_baseline(&train, &tc).map_err(CliError::runtime)?;
    write_out(out, &model.to_json())?;
    println!(
        "examples={} epochs={} final_nll={:.6}",
        report.n_examples, report.epochs, report.final_nll
    );
    if let Some(test) = pick_corpus(&args.corpus.test, &args.corpus.test_header, &app.config.corpus.test)? {
        let (mut hit, mut n) = (0usize, 0usize);
        for (_, _, history) in test.system_targets() {
            let gold = history.gold_next.as_ref().expect("targets carry gold");
            if gold.goals.is_empty() || history.is_empty() {
                continue;
            }
            n += 1;
            let mut want = gold.goals.clone();
            want.sort();
            let mut got = model.predict(&history).goals;
            got.sort();
            hit += usize::from(got == want);
        }
        if n > 0 {
            println!("test_accuracy={:.4} ({hit}/{n})", hit as f64 / n as f64);
        }
    }
    Ok(())
}

pub fn retrieve(app: &App, args: &RetrieveArgs, out: Option<&Path>) -> Result<(), CliError> {
    let kb = app
        .kb(args.kb.as_deref())?
        .ok_or_else(|| CliError::usage("retrieve needs a knowledge base (--kb or kb_path)"))?;
    let deps = app.deps(None)?;
    let history = DialogueHistory::new(vec![Turn::user(args.text.clone())]);
    let (knowledge, trace) = retrieve_knowledge(
        &kb,
        &history,
        deps.model.as_ref(),
        &deps.pack,
        &deps.relation_shots,
        deps.config.object_cap,
        deps.config.seed,
    );
    let text = serde_json::to_string_pretty(&json!({"knowledge": knowledge, "trace": trace}))
        .expect("retrieval serializes");
    println!("{text}");
    if let Some(path) = out {
        write_out(path, &text)?;
    }
    Ok(())
}

pub fn chat(app: &App, args: &ChatArgs) -> Result<(), CliError> {
    let mut deps = app.deps(args.kb.as_deref())?;
    check_mode_deps(&deps, ConverseMode::ChatCrs, TaskKind::ResponseGeneration)?;
    let train = pick_corpus(&None, &None, &app.config.corpus.train)?;
    fill_inventory(&mut deps, app, train.as_ref())?;
    attach_shots(
        &mut deps,
        train.as_ref(),
        app.config.n_shots,
        app.config.seed,
        ConverseMode::ChatCrs,
        TaskKind::ResponseGeneration,
    )?;

    let mut turns = Vec::new();
    let stdin = std::io::stdin();
    let mut stdout = std::io::stdout();
    loop {
        print!("user> ");
        stdout.flush().ok();
        let mut line = String::new();
        if stdin.lock().read_line(&mut line).map_err(CliError::runtime)? == 0 {
            break;
        }
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if matches!(line, "/quit" | "/exit") {
            break;
        }
        let mut next = turns.clone();
        next.push(Turn::user(line));
        match converse(
            &DialogueHistory::new(next.clone()),
            TaskKind::ResponseGeneration,
            ConverseMode::ChatCrs,
            &deps,
        ) {
            Ok(out) => {
                let goals = out.used_goal.map(|g| g.goals).unwrap_or_default();
                let response = out.response.unwrap_or_default();
                if !goals.is_empty() {
                    let labels: Vec<&str> = goals.iter().map(|g| g.as_str()).collect();
                    println!("  [goal] {}", labels.join(", "));
                }
                for t in &out.used_knowledge {
                    println!("  [knowledge] {}", serde_json::to_string(t).expect("triple serializes"));
                }
                println!("system> {response}");
                next.push(
                    Turn::system(response)
                        .with_goals(goals)
                        .with_knowledge(out.used_knowledge),
                );
                turns = next;
            }
            Err(e) => eprintln!("error: {e}"),
        }
    }
    Ok(())
}

pub fn serve(app: &App, args: &ServeArgs) -> Result<(), CliError> {
    // The blocking HTTP client must be built, and finally dropped, outside
    // the async runtime; `state` keeps a handle alive on this thread.
    let mut deps = app.deps(args.kb.as_deref())?;
    check_mode_deps(&deps, ConverseMode::ChatCrs, TaskKind::ResponseGeneration)?;
    let train = pick_corpus(&None, &None, &app.config.corpus.train)?;
    fill_inventory(&mut deps, app, train.as_ref())?;
    attach_shots(
        &mut deps,
        train.as_ref(),
        app.config.n_shots,
        app.config.seed,
        ConverseMode::ChatCrs,
        TaskKind::ResponseGeneration,
    )?;
    let config_ref = app
        .config
        .source
        .as_ref()
        .map_or_else(|| "defaults".to_string(), |p| p.display().to_string());
    let state = Arc::new(AppState::new(
        deps,
        config_ref,
        app.config.service.sessions_dir.clone(),
    ));
    let bind = args.bind.clone().unwrap_or_else(|| app.config.service.bind.clone());
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(CliError::runtime)?;
    let result = runtime.block_on(service::serve(Arc::clone(&state), &bind));
    drop(runtime);
    drop(state);
    result.map_err(|e| CliError::runtime(format!("{bind}: {e}")))
}
