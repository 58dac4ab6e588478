use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::json;

use blockforge::closedloop::{noise_sweep as run_sweep, LoggedPose, NoiseModel, StepLog};
use blockforge::env::{enumerate_actions, load_task_dir};
use blockforge::features::{rasterize_action, state_features, FeatureImage};
use blockforge::learner::{
    evaluate, forward_psi, load_checkpoint, load_checkpoint_for, save_checkpoint, select_action, train_with,
    ActionCache, ApproximatorParams, Architecture, TaskContext, TrainingConfig,
};
use blockforge::rng::sub_rng;
use blockforge::{ActionSpaceConfig, Assembly, Placement, Pose, RewardParams, Task};

use crate::manifest::RunDir;
use crate::render::{assembly_svg, panels_svg, Panel};
use crate::{EvalArgs, RenderArgs, SweepArgs, TaskArgs, TrainArgs, UsageError};

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn load_tasks(a: &TaskArgs) -> Result<Vec<Task>> {
    if !a.tasks.is_dir() {
        return Err(usage(format!("task directory {} does not exist", a.tasks.display())));
    }
    let mut tasks = load_task_dir(&a.tasks).map_err(|e| usage(e.to_string()))?;
    if !a.only.is_empty() {
        let known: BTreeSet<&str> = tasks.iter().map(|t| t.id.as_str()).collect();
        if let Some(missing) = a.only.iter().find(|id| !known.contains(id.as_str())) {
            return Err(usage(format!("no task with id {missing:?} in {}", a.tasks.display())));
        }
        tasks.retain(|t| a.only.contains(&t.id));
    }
    if tasks.is_empty() {
        return Err(usage(format!("no tasks found in {}", a.tasks.display())));
    }
    if let Some(mu) = a.mu {
        if !(mu >= 0.0 && mu.is_finite()) {
            return Err(usage(format!("--mu must be a non-negative number, got {mu}")));
        }
        for t in &mut tasks {
            t.mu = mu;
        }
    }
    Ok(tasks)
}

fn action_space(a: &TaskArgs, base: ActionSpaceConfig) -> Result<ActionSpaceConfig> {
    let mut cfg = base;
    if let Some(n) = a.shifts {
        cfg.shifts_per_face = n;
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn task_ids(tasks: &[Task]) -> Vec<String> {
    tasks.iter().map(|t| t.id.clone()).collect()
}

fn load_params(path: &Path, d: Option<usize>) -> Result<(ApproximatorParams, TrainingConfig)> {
    let r = match d {
        Some(d) => load_checkpoint_for(path, d),
        None => load_checkpoint(path),
    };
    r.with_context(|| format!("loading checkpoint {}", path.display()))
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let tasks = load_tasks(&a.tasks)?;
    let cfg = TrainingConfig {
        gamma: a.gamma,
        learning_rate: a.lr,
        episodes: a.episodes,
        batch_size: a.batch,
        epsilon_start: a.epsilon_start,
        epsilon_end: a.epsilon_end,
        seed: a.seed,
        reward: RewardParams {
            d: a.d,
            sigma_px: a.sigma_px,
            c: a.reward_c,
        },
        action_space: action_space(&a.tasks, ActionSpaceConfig::default())?,
        arch: Architecture {
            base_width: a.base_width,
            ..Architecture::default()
        },
        ..TrainingConfig::default()
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let mut run = RunDir::create(&a.out)?;
    println!("episode solved_count mean_return mean_blocks mean_loss epsilon");
    let out = train_with(&tasks, &cfg, &mut |m| {
        println!(
            "{:>3} {:>2}/{} {:.4} {:.2} {:.5} {:.3}",
            m.episode,
            m.solved_count,
            m.solved.len(),
            m.mean_return,
            m.mean_blocks,
            m.mean_loss,
            m.epsilon
        );
    })?;
    save_checkpoint(&out.params, &cfg, run.file("ckpt.bin"))?;
    save_checkpoint(&out.best_params, &cfg, run.file("best.bin"))?;
    run.write("metrics.csv", out.log.to_csv())?;
    if let Some(b) = out.best_episode {
        println!("best episode {b}");
    }
    let config = json!({ "training": cfg, "mu": a.tasks.mu, "task_dir": a.tasks.tasks, "best_episode": out.best_episode });
    run.finish("train", config, a.seed, task_ids(&tasks))?;
    Ok(())
}

#[derive(Serialize)]
struct EvalRow<'a> {
    task: &'a str,
    solved: bool,
    total_return: f64,
    blocks: usize,
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    if a.render && a.out.is_none() {
        return Err(usage("--render needs --out"));
    }
    let tasks = load_tasks(&a.tasks)?;
    let (params, cfg) = load_params(&a.checkpoint, a.d)?;
    let space = action_space(&a.tasks, cfg.action_space)?;
    let contexts: Vec<TaskContext> = tasks.iter().map(|t| TaskContext::new(t.clone(), &cfg.reward)).collect();
    let records = evaluate(&params, &contexts, &ActionCache::new(space))?;
    let mut csv = String::from("task,solved,return,blocks\n");
    for (t, r) in tasks.iter().zip(&records) {
        let row = EvalRow {
            task: &t.id,
            solved: r.solved(),
            total_return: r.total_reward(),
            blocks: r.blocks(),
        };
        println!("{} solved={} return={:.6} blocks={}", row.task, row.solved, row.total_return, row.blocks);
        csv.push_str(&format!("{},{},{},{}\n", row.task, row.solved, row.total_return, row.blocks));
    }
    let solved = records.iter().filter(|r| r.solved()).count();
    println!("solved {solved}/{}", records.len());
    if let Some(out) = &a.out {
        let mut run = RunDir::create(out)?;
        run.write("eval.csv", &csv)?;
        if a.render {
            for (t, r) in tasks.iter().zip(&records) {
                run.write(&format!("{}.svg", t.id), assembly_svg(t, &r.final_state()))?;
            }
        }
        let config = json!({
            "checkpoint": a.checkpoint,
            "training": cfg,
            "action_space": space,
            "mu": a.tasks.mu,
            "task_dir": a.tasks.tasks,
        });
        run.finish("eval", config, cfg.seed, task_ids(&tasks))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct SweepStep<'a> {
    sigma_xy: f64,
    trial: usize,
    #[serde(flatten)]
    step: &'a StepLog,
}

fn table_csv(rows: &[blockforge::closedloop::SweepRow]) -> String {
    let mut s = String::from("task,sigma_xy,success,avg_offset,max_offset\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{}/{},{:.4},{:.4}\n",
            r.task, r.sigma_xy, r.successes, r.trials, r.avg_offset, r.max_offset
        ));
    }
    s
}

pub fn noise_sweep(a: &SweepArgs) -> Result<()> {
    if a.trials == 0 {
        return Err(usage("--trials must be at least 1"));
    }
    let levels: Vec<NoiseModel> = a
        .noise_sigma
        .iter()
        .map(|&s| {
            let m = NoiseModel {
                seed: a.seed,
                ..NoiseModel::with_sigma_xy(s)
            };
            m.validate().map(|_| m).map_err(|e| usage(e.to_string()))
        })
        .collect::<Result<_>>()?;
    let tasks = load_tasks(&a.tasks)?;
    let (params, cfg) = load_params(&a.checkpoint, a.d)?;
    let space = action_space(&a.tasks, cfg.action_space)?;
    let contexts: Vec<TaskContext> = tasks.iter().map(|t| TaskContext::new(t.clone(), &cfg.reward)).collect();
    let mut run = RunDir::create(&a.out)?;
    let res = run_sweep(&params, &contexts, &levels, a.trials, &space)?;

    let mut log = Vec::new();
    let per_level = contexts.len() * a.trials;
    for (n, (_, ep)) in res.episodes.iter().enumerate() {
        let sigma_xy = levels[n / per_level].sigma_xy;
        let trial = n % a.trials;
        for step in ep.step_logs() {
            serde_json::to_writer(&mut log, &SweepStep { sigma_xy, trial, step: &step })?;
            log.push(b'\n');
        }
    }
    run.write("steps.jsonl", &log)?;
    run.write("sweep.csv", res.to_csv())?;
    run.write("table.csv", table_csv(&res.rows))?;

    println!("{:<10} {:>8} {:>9} {:>8} {:>8}", "task", "sigma_xy", "success", "avg_off", "max_off");
    for r in &res.rows {
        println!(
            "{:<10} {:>8} {:>9} {:>8.4} {:>8.4}",
            r.task,
            r.sigma_xy,
            format!("{}/{}", r.successes, r.trials),
            r.avg_offset,
            r.max_offset
        );
    }
    for l in &levels {
        println!("sigma_xy={} success_rate={:.3}", l.sigma_xy, res.success_rate(l.sigma_xy));
    }
    let config = json!({
        "checkpoint": a.checkpoint,
        "training": cfg,
        "action_space": space,
        "noise": levels,
        "trials": a.trials,
        "mu": a.tasks.mu,
        "task_dir": a.tasks.tasks,
    });
    run.finish("noise-sweep", config, a.seed, task_ids(&tasks))?;
    Ok(())
}

/// The five images shown for one step, bottom row first.
#[derive(Serialize)]
struct StepPanels {
    step: usize,
    action: LoggedPose,
    q: Option<f64>,
    state: Vec<f64>,
    action_raster: Vec<f64>,
    obstacles: Vec<f64>,
    reward: Vec<f64>,
    psi: Vec<f64>,
}

fn read_state(path: &Path, task: &Task) -> Result<Assembly> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let poses: Vec<LoggedPose> =
        serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let mut placements = Vec::with_capacity(poses.len());
    for p in poses {
        let shape = *task
            .shapes
            .get(p.shape_id)
            .ok_or_else(|| usage(format!("shape_id {} not in task {}", p.shape_id, task.id)))?;
        placements.push(Placement::new(p.shape_id, shape, Pose::new(p.x, p.z, p.theta)));
    }
    Ok(Assembly::from_placements(placements))
}

pub fn render_psi(a: &RenderArgs) -> Result<()> {
    let tasks = load_tasks(&a.tasks)?;
    let task = tasks
        .into_iter()
        .find(|t| t.id == a.task)
        .ok_or_else(|| usage(format!("no task with id {:?}", a.task)))?;
    let mut state = match &a.state {
        Some(p) => read_state(p, &task)?,
        None => Assembly::new(),
    };
    let (params, cfg) = load_params(&a.checkpoint, a.d)?;
    let space = action_space(&a.tasks, cfg.action_space)?;
    let ctx = TaskContext::new(task.clone(), &cfg.reward);
    let d = ctx.d();
    let mut run = RunDir::create(&a.out)?;
    let mut rng = sub_rng(cfg.seed, "render", &[]);
    let limit = a.steps.unwrap_or(task.max_actions);
    let mut all = Vec::new();
    let mut step = 0;
    while step < limit && !task.is_solved(&state) && state.len() < task.max_actions {
        let actions = enumerate_actions(&state, &task, &space);
        if actions.is_empty() {
            break;
        }
        let sel = select_action(&params, &ctx, &state, &actions, 0.0, &mut rng)?;
        let action = actions[sel.index];
        let psi_s = state_features(&state, d);
        let phi = rasterize_action(&action, d);
        let psi = forward_psi(&params, &psi_s, &phi, &ctx.image)?;
        step += 1;
        let caption = format!("{} step {step} q={:.5}", task.id, sel.q.unwrap_or(f64::NAN));
        let svg = panels_svg(
            &caption,
            &[
                Panel { title: "state", image: &psi_s },
                Panel { title: "action", image: &phi },
                Panel { title: "obstacles", image: &ctx.image.obstacles },
                Panel { title: "reward", image: &ctx.rho.field },
                Panel { title: "psi", image: &psi },
            ],
        );
        run.write(&format!("step{step:02}.svg"), svg)?;
        let data = |img: &FeatureImage| img.data().to_vec();
        all.push(StepPanels {
            step,
            action: (&action).into(),
            q: sel.q,
            state: data(&psi_s),
            action_raster: data(&phi),
            obstacles: data(&ctx.image.obstacles),
            reward: data(&ctx.rho.field),
            psi: data(&psi),
        });
        println!("step {step}: shape {} at ({:.3}, {:.3}, {:.3}) q={:?}", action.shape_id, action.pose.x, action.pose.z, action.pose.theta, sel.q);
        state = state.with(action);
    }
    run.write("panels.json", serde_json::to_vec(&json!({ "task": task.id, "d": d, "steps": all }))?)?;
    run.write("final.svg", assembly_svg(&task, &state))?;
    println!("{} steps, solved={}", all.len(), task.is_solved(&state));
    let config = json!({
        "checkpoint": a.checkpoint,
        "training": cfg,
        "action_space": space,
        "task": task.id,
        "start_state": a.state,
        "mu": a.tasks.mu,
    });
    run.finish("render-psi", config, cfg.seed, vec![task.id.clone()])?;
    Ok(())
}
