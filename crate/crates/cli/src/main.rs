use std::process::ExitCode;

use anyhow::Result;
use clap::Parser;
use fedlab_cli::args::{split_overrides, Cli, Command};
use fedlab_cli::commands::{cmd_run, cmd_stability, cmd_sweep, render_table};
use fedlab_cli::Summary;

fn main() -> ExitCode {
    match real_main() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn report(summary: &Summary) -> bool {
    print!("{}", render_table(summary));
    let ok = summary.all_completed();
    if !ok {
        eprintln!("one or more runs aborted; partial artifacts are flagged in summary.json");
    }
    ok
}

fn real_main() -> Result<bool> {
    let (argv, flags) = split_overrides(std::env::args_os())?;
    let cli = Cli::parse_from(argv);
    match cli.command {
        Command::Run(c) => Ok(report(&cmd_run(&c.plan(&flags)?)?)),
        Command::Sweep(c) => {
            let plan = c.plan(&flags)?;
            Ok(report(&cmd_sweep(&plan, c.jobs)?))
        }
        Command::Stability { common, axis, values, trials } => {
            let plan = common.plan(&flags)?;
            let axis = axis.parse()?;
            Ok(report(&cmd_stability(&plan, axis, &values, trials, common.jobs)?))
        }
        Command::Validate(c) => {
            let plan = c.plan(&flags)?;
            println!("{} run(s)", plan.runs.len());
            for r in &plan.runs {
                println!("{} {}", r.id, serde_json::to_string(&r.config)?);
            }
            Ok(true)
        }
    }
}
