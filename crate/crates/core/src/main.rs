use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use spinescan::scanner::Phase;
use spinescan::scenario::{
    parse_scenario, run_compare, run_detector_eval, run_manual_scenario, run_scenario, RunOptions,
};

/// Deterministic spine-following ultrasound scan simulator.
#[derive(Parser)]
#[command(name = "spinescan", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the robotic scan for a scenario file.
    Scan {
        config: PathBuf,
        /// Output directory (overrides the scenario's outputs.dir).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write every captured frame as frames/NNNN.pgm.
        #[arg(long)]
        dump_frames: bool,
        /// Write the reconstructed coronal slice as coronal.pgm.
        #[arg(long)]
        dump_coronal: bool,
        /// Pace the loop at 30 Hz wall time instead of running flat out.
        #[arg(long)]
        realtime: bool,
    },
    /// Run the simulated manual (noisy-hand) scan.
    Manual {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run robotic and manual scans on one phantom and compare deviations.
    Compare {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Detector metrics (PCK, mean error, loss) on a synthetic sweep.
    DetectorEval {
        config: PathBuf,
        #[arg(long, default_value_t = 500)]
        frames: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn phase_exit(phase: Phase) -> ExitCode {
    match phase {
        Phase::Done => ExitCode::SUCCESS,
        Phase::Stopped => ExitCode::from(2),
        _ => ExitCode::from(1),
    }
}

fn run() -> Result<ExitCode, spinescan::Error> {
    let cli = Cli::parse();
    match cli.command {
        Command::Scan {
            config,
            out,
            dump_frames,
            dump_coronal,
            realtime,
        } => {
            let scn = parse_scenario(&config)?;
            let mut opts = RunOptions::new(&scn, out.as_deref());
            opts.dump_frames |= dump_frames;
            opts.dump_coronal |= dump_coronal;
            opts.realtime = realtime;
            let outcome = run_scenario(&scn, &opts)?;
            println!(
                "scan finished: phase={} ticks={} out={}",
                outcome.report.phase,
                outcome.report.ticks,
                opts.out_dir.display()
            );
            if let Some(stats) = outcome.report.kalman {
                println!(
                    "kalman path: mean_dev={:.2} px ({:.2} mm), std={:.2} px, mean|dev|={:.2} mm",
                    stats.mean_dev_px, stats.mean_dev_mm, stats.std_px, stats.mean_abs_dev_mm
                );
            }
            if let (Some(angle), gt) = (outcome.report.angle_deg, outcome.report.gt_angle_deg) {
                println!("angle: measured {angle:.2} deg, ground truth {gt:.2} deg");
            }
            Ok(phase_exit(outcome.phase))
        }
        Command::Manual { config, out } => {
            let scn = parse_scenario(&config)?;
            let opts = RunOptions::new(&scn, out.as_deref());
            let outcome = run_manual_scenario(&scn, &opts)?;
            println!(
                "manual scan finished: phase={} out={}",
                outcome.report.phase,
                opts.out_dir.display()
            );
            Ok(phase_exit(outcome.phase))
        }
        Command::Compare { config, out } => {
            let scn = parse_scenario(&config)?;
            let opts = RunOptions::new(&scn, out.as_deref());
            let report = run_compare(&scn, &opts)?;
            match (report.robotic_mean_abs_dev_mm, report.manual_mean_abs_dev_mm) {
                (Some(r), Some(m)) => println!(
                    "mean |deviation|: robotic {r:.2} mm vs manual {m:.2} mm -> robotic tighter: {}",
                    r < m
                ),
                _ => println!("comparison incomplete; see compare.json"),
            }
            let both_done = report.robotic.phase == "Done" && report.manual.phase == "Done";
            Ok(if both_done {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            })
        }
        Command::DetectorEval { config, frames, out } => {
            let scn = parse_scenario(&config)?;
            let (report, csv) = run_detector_eval(&scn, frames)?;
            let out_dir = out
                .or_else(|| scn.outputs.dir.clone())
                .unwrap_or_else(|| PathBuf::from("out"));
            std::fs::create_dir_all(&out_dir)?;
            std::fs::write(
                out_dir.join("metrics.json"),
                serde_json::to_string_pretty(&report).expect("report serializes"),
            )?;
            std::fs::write(out_dir.join("detections.csv"), csv)?;
            println!(
                "detector eval: {} frames, PCK@{:.0}px = {:.3}, mean error = {:.2} px, runtime = {:.2} s",
                report.frames, report.pck_threshold_px, report.pck, report.mean_error_px, report.runtime_s
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
