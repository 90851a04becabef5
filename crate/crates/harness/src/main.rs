use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};

use tutorlink_harness::local::LocalGateway;
use tutorlink_harness::scenario::ClockMode;
use tutorlink_harness::{load_run, run_scenario, torture, Api, LoadConfig, Scenario};

#[derive(Parser)]
#[command(name = "harness", about = "Synthetic tutors and students for the gateway")]
struct Args {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario file and check its expectations.
    Run {
        scenario: PathBuf,
        /// host:port of a running gateway; an in-process one is started
        /// when omitted. Simulated-clock scenarios need a gateway started
        /// with the test clock enabled.
        #[arg(long)]
        gateway: Option<String>,
    },
    /// Connect many students at once and report latencies.
    Load {
        #[arg(long)]
        students: usize,
        /// Seconds of steady traffic after the handshakes.
        #[arg(long, default_value_t = 5.0)]
        duration: f64,
        #[arg(long)]
        gateway: Option<String>,
        #[arg(long, default_value_t = 500)]
        telemetry_ms: u64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Child process of the log crash test.
    #[command(hide = true)]
    LogTorture {
        #[arg(long)]
        dir: PathBuf,
    },
}

async fn gateway_for(addr: Option<String>, simulated: bool) -> Result<(String, Option<LocalGateway>), String> {
    match addr {
        Some(a) => Ok((a, None)),
        None => {
            let local = LocalGateway::start(simulated).await.map_err(|e| e.to_string())?;
            Ok((local.addr(), Some(local)))
        }
    }
}

async fn run(scenario: PathBuf, gateway: Option<String>) -> Result<bool, String> {
    let scenario = Scenario::load(&scenario).map_err(|e| e.to_string())?;
    let (addr, local) = gateway_for(gateway, scenario.clock == ClockMode::Simulated).await?;
    let result = run_scenario(&Api::new(&addr), &scenario).await;
    if let Some(l) = local {
        l.stop().await;
    }
    let report = result.map_err(|e| e.to_string())?;
    for a in &report.assertions {
        let mark = if a.passed { "PASS" } else { "FAIL" };
        if a.detail.is_empty() {
            println!("{mark} {}", a.name);
        } else {
            println!("{mark} {} ({})", a.name, a.detail);
        }
    }
    let failed = report.failures().count();
    println!(
        "{}: {} assertions, {} failed, {} frames observed, {:.2}s",
        report.name,
        report.assertions.len(),
        failed,
        report.signature.len(),
        report.wall.as_secs_f64()
    );
    Ok(failed == 0)
}

async fn load(
    students: usize,
    duration: f64,
    gateway: Option<String>,
    telemetry_ms: u64,
    seed: u64,
    json: bool,
) -> Result<bool, String> {
    if !(duration.is_finite() && duration >= 0.0) {
        return Err(format!("invalid duration {duration}"));
    }
    let (addr, local) = gateway_for(gateway, false).await?;
    let mut config = LoadConfig::new(students, Duration::from_secs_f64(duration));
    config.telemetry_every = Duration::from_millis(telemetry_ms.max(1));
    config.seed = seed;
    let result = load_run(&Api::new(&addr), &config).await;
    if let Some(l) = local {
        l.stop().await;
    }
    let r = result.map_err(|e| e.to_string())?;
    if json {
        println!("{}", serde_json::to_string_pretty(&r).unwrap_or_default());
    } else {
        match r.all_connected_ms {
            Some(ms) => println!("connected {}/{} in {ms:.1}ms", r.connected, r.students),
            None => println!("connected {}/{}", r.connected, r.students),
        }
        println!("join to connected  {}", r.join_to_connected);
        println!("round trip         {}", r.rtt);
        println!("healthz            {}", r.healthz);
        println!("telemetry sent     {}", r.telemetry_sent);
        println!(
            "violations         {} client, {} logged",
            r.client_violations.len(),
            r.logged_violations
        );
        for v in &r.client_violations {
            println!("  {v}");
        }
    }
    Ok(r.connected == r.students && r.violation_free())
}

fn main() -> ExitCode {
    let args = Args::parse();
    if let Cmd::LogTorture { dir } = &args.command {
        return match torture::append_forever(dir) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("log-torture: {e}");
                ExitCode::from(2)
            }
        };
    }
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .expect("tokio runtime");
    let outcome = runtime.block_on(async {
        match args.command {
            Cmd::Run { scenario, gateway } => run(scenario, gateway).await,
            Cmd::Load {
                students,
                duration,
                gateway,
                telemetry_ms,
                seed,
                json,
            } => load(students, duration, gateway, telemetry_ms, seed, json).await,
            Cmd::LogTorture { .. } => unreachable!("handled above"),
        }
    });
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("harness: {e}");
            ExitCode::from(2)
        }
    }
}
