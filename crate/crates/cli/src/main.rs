use clap::Parser;
use scrop_cli::{run, Cli, CliError};

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let err = CliError::Usage(e.to_string().trim().to_string());
            eprintln!("{}", err.to_json_line());
            std::process::exit(err.exit_code());
        }
    };
    match run(cli) {
        Ok(summary) => println!("{summary}"),
        Err(e) => {
            tracing::debug!(error = ?e, "command failed");
            eprintln!("{}", e.to_json_line());
            std::process::exit(e.exit_code());
        }
    }
}
